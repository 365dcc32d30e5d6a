"""Synthetic planted-pattern datasets with exact ground-truth masks, plus the
JSON manifest that ties images, labels, masks and boxes together.

Each image is mid-gray noise with one class-specific oriented square-wave
texture pasted at a random position; the mask marks exactly the pasted
square, so localization metrics have a pixel-perfect reference.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import ppm
from .errors import InvalidArgumentError


@dataclass
class ManifestEntry:
    image: str
    label: int
    mask: str | None = None
    bbox: tuple | None = None  # (row0, col0, row1, col1), half-open


@dataclass
class DatasetManifest:
    entries: list
    classes: list
    image_shape: tuple  # (C, H, W)
    root: str = "."  # directory paths are relative to; not serialized

    def __len__(self):
        return len(self.entries)

    def image_path(self, entry):
        return os.path.join(self.root, entry.image)

    def mask_path(self, entry):
        return os.path.join(self.root, entry.mask) if entry.mask else None


def save_manifest(manifest, path):
    doc = {
        "classes": list(manifest.classes),
        "image_shape": list(manifest.image_shape),
        "entries": [
            {
                "image": e.image,
                "label": e.label,
                **({"mask": e.mask} if e.mask else {}),
                **({"bbox": list(e.bbox)} if e.bbox else {}),
            }
            for e in manifest.entries
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_manifest(path):
    with open(path) as f:
        doc = json.load(f)
    root = os.path.dirname(os.path.abspath(path))
    classes = list(doc["classes"])
    entries = []
    for raw in doc["entries"]:
        label = int(raw["label"])
        if not 0 <= label < len(classes):
            raise InvalidArgumentError(f"{path}: label {label} out of range")
        entry = ManifestEntry(
            image=raw["image"],
            label=label,
            mask=raw.get("mask"),
            bbox=tuple(raw["bbox"]) if raw.get("bbox") else None,
        )
        for rel in (entry.image, entry.mask):
            if rel and not os.path.exists(os.path.join(root, rel)):
                raise InvalidArgumentError(f"{path}: missing referenced file {rel}")
        entries.append(entry)
    return DatasetManifest(
        entries=entries,
        classes=classes,
        image_shape=tuple(int(x) for x in doc["image_shape"]),
        root=root,
    )


def _pattern(class_index, num_classes, side, period=4.0):
    # Oriented +/- square-wave grating; orientation steps with the class.
    theta = math.pi * class_index / num_classes
    u = np.arange(side, dtype=np.float64)
    proj = np.cos(theta) * u[:, None] + np.sin(theta) * u[None, :]
    wave = np.sin(2.0 * math.pi * proj / period)
    return 0.5 + 0.35 * np.where(wave >= 0, 1.0, -1.0)


def gen_synthetic(out_dir, classes=2, per_class=100, image_hw=(64, 64), noise=0.1,
                  pattern_side=None, seed=0):
    """Write ``classes * per_class`` images plus masks under ``out_dir`` and
    return the manifest (also saved as ``manifest.json``).

    Deterministic per seed: same seed, byte-identical files."""
    if classes < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {classes}")
    if per_class < 1:
        raise InvalidArgumentError(f"per_class must be >= 1, got {per_class}")
    if not 0.0 <= noise < 1.0:
        raise InvalidArgumentError(f"noise level must be in [0, 1), got {noise}")
    h, w = int(image_hw[0]), int(image_hw[1])
    side = int(pattern_side) if pattern_side else max(4, min(h, w) // 4)
    if side > h or side > w:
        raise InvalidArgumentError(f"pattern {side}px does not fit in {h}x{w}")
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    entries = []
    index = 0
    for label in range(classes):
        texture = _pattern(label, classes, side)
        for _ in range(per_class):
            img = 0.5 + noise * rng.standard_normal((h, w))
            r0 = int(rng.integers(0, h - side + 1))
            c0 = int(rng.integers(0, w - side + 1))
            img[r0 : r0 + side, c0 : c0 + side] = texture + noise * rng.standard_normal(
                (side, side)
            )
            np.clip(img, 0.0, 1.0, out=img)
            mask = np.zeros((h, w), dtype=bool)
            mask[r0 : r0 + side, c0 : c0 + side] = True

            img_rel = os.path.join("images", f"img_{index:04d}.ppm")
            mask_rel = os.path.join("masks", f"mask_{index:04d}.ppm")
            ppm.write_ppm(ppm.from_tensor(np.broadcast_to(img, (3, h, w))), os.path.join(out_dir, img_rel))
            ppm.write_ppm(ppm.mask_to_image(mask), os.path.join(out_dir, mask_rel))
            entries.append(
                ManifestEntry(
                    image=img_rel,
                    label=label,
                    mask=mask_rel,
                    bbox=(r0, c0, r0 + side, c0 + side),
                )
            )
            index += 1

    manifest = DatasetManifest(
        entries=entries,
        classes=[f"texture{round(180 * i / classes)}deg" for i in range(classes)],
        image_shape=(3, h, w),
        root=out_dir,
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def load_arrays(manifest, with_masks=False):
    """Materialize the manifest: images as (N, 3, H, W) float64 in [0, 1],
    labels as (N,), and optionally the boolean masks."""
    images, labels, masks = [], [], []
    for entry in manifest.entries:
        images.append(ppm.to_tensor(ppm.read_ppm(manifest.image_path(entry))))
        labels.append(entry.label)
        if with_masks:
            path = manifest.mask_path(entry)
            masks.append(ppm.load_mask(path) if path else None)
    x = np.stack(images)
    y = np.asarray(labels, dtype=np.int64)
    return (x, y, masks) if with_masks else (x, y)
