"""Sliding-patch geometry: plan a grid of n x n overlapping crops, extract
and upscale them, count per-pixel coverage, and fold partial maps back with
coverage averaging.

Conventions (pinned so results are deterministic):
  * patch size floors:   ph = floor(rho * H)
  * offsets edge-pin:    off(j) = round_half_up(j * (H - ph) / (n - 1)),
    so the first patch starts at 0 and the last ends exactly at the image
    edge, guaranteeing full coverage.
  * upscaled size ceils: ceil(alpha * ph), evaluated after rounding away
    float noise (so alpha=2.6, ph=35 gives 91, not 92).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .tensor_ops import resize_bilinear


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _ceil_stable(x):
    return int(math.ceil(round(x, 9)))


def _axis_offsets(length, patch, n):
    if n == 1:
        return (0,)
    span = length - patch
    return tuple(_round_half_up(j * span / (n - 1)) for j in range(n))


def _axis_counts(length, patch, offsets):
    counts = np.zeros(length, dtype=np.int64)
    for off in offsets:
        counts[off : off + patch] += 1
    return counts


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Precomputed unfold plan for one image size.

    ``offsets`` holds the n^2 (row, col) crop anchors in row-major order;
    ``counts`` is the cached duplication matrix (how many patches cover each
    pixel). ``beta_target`` — the size partial maps are folded back at — is
    simply the patch size.
    """

    image: tuple
    patch: tuple
    n: int
    rho: float
    alpha: float
    scaled: tuple
    row_offsets: tuple
    col_offsets: tuple
    offsets: tuple
    counts: np.ndarray = field(repr=False)

    @property
    def beta_target(self):
        return self.patch

    @property
    def num_patches(self):
        return self.n * self.n


def plan_grid(image, rho, n, alpha=1.0):
    """Plan an ``n x n`` grid of crops of relative size ``rho`` over an
    ``image = (H, W)``, each later upscaled by ``alpha``."""
    h, w = int(image[0]), int(image[1])
    if h < 1 or w < 1:
        raise InvalidArgumentError(f"image size must be positive, got {h}x{w}")
    if not 0.0 < rho <= 1.0:
        raise InvalidArgumentError(f"rho must be in (0, 1], got {rho}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"n must be an integer >= 1, got {n!r}")
    if alpha < 1.0:
        raise InvalidArgumentError(f"alpha must be >= 1, got {alpha}")
    ph, pw = int(math.floor(rho * h)), int(math.floor(rho * w))
    if ph < 1 or pw < 1:
        raise InvalidArgumentError(f"rho={rho} yields an empty patch for image {h}x{w}")
    rows = _axis_offsets(h, ph, n)
    cols = _axis_offsets(w, pw, n)
    row_counts = _axis_counts(h, ph, rows)
    col_counts = _axis_counts(w, pw, cols)
    if row_counts.min() < 1 or col_counts.min() < 1:
        raise InvalidArgumentError(
            f"rho={rho}, n={n} cannot cover a {h}x{w} image: "
            "the patch stride exceeds the patch size"
        )
    counts = np.outer(row_counts, col_counts)
    return PatchGrid(
        image=(h, w),
        patch=(ph, pw),
        n=int(n),
        rho=float(rho),
        alpha=float(alpha),
        scaled=(_ceil_stable(alpha * ph), _ceil_stable(alpha * pw)),
        row_offsets=rows,
        col_offsets=cols,
        offsets=tuple((r, c) for r in rows for c in cols),
        counts=counts,
    )


@dataclass(eq=False)
class PatchSet:
    """The n^2 crops of one image, stacked as ``(n^2, C, sh, sw)``."""

    tensors: np.ndarray
    grid: PatchGrid


def unfold(img, grid):
    """Crop the planned patches out of ``img`` (shape ``(C, H, W)``) and
    upscale each to the grid's scaled size. Patch order is row-major by
    offset."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise InvalidArgumentError(f"expected a (C, H, W) image, got rank {img.ndim}")
    if img.shape[1:] != grid.image:
        raise InvalidArgumentError(
            f"image spatial shape {img.shape[1:]} does not match grid {grid.image}"
        )
    ph, pw = grid.patch
    crops = np.stack([img[:, r : r + ph, c : c + pw] for r, c in grid.offsets])
    if grid.scaled != grid.patch:
        crops = resize_bilinear(crops, grid.scaled)
    return PatchSet(tensors=crops, grid=grid)


def duplication_matrix(grid):
    """Per-pixel patch coverage counts, shape ``(H, W)``; always >= 1."""
    return grid.counts.copy()


def fold_average(maps, grid):
    """Scatter-add n^2 partial maps (each at the grid's patch size) at their
    offsets, then divide by the coverage counts. Output shape is the image
    size."""
    maps = np.asarray(maps, dtype=np.float64)
    ph, pw = grid.patch
    expected = (grid.num_patches, ph, pw)
    if maps.shape != expected:
        raise InvalidArgumentError(
            f"expected {expected[0]} maps of shape {ph}x{pw}, got {maps.shape}"
        )
    acc = np.zeros(grid.image, dtype=np.float64)
    for m, (r, c) in zip(maps, grid.offsets):
        acc[r : r + ph, c : c + pw] += m
    return acc / grid.counts
