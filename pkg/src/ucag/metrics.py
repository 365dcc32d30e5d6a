"""Evaluation protocols for saliency maps: perturbation curves (deletion and
insertion AUC), the pointing game and its energy-based variant, masked map
densities, threshold-sweep segmentation scores, a resolution sweep, and a
manifest-level benchmark runner.

Determinism rules used throughout: pixel ranking breaks ties by smallest
row-major index, the pointing-game argmax does the same, and the benchmark
runner assembles per-sample results in manifest order no matter how many
workers computed them.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ppm
from .errors import InvalidArgumentError, UndefinedDensityError
from .explainers import ExplainerSpec, explain
from .network import forward
from .pipeline import UcagParams, ucag_explain
from .tensor_ops import gaussian_blur, normalize_minmax, resize_bilinear

METRIC_NAMES = ("deletion", "insertion", "pg", "ebpg", "density", "seg")
MASK_METRICS = ("pg", "ebpg", "seg")


@dataclass
class PerturbationConfig:
    """Deletion/insertion settings: fraction of pixels flipped per step, the
    blur used as the insertion start point, and the forward batch size."""

    step_fraction: float = 0.01
    blur_ksize: int = 51
    blur_sigma: float = 50.0
    batch: int = 32

    def __post_init__(self):
        if not 0.0 < self.step_fraction <= 1.0:
            raise InvalidArgumentError(
                f"step_fraction must be in (0, 1], got {self.step_fraction}"
            )


@dataclass
class EvalRecord:
    """One sample's metric outcomes for one variant. Unselected metrics stay
    None and are dropped from the serialized form."""

    sample: str
    variant: str
    deletion_auc: float | None = None
    insertion_auc: float | None = None
    pg_hit: bool | None = None
    ebpg: float | None = None
    density_pos: float | None = None
    density_neg: float | None = None
    ap: float | None = None
    pixel_acc: float | None = None

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _class_probs(net, images, class_k, batch):
    """Softmax probability of ``class_k`` for a stack of images, computed in
    forward chunks."""
    out = np.empty(len(images))
    for start in range(0, len(images), batch):
        logits = forward(net, images[start : start + batch]).logits
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        out[start : start + len(logits)] = z[:, class_k] / z.sum(axis=1)
    return out


def _rank_pixels(values):
    # Descending saliency; equal scores keep row-major order (stable sort).
    return np.argsort(-values.ravel(), kind="stable")


def _step_counts(total, step_fraction):
    per_step = max(1, int(round(step_fraction * total)))
    counts = list(range(0, total, per_step))
    if counts[-1] != total:
        counts.append(total)
    return np.asarray(counts)


def _trapezoid(x, y):
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) * 0.5))


def _perturbation_curve(net, start, target, order, counts, class_k, batch):
    # Walk the ranking, replacing pixels of `start` with `target`, and record
    # the class probability after every step (step 0 = untouched start).
    c, h, w = start.shape
    flat_start = start.reshape(c, -1)
    flat_target = target.reshape(c, -1)
    stages = np.empty((len(counts), c, h * w))
    current = flat_start.copy()
    prev = 0
    for i, k in enumerate(counts):
        sel = order[prev:k]
        current[:, sel] = flat_target[:, sel]
        stages[i] = current
        prev = k
    probs = _class_probs(net, stages.reshape(len(counts), c, h, w), class_k, batch)
    return probs


def deletion_insertion(net, image, smap, class_k, cfg=None):
    """Deletion and insertion AUCs for one map.

    Deletion starts from the image and blanks pixels to zero in decreasing
    saliency order; insertion starts from a heavily blurred copy and restores
    pixels in the same order. Class probability is integrated (trapezoid)
    over the fraction of pixels touched."""
    cfg = cfg or PerturbationConfig()
    image = np.asarray(image, dtype=np.float64)
    values = np.asarray(smap.values, dtype=np.float64)
    if values.shape != image.shape[1:]:
        raise InvalidArgumentError(
            f"map {values.shape} does not match image {image.shape[1:]}"
        )
    order = _rank_pixels(values)
    counts = _step_counts(values.size, cfg.step_fraction)
    fractions = counts / values.size
    deletion = _perturbation_curve(
        net, image, np.zeros_like(image), order, counts, class_k, cfg.batch
    )
    blurred = gaussian_blur(image, cfg.blur_ksize, cfg.blur_sigma)
    insertion = _perturbation_curve(
        net, blurred, image, order, counts, class_k, cfg.batch
    )
    return _trapezoid(fractions, deletion), _trapezoid(fractions, insertion)


def _region_mask(region, shape):
    region_arr = np.asarray(region)
    if region_arr.dtype == bool:
        if region_arr.shape != shape:
            raise InvalidArgumentError(
                f"mask {region_arr.shape} does not match map {shape}"
            )
        return region_arr
    if region_arr.shape == (4,):
        r0, c0, r1, c1 = (int(v) for v in region_arr)
        mask = np.zeros(shape, dtype=bool)
        mask[max(r0, 0) : r1, max(c0, 0) : c1] = True
        return mask
    raise InvalidArgumentError("region must be a boolean mask or a (r0,c0,r1,c1) box")


def pointing_game(smap, region):
    """True iff the map's maximum (first in row-major order on ties) falls
    inside ``region`` (boolean mask or half-open box)."""
    values = np.asarray(smap.values, dtype=np.float64)
    mask = _region_mask(region, values.shape)
    if not mask.any():
        raise InvalidArgumentError("pointing-game region is empty")
    peak = np.unravel_index(int(np.argmax(values)), values.shape)
    return bool(mask[peak])


def energy_pointing_game(smap, mask):
    """Fraction of (positive-clamped) saliency mass inside the mask; 0 when
    the clamped map is all zero."""
    values = np.asarray(smap.values, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.shape != values.shape:
        raise InvalidArgumentError("mask must be boolean and map-sized")
    pos = np.maximum(values, 0.0)
    total = pos.sum()
    if total == 0.0:
        return 0.0
    return float(pos[mask].sum() / total)


def masked_class_density(net, image, mask_weights, class_k, batch=32):
    """Class probability of the mask-attenuated image, normalized by the
    mask's mean coverage: p(image * M) * (h * w) / sum(M)."""
    image = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask_weights, dtype=np.float64)
    if m.shape != image.shape[1:]:
        raise InvalidArgumentError(f"mask {m.shape} does not match image {image.shape[1:]}")
    total = float(m.sum())
    if total == 0.0:
        raise UndefinedDensityError("mask weight sums to zero")
    p = _class_probs(net, (image * m)[None], class_k, batch)[0]
    return float(p) * m.size / total


def map_density(net, image, smap, class_k, batch=32):
    """Positive and negative map density: min-max-normalize the map to M,
    then score the M-masked and (1-M)-masked images, each normalized by its
    mask mass. Degenerate masks raise UndefinedDensityError."""
    m = normalize_minmax(np.asarray(smap.values, dtype=np.float64))
    d_pos = masked_class_density(net, image, m, class_k, batch)
    d_neg = masked_class_density(net, image, 1.0 - m, class_k, batch)
    return d_pos, d_neg


def segmentation_scores(smap, mask):
    """Average precision of the thresholded map against a binary mask, plus
    pixel accuracy at the map-mean threshold.

    The precision-recall curve sweeps every distinct normalized saliency
    value as a threshold (pixels >= threshold predicted foreground); AP is
    the standard step integral sum((R_i - R_{i-1}) * P_i)."""
    values = np.asarray(smap.values, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.shape != values.shape:
        raise InvalidArgumentError("mask must be boolean and map-sized")
    positives = int(mask.sum())
    if positives == 0:
        raise InvalidArgumentError("segmentation mask is empty")
    m = normalize_minmax(values).ravel()
    truth = mask.ravel()
    order = np.argsort(-m, kind="stable")
    sorted_vals = m[order]
    tp_cum = np.cumsum(truth[order])
    # Last index of each distinct-value run = the prediction set at that threshold.
    boundary = np.nonzero(np.diff(sorted_vals))[0]
    idx = np.concatenate([boundary, [m.size - 1]])
    tp = tp_cum[idx].astype(np.float64)
    npred = (idx + 1).astype(np.float64)
    precision = tp / npred
    recall = tp / positives
    ap = float(np.sum(np.diff(recall, prepend=0.0) * precision))
    pred = m >= m.mean()
    pixel_acc = float(np.mean(pred == truth))
    return ap, pixel_acc


def resolution_sweep(net, spec, samples, scales, cfg=None):
    """Run the base explainer on upscaled copies of each image and score the
    downscaled map on the original: one (alpha, mean deletion AUC, mean
    insertion AUC) row per scale.

    ``samples`` is a sequence of (image, class_k) pairs; ``scales`` are the
    upscale factors (>= 1). alpha = 1 reproduces the plain game scores."""
    cfg = cfg or PerturbationConfig()
    scales = list(scales)
    if not scales:
        raise InvalidArgumentError("scale list is empty")
    if any(s < 1 for s in scales):
        raise InvalidArgumentError(f"scales must be >= 1, got {scales}")
    rows = []
    for alpha in scales:
        dels, inss = [], []
        for image, class_k in samples:
            h, w = image.shape[1:]
            up = resize_bilinear(image, (round(alpha * h), round(alpha * w)))
            smap = explain(spec, net, up, class_k)
            down = type(smap)(
                values=resize_bilinear(smap.values, (h, w)),
                class_k=class_k,
                kind=smap.kind,
            )
            d, i = deletion_insertion(net, image, down, class_k, cfg)
            dels.append(d)
            inss.append(i)
        rows.append((float(alpha), float(np.mean(dels)), float(np.mean(inss))))
    return rows


# ---------------------------------------------------------------------------
# Manifest-level benchmark
# ---------------------------------------------------------------------------


def _eval_one(net, spec, params, entry, manifest, metrics, cfg):
    image = ppm.to_tensor(ppm.read_ppm(manifest.image_path(entry)))
    class_k = entry.label
    mask_file = manifest.mask_path(entry)
    mask = ppm.load_mask(mask_file) if mask_file else None
    variants = {
        "base": explain(spec, net, image, class_k),
        "ucag": ucag_explain(net, params, image, class_k),
    }
    records = []
    for variant, smap in variants.items():
        rec = EvalRecord(sample=entry.image, variant=variant)
        if "deletion" in metrics or "insertion" in metrics:
            d, i = deletion_insertion(net, image, smap, class_k, cfg)
            if "deletion" in metrics:
                rec.deletion_auc = d
            if "insertion" in metrics:
                rec.insertion_auc = i
        if "pg" in metrics:
            region = mask if mask is not None else entry.bbox
            rec.pg_hit = pointing_game(smap, region)
        if "ebpg" in metrics:
            rec.ebpg = energy_pointing_game(smap, mask)
        if "density" in metrics:
            try:
                rec.density_pos, rec.density_neg = map_density(net, image, smap, class_k)
            except UndefinedDensityError:
                pass  # constant map: densities stay unset for this sample
        if "seg" in metrics:
            rec.ap, rec.pixel_acc = segmentation_scores(smap, mask)
        records.append(rec)
    return records


def evaluate_manifest(net, manifest, spec=None, params=None, metrics=METRIC_NAMES,
                      cfg=None, workers=1):
    """Score every manifest entry with the base explainer and the full
    unfold-and-conquer pipeline.

    Returns (records, summary): two EvalRecords per sample in manifest order
    (base first), and per-variant means over every computed metric. Results
    are assembled by sample index, so the worker count never changes them."""
    spec = spec or (params.explainer if params else None) or ExplainerSpec()
    params = params or UcagParams(explainer=spec)
    cfg = cfg or PerturbationConfig()
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise InvalidArgumentError(f"unknown metrics: {', '.join(unknown)}")
    needs_mask = [m for m in metrics if m in MASK_METRICS]
    if needs_mask and any(e.mask is None and e.bbox is None for e in manifest.entries):
        raise InvalidArgumentError(
            f"metrics {', '.join(needs_mask)} need masks, but some entries have none"
        )

    def job(entry):
        return _eval_one(net, spec, params, entry, manifest, metrics, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sample = list(pool.map(job, manifest.entries))
    else:
        per_sample = [job(e) for e in manifest.entries]
    records = [rec for pair in per_sample for rec in pair]

    summary = {"samples": len(manifest.entries), "metrics": list(metrics), "variants": {}}
    for variant in ("base", "ucag"):
        chosen = [r.to_dict() for r in records if r.variant == variant]
        means = {}
        for key in ("deletion_auc", "insertion_auc", "pg_hit", "ebpg",
                    "density_pos", "density_neg", "ap", "pixel_acc"):
            vals = [float(r[key]) for r in chosen if key in r]
            if vals:
                means[key] = float(np.mean(vals))
        summary["variants"][variant] = means
    return records, summary
