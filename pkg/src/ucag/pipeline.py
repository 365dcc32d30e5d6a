"""Unfold-and-conquer orchestration: slice the image into overlapping
upscaled patches, explain each patch on its own, weight every partial map by
the model's confidence on that patch, rescale the weighted maps back to patch
size, and fold them into one image-sized map averaged by coverage.

The confidence weight is exp(softmax probability) of the target class, one
value per patch, so it always lies in (1, e]: patches that clearly contain
the class push their evidence harder without ever zeroing anyone out.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .explainers import ExplainerSpec, SaliencyMap, explain_patches
from .patches import fold_average, plan_grid, unfold
from .tensor_ops import resize_bilinear, softmax


@dataclass
class UcagParams:
    """Grid geometry plus the backend to run per patch. Defaults are the
    reference operating point (rho=0.555, n=6, alpha=2.6)."""

    rho: float = 0.555
    n: int = 6
    alpha: float = 2.6
    explainer: ExplainerSpec = field(default_factory=ExplainerSpec)


def confidence_weights(logits, class_k):
    """Per-patch weights y_j = exp(softmax(logits_j)[class_k]), each row
    treated independently. Every weight lies in (1, e]."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise InvalidArgumentError(f"expected (n^2, K) logits, got {logits.shape}")
    if not 0 <= class_k < logits.shape[1]:
        raise InvalidArgumentError(
            f"class index {class_k} out of range [0, {logits.shape[1]})"
        )
    return np.array([math.exp(softmax(row)[class_k]) for row in logits])


def aggregate_partials(partials, weights, grid):
    """Scale each partial map by its confidence weight, then resize from the
    upscaled patch resolution back to the grid's patch size. No normalization
    or clipping happens here: signed scores survive intact."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(partials) != grid.num_patches or weights.shape != (grid.num_patches,):
        raise InvalidArgumentError(
            f"expected {grid.num_patches} maps and weights, got "
            f"{len(partials)} and {weights.shape}"
        )
    out = []
    for smap, y in zip(partials, weights):
        values = np.asarray(getattr(smap, "values", smap), dtype=np.float64) * y
        out.append(resize_bilinear(values, grid.patch))
    return out


def ucag_explain(net, params, image, class_k):
    """Full unfold-explain-weight-fold pass over one (C, H, W) image.

    Returns an image-sized signed SaliencyMap whose ``diagnostics`` carry the
    per-patch logits, weights and grid offsets for inspection."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise InvalidArgumentError(f"expected (C, H, W), got rank {image.ndim}")
    grid = plan_grid(image.shape[1:], params.rho, params.n, params.alpha)
    patch_set = unfold(image, grid)
    partials, logits = explain_patches(params.explainer, net, patch_set, class_k)
    weights = confidence_weights(logits, class_k)
    folded = fold_average(np.stack(aggregate_partials(partials, weights, grid)), grid)
    return SaliencyMap(
        values=folded,
        class_k=class_k,
        kind=partials[0].kind,
        diagnostics={
            "patch_logits": logits,
            "weights": weights,
            "offsets": grid.offsets,
            "grid": {
                "rho": grid.rho,
                "n": grid.n,
                "alpha": grid.alpha,
                "patch": grid.patch,
                "scaled": grid.scaled,
            },
        },
    )
