"""Unfold-and-conquer saliency refinement.

Slice an image into overlapping upscaled patches, run any supported saliency
backend on each patch, weight the partial maps by per-patch class confidence,
and fold them back with coverage averaging. Ships with a desk-scale
convolutional classifier (explicit gradient and relevance passes), a synthetic
planted-pattern dataset with exact masks, and the full evaluation-metric
suite (deletion/insertion AUC, pointing games, map densities, segmentation
scores, resolution sweeps).
"""

from .errors import (
    CorruptModelError,
    FormatError,
    InvalidArgumentError,
    UcagError,
    UndefinedDensityError,
    UnsupportedVersionError,
)
from .tensor_ops import gaussian_blur, normalize_minmax, resize_bilinear, softmax
from .patches import PatchGrid, PatchSet, duplication_matrix, fold_average, plan_grid, unfold
from .network import (
    ForwardTrace,
    Network,
    build_toy_network,
    forward,
    forward_from,
    grad_wrt_activation,
    load_weights,
    lrp_propagate,
    save_weights,
)
from .datasets import DatasetManifest, ManifestEntry, gen_synthetic, load_manifest, save_manifest
from .training import train_toy
from .explainers import ExplainerSpec, SaliencyMap, explain, explain_patches
from .pipeline import UcagParams, aggregate_partials, confidence_weights, ucag_explain
from .metrics import (
    EvalRecord,
    PerturbationConfig,
    deletion_insertion,
    energy_pointing_game,
    evaluate_manifest,
    map_density,
    masked_class_density,
    pointing_game,
    resolution_sweep,
    segmentation_scores,
)

__version__ = "0.1.0"

__all__ = [
    "CorruptModelError",
    "DatasetManifest",
    "EvalRecord",
    "ExplainerSpec",
    "FormatError",
    "ForwardTrace",
    "InvalidArgumentError",
    "ManifestEntry",
    "Network",
    "PatchGrid",
    "PatchSet",
    "PerturbationConfig",
    "SaliencyMap",
    "UcagError",
    "UcagParams",
    "UndefinedDensityError",
    "UnsupportedVersionError",
    "aggregate_partials",
    "build_toy_network",
    "confidence_weights",
    "deletion_insertion",
    "duplication_matrix",
    "energy_pointing_game",
    "evaluate_manifest",
    "explain",
    "explain_patches",
    "fold_average",
    "forward",
    "forward_from",
    "gaussian_blur",
    "gen_synthetic",
    "grad_wrt_activation",
    "load_manifest",
    "load_weights",
    "lrp_propagate",
    "map_density",
    "masked_class_density",
    "normalize_minmax",
    "plan_grid",
    "pointing_game",
    "resize_bilinear",
    "resolution_sweep",
    "save_manifest",
    "save_weights",
    "segmentation_scores",
    "softmax",
    "train_toy",
    "ucag_explain",
    "unfold",
]
