"""Pluggable saliency backends: the gradient-weighted class-activation family
and epsilon-rule relevance propagation.

Every backend returns an image-sized, signed, *unnormalized* map; CAM methods
rectify (so their maps are >= 0) and upsample from feature resolution here,
relevance maps stay at input resolution and keep their sign.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UcagError
from .network import forward, grad_wrt_activation, lrp_propagate
from .tensor_ops import resize_bilinear

CAM_METHODS = ("gradcam", "gradcam-pp", "xgradcam", "wgradcam")
METHODS = CAM_METHODS + ("lrp-eps",)


@dataclass
class ExplainerSpec:
    """Which backend to run and its knobs.

    ``layer`` picks the CAM target activation (default: the one feeding
    global average pooling); ``epsilon`` is the relevance stabilizer."""

    method: str = "gradcam"
    layer: str | None = None
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(
                f"unknown method {self.method!r}; choose from {', '.join(METHODS)}"
            )
        if self.method == "lrp-eps" and self.epsilon <= 0:
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(eq=False)
class SaliencyMap:
    """Signed per-pixel scores for one class over one image.

    ``kind`` is "cam" (rectified, channel-weighted activations) or
    "attribution" (signed relevance). ``diagnostics`` is advisory run info
    (per-patch logits, weights, offsets) and takes no part in any contract."""

    values: np.ndarray
    class_k: int
    kind: str
    diagnostics: dict | None = None

    @property
    def source_shape(self):
        return self.values.shape


def _coeff_gradcam(a, g):
    # Channel weight = spatial mean of the gradient.
    return g.mean(axis=(1, 2), keepdims=True)


def _coeff_gradcam_pp(a, g):
    # Second-order weighting: alpha = g^2 / (2 g^2 + sum(A) g^3), channel
    # weight = sum(alpha * relu(g)).
    g2 = g * g
    denom = 2.0 * g2 + a.sum(axis=(1, 2), keepdims=True) * g2 * g
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0)
    return (alpha * np.maximum(g, 0.0)).sum(axis=(1, 2), keepdims=True)


def _coeff_xgradcam(a, g):
    # Gradients averaged with activation-proportional weights.
    norm = a.sum(axis=(1, 2), keepdims=True)
    scaled = np.divide(a, norm, out=np.zeros_like(a), where=norm != 0)
    return (scaled * g).sum(axis=(1, 2), keepdims=True)


def _coeff_wgradcam(a, g):
    # Element-wise positive-gradient weighting; sharper than a per-channel
    # scalar because each pixel keeps its own gradient.
    return np.maximum(g, 0.0)


_COEFF_RULES = {
    "gradcam": _coeff_gradcam,
    "gradcam-pp": _coeff_gradcam_pp,
    "xgradcam": _coeff_xgradcam,
    "wgradcam": _coeff_wgradcam,
}


def _explain_traced(spec, net, trace, class_k):
    h, w = trace.activations[0].shape[2:]
    if spec.method == "lrp-eps":
        rel = lrp_propagate(net, trace, class_k, spec.epsilon)[0]
        return SaliencyMap(values=rel.sum(axis=0), class_k=class_k, kind="attribution")
    layer = spec.layer or net.cam_layer
    acts = trace.activations[net.layer_index(layer) + 1]
    if acts.ndim != 4:
        raise InvalidArgumentError(f"layer {layer!r} has no spatial extent for CAM")
    a = acts[0]
    g = grad_wrt_activation(net, trace, class_k, layer)[0]
    weights = _COEFF_RULES[spec.method](a, g)
    fmap = np.maximum((weights * a).sum(axis=0), 0.0)
    return SaliencyMap(
        values=resize_bilinear(fmap, (h, w)), class_k=class_k, kind="cam"
    )


def explain(spec, net, image, class_k):
    """Run one backend on one (C, H, W) image for ``class_k``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise InvalidArgumentError(f"expected (C, H, W), got rank {image.ndim}")
    trace = forward(net, image[None])
    return _explain_traced(spec, net, trace, class_k)


def explain_patches(spec, net, patch_set, class_k):
    """Explain every patch of a PatchSet independently.

    Returns the per-patch maps (at the scaled patch resolution, unnormalized
    and unclipped) and the (n^2, K) logit matrix for confidence weighting.
    Each patch's result is bit-identical to ``explain`` on that patch alone."""
    maps, logits = [], []
    for j, patch in enumerate(patch_set.tensors):
        try:
            trace = forward(net, patch[None])
            maps.append(_explain_traced(spec, net, trace, class_k))
            logits.append(trace.logits[0])
        except UcagError as e:
            raise type(e)(f"patch {j}: {e}") from e
    return maps, np.stack(logits)
