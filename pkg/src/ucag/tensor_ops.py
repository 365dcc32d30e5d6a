"""Dense-array primitives used everywhere else: bilinear resize, Gaussian
blur, softmax and min-max normalization.

Arrays are plain float64 numpy ndarrays, layout ``[..., H, W]`` with row-major
data. All functions are pure and thread-safe.
"""

import numpy as np

from .errors import InvalidArgumentError


def _as_float_array(t, name, min_rank=1):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < min_rank:
        raise InvalidArgumentError(f"{name} must have rank >= {min_rank}, got {t.ndim}")
    if t.size and not np.isfinite(t).all():
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return t


def _axis_coords(n_in, n_out):
    # Half-pixel centers: src = (dst + 0.5) * (in/out) - 0.5, clamped to borders.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(t, out_hw):
    """Resize the trailing two axes of ``t`` to ``out_hw = (h, w)``.

    Uses the half-pixel-center convention, so resizing to the same shape is
    the identity and every output value is a convex combination of inputs.
    Leading axes (channels, batch) are interpolated independently.
    """
    t = _as_float_array(t, "input", min_rank=2)
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise InvalidArgumentError(f"output shape must be >= 1x1, got {oh}x{ow}")
    h, w = t.shape[-2:]
    if (oh, ow) == (h, w):
        return t.copy()
    r0, r1, fr = _axis_coords(h, oh)
    c0, c1, fc = _axis_coords(w, ow)
    fr = fr.reshape((oh, 1))
    fc = fc.reshape((1, ow))
    top = t[..., r0[:, None], c0[None, :]] * (1.0 - fc) + t[..., r0[:, None], c1[None, :]] * fc
    bot = t[..., r1[:, None], c0[None, :]] * (1.0 - fc) + t[..., r1[:, None], c1[None, :]] * fc
    return top * (1.0 - fr) + bot * fr


def gaussian_kernel(ksize, sigma):
    """Normalized 1-D Gaussian kernel of odd length ``ksize``."""
    if ksize < 1 or ksize % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be odd and positive, got {ksize}")
    if sigma <= 0:
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    x = np.arange(ksize, dtype=np.float64) - ksize // 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_axis(t, kernel, axis):
    if t.shape[axis] == 1:
        # Reflection of a single sample is itself; a unit-sum kernel is a no-op.
        return t
    pad = len(kernel) // 2
    spec = [(0, 0)] * t.ndim
    spec[axis] = (pad, pad)
    padded = np.pad(t, spec, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return win @ kernel


def gaussian_blur(img, ksize, sigma):
    """Separable Gaussian blur over the trailing two axes.

    Borders use reflect padding (edge pixel not repeated), so a constant
    image stays constant and there is no darkening toward the frame. The
    kernel may be wider than the image; reflection just repeats.
    """
    img = _as_float_array(img, "image", min_rank=2)
    kernel = gaussian_kernel(ksize, sigma)
    out = _blur_axis(img, kernel, img.ndim - 2)
    return _blur_axis(out, kernel, out.ndim - 1)


def softmax(v):
    """Numerically stabilized softmax of a 1-D vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidArgumentError("softmax expects a nonempty 1-D vector")
    if not np.isfinite(v).all():
        raise InvalidArgumentError("softmax input contains NaN or Inf")
    z = np.exp(v - v.max())
    return z / z.sum()


def normalize_minmax(m):
    """Affine rescale to [0, 1]; a constant map maps to all zeros."""
    m = _as_float_array(m, "map", min_rank=1)
    lo = float(m.min())
    hi = float(m.max())
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)
