"""Binary PPM (P6, maxval 255) reading/writing, mask loading, and heatmap
rendering. P6 is the only on-disk image format: bit-exact round trips with
zero codec dependencies."""

import numpy as np

from .errors import FormatError, InvalidArgumentError


def _read_token(blob, pos):
    # Skip whitespace and '#' comments, then read one ASCII token.
    n = len(blob)
    while pos < n:
        ch = blob[pos : pos + 1]
        if ch == b"#":
            while pos < n and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PPM header")
    return blob[start:pos], pos


def read_ppm(path):
    """Decode a binary P6 file into a (H, W, 3) uint8 array."""
    with open(path, "rb") as f:
        blob = f.read()
    magic, pos = _read_token(blob, 0)
    if magic != b"P6":
        raise FormatError(f"{path}: unsupported PPM magic {magic!r} (only binary P6)")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(blob, pos)
        if not tok.isdigit():
            raise FormatError(f"{path}: malformed header token {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: empty image {w}x{h}")
    pos += 1  # single whitespace after maxval
    data = blob[pos : pos + h * w * 3]
    if len(data) != h * w * 3:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(img, path):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidArgumentError(f"expected (H, W, 3) uint8, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(img).tobytes())


def to_tensor(img):
    """uint8 (H, W, 3) -> float64 (3, H, W) scaled to [0, 1]."""
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def from_tensor(t):
    """float64 (3, H, W) in [0, 1] -> uint8 (H, W, 3), clipped and rounded."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or t.shape[0] != 3:
        raise InvalidArgumentError(f"expected (3, H, W), got {t.shape}")
    return np.rint(np.clip(t, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def load_mask(path):
    """Boolean (H, W) mask: foreground where Rec.601 luminance > 127."""
    img = read_ppm(path).astype(np.float64)
    lum = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return lum > 127.0


def mask_to_image(mask):
    """Boolean mask -> black/white (H, W, 3) uint8."""
    m = np.asarray(mask, dtype=bool)
    img = np.zeros(m.shape + (3,), dtype=np.uint8)
    img[m] = 255
    return img


def render_heatmap(smap, mode="solo", base=None):
    """Render signed saliency as a diverging image: positive fades white to
    red, negative white to blue, scaled by the largest magnitude. ``overlay``
    alpha-blends 50/50 onto ``base`` (same height/width)."""
    values = np.asarray(getattr(smap, "values", smap), dtype=np.float64)
    if values.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D map, got shape {values.shape}")
    if mode not in ("solo", "overlay"):
        raise InvalidArgumentError(f"unknown render mode {mode!r}")
    peak = float(np.abs(values).max())
    t = values / peak if peak > 0 else np.zeros_like(values)
    fade = np.rint(255.0 * (1.0 - np.abs(t)))
    heat = np.empty(values.shape + (3,), dtype=np.float64)
    heat[..., 0] = np.where(t >= 0, 255.0, fade)
    heat[..., 1] = fade
    heat[..., 2] = np.where(t >= 0, fade, 255.0)
    if mode == "solo":
        return heat.astype(np.uint8)
    if base is None or base.shape[:2] != values.shape:
        raise InvalidArgumentError("overlay requires a base image of matching shape")
    return np.rint(0.5 * heat + 0.5 * base.astype(np.float64)).astype(np.uint8)
