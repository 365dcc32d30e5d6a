"""A miniature convolutional classifier with explicit forward, gradient and
relevance passes, all in float64 numpy.

The stack is fixed small on purpose: 3x3 same-padding convolutions, ReLU,
2x2 max pooling, global average pooling and a final dense head, all without
bias terms. Bias-free layers keep the relevance propagation exactly
conserving (nothing is absorbed by constants), which is what the relevance
tests pin down.

Layers are stateless beyond their weights: every pass takes the activations
it needs as arguments, so one network can serve many threads at once.
"""

import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptModelError, InvalidArgumentError, UnsupportedVersionError

WEIGHT_MAGIC = b"UCAGNET1"
WEIGHT_VERSION = 1


def _stabilize(z, eps):
    # z + eps * sign(z), with sign(0) treated as +1.
    return z + eps * np.where(z >= 0.0, 1.0, -1.0)


# Cap on the unfolded-window buffer; larger batches are processed in chunks
# so the working set stays cache- and RAM-friendly.
_COLS_BUDGET = 32 * 1024 * 1024  # float64 elements, ~256 MB


def _batch_chunks(b, per_sample):
    step = max(1, int(_COLS_BUDGET // max(per_sample, 1)))
    for start in range(0, b, step):
        yield start, min(start + step, b)


def _im2col(x, k, pad):
    # (B, C, H, W) -> (B*OH*OW, C*k*k) for a stride-1 convolution.
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    b, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
    return cols, oh, ow


def _conv_same(x, weight):
    # Stride-1 cross-correlation with as much padding as keeps H, W fixed.
    b, c, h, w = x.shape
    f, _, k, _ = weight.shape
    wmat = weight.reshape(f, -1).T
    out = np.empty((b, f, h, w))
    for start, stop in _batch_chunks(b, h * w * c * k * k):
        cols, oh, ow = _im2col(x[start:stop], k, pad=k // 2)
        y = cols @ wmat
        out[start:stop] = y.reshape(stop - start, oh, ow, f).transpose(0, 3, 1, 2)
    return out


class Conv2D:
    """3x3, stride-1, pad-1 convolution without bias. Weight (F, C, 3, 3)."""

    kind = "conv"
    has_weight = True

    def __init__(self, weight):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 4 or weight.shape[2:] != (3, 3):
            raise InvalidArgumentError(f"conv weight must be (F, C, 3, 3), got {weight.shape}")
        self.weight = weight

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    def forward(self, x):
        return _conv_same(x, self.weight)

    def backward(self, x, y, gy):
        # Full correlation with 180-degree-rotated kernels, channel axes swapped.
        wrot = self.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return _conv_same(gy, wrot)

    def grad_weight(self, x, gy):
        b, c, h, w = x.shape
        f = self.weight.shape[0]
        gw = np.zeros((f, c * 9))
        for start, stop in _batch_chunks(b, h * w * c * 9):
            cols, _, _ = _im2col(x[start:stop], 3, pad=1)
            gmat = gy[start:stop].transpose(0, 2, 3, 1).reshape(-1, f)
            gw += gmat.T @ cols
        return gw.reshape(self.weight.shape)

    def relevance(self, x, y, r, eps):
        s = r / _stabilize(y, eps)
        return x * self.backward(x, y, s)


class ReLU:
    kind = "relu"
    has_weight = False

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, y, gy):
        return gy * (x > 0.0)

    def relevance(self, x, y, r, eps):
        # Relevance passes through rectifications unchanged.
        return r


class MaxPool2x2:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    kind = "pool"
    has_weight = False

    @staticmethod
    def _windows(x):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        win = x[:, :, : h2 * 2, : w2 * 2].reshape(b, c, h2, 2, w2, 2)
        return win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)

    def forward(self, x):
        if x.shape[2] < 2 or x.shape[3] < 2:
            raise InvalidArgumentError(f"input {x.shape[2]}x{x.shape[3]} too small to pool")
        return self._windows(x).max(axis=-1)

    def _route(self, x, upstream):
        # Send each output's upstream value to the first maximal input of
        # its window (row-major tie rule), zeros elsewhere.
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        scattered = np.zeros_like(win)
        np.put_along_axis(scattered, idx[..., None], upstream[..., None], axis=-1)
        b, c, h2, w2, _ = win.shape
        block = scattered.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        out = np.zeros_like(x)
        out[:, :, : h2 * 2, : w2 * 2] = block.reshape(b, c, h2 * 2, w2 * 2)
        return out

    def backward(self, x, y, gy):
        return self._route(x, gy)

    def relevance(self, x, y, r, eps):
        # Winner-take-all: the pixel that produced the max gets everything.
        return self._route(x, r)


class GlobalAvgPool:
    kind = "gap"
    has_weight = False

    def forward(self, x):
        return x.mean(axis=(2, 3))

    def backward(self, x, y, gy):
        h, w = x.shape[2:]
        return np.broadcast_to(gy[:, :, None, None] / (h * w), x.shape).copy()

    def relevance(self, x, y, r, eps):
        h, w = x.shape[2:]
        s = r / _stabilize(y, eps)
        return x * s[:, :, None, None] / (h * w)


class Dense:
    """Bias-free linear head on pooled features. Weight (K, C)."""

    kind = "dense"
    has_weight = True

    def __init__(self, weight):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2:
            raise InvalidArgumentError(f"dense weight must be (K, C), got {weight.shape}")
        self.weight = weight

    def forward(self, x):
        return x @ self.weight.T

    def backward(self, x, y, gy):
        return gy @ self.weight

    def grad_weight(self, x, gy):
        return gy.T @ x

    def relevance(self, x, y, r, eps):
        s = r / _stabilize(y, eps)
        return x * (s @ self.weight)


@dataclass(eq=False)
class Network:
    """Ordered layer stack plus identification metadata.

    ``layer_ids`` names each layer ("conv1", "relu1", ..., "dense"); the ids
    are the handles used to pick gradient targets and persist weights.
    """

    layers: list
    layer_ids: list
    num_classes: int
    in_channels: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        _validate_structure(self)

    def layer_index(self, layer_id):
        try:
            return self.layer_ids.index(layer_id)
        except ValueError:
            raise InvalidArgumentError(
                f"unknown layer {layer_id!r}; known: {', '.join(self.layer_ids)}"
            ) from None

    @property
    def cam_layer(self):
        """Default CAM target: the activation feeding global average pooling."""
        gap_idx = next(i for i, l in enumerate(self.layers) if l.kind == "gap")
        return self.layer_ids[gap_idx - 1]


def _validate_structure(net):
    if len(net.layers) != len(net.layer_ids) or len(set(net.layer_ids)) != len(net.layer_ids):
        raise InvalidArgumentError("layers and layer_ids must align and ids be unique")
    kinds = [l.kind for l in net.layers]
    if kinds.count("conv") < 1:
        raise InvalidArgumentError("network needs at least one convolution")
    if kinds[-2:] != ["gap", "dense"]:
        raise InvalidArgumentError("network must end with global-average-pool then dense")
    if kinds.count("dense") != 1:
        raise InvalidArgumentError("network must contain exactly one dense layer")
    channels = net.in_channels
    for layer in net.layers:
        if layer.kind == "conv":
            if layer.in_channels != channels:
                raise InvalidArgumentError(
                    f"conv expects {layer.in_channels} channels, gets {channels}"
                )
            channels = layer.out_channels
    dense = net.layers[-1]
    if dense.weight.shape != (net.num_classes, channels):
        raise InvalidArgumentError(
            f"dense weight {dense.weight.shape} does not match "
            f"({net.num_classes}, {channels})"
        )


def build_toy_network(in_channels=3, num_classes=2, seed=0, conv_channels=(16, 32, 64)):
    """He-uniform-initialized conv stack, each conv followed by relu and a
    2x2 pool: conv16-pool-conv32-pool-conv64-pool-gap-dense.

    Deterministic per seed. Three poolings leave the activation entering the
    global average (the default saliency target) at one eighth of the input
    resolution, so feature-level maps are genuinely coarse."""
    rng = np.random.default_rng(seed)
    layers, ids = [], []
    channels = in_channels
    for i, out_c in enumerate(conv_channels, start=1):
        limit = math.sqrt(6.0 / (channels * 9))
        layers.append(Conv2D(rng.uniform(-limit, limit, size=(out_c, channels, 3, 3))))
        ids.append(f"conv{i}")
        layers.append(ReLU())
        ids.append(f"relu{i}")
        layers.append(MaxPool2x2())
        ids.append(f"pool{i}")
        channels = out_c
    layers.append(GlobalAvgPool())
    ids.append("gap")
    limit = math.sqrt(6.0 / channels)
    layers.append(Dense(rng.uniform(-limit, limit, size=(num_classes, channels))))
    ids.append("dense")
    return Network(
        layers=layers,
        layer_ids=ids,
        num_classes=num_classes,
        in_channels=in_channels,
        metadata={"seed": int(seed)},
    )


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Per-layer activations of one forward pass. ``activations[0]`` is the
    input batch; ``activations[i + 1]`` is the output of layer ``i``."""

    activations: tuple

    @property
    def logits(self):
        return self.activations[-1]

    @property
    def batch_size(self):
        return self.activations[0].shape[0]


def forward(net, batch):
    """Run ``batch`` (B, C, H, W) through the network, capturing every layer
    boundary. Any resolution >= 4x4 works; pooling and the global average
    absorb the difference."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4:
        raise InvalidArgumentError(f"expected (B, C, H, W), got rank {batch.ndim}")
    if batch.shape[1] != net.in_channels:
        raise InvalidArgumentError(
            f"network expects {net.in_channels} channels, got {batch.shape[1]}"
        )
    if not np.isfinite(batch).all():
        raise InvalidArgumentError("batch contains NaN or Inf")
    acts = [batch]
    for layer in net.layers:
        acts.append(layer.forward(acts[-1]))
    return ForwardTrace(activations=tuple(acts))


def forward_from(net, layer_id, activation):
    """Resume a forward pass with ``activation`` standing in for the stored
    output of ``layer_id``; returns the logits. Used by the gradient checks."""
    start = net.layer_index(layer_id) + 1
    a = np.asarray(activation, dtype=np.float64)
    for layer in net.layers[start:]:
        a = layer.forward(a)
    return a


def grad_wrt_activation(net, trace, class_k, layer_id):
    """Exact reverse-mode gradient of the pre-softmax logit ``class_k`` with
    respect to the output of ``layer_id``, shaped like that activation
    (batch axis kept)."""
    _check_class(net, class_k)
    idx = net.layer_index(layer_id)
    if idx >= len(net.layers) - 1:
        raise InvalidArgumentError("gradient target must precede the dense head")
    acts = trace.activations
    g = np.zeros_like(acts[-1])
    g[:, class_k] = 1.0
    for i in range(len(net.layers) - 1, idx, -1):
        g = net.layers[i].backward(acts[i], acts[i + 1], g)
    return g


def lrp_propagate(net, trace, class_k, epsilon, return_layers=False):
    """Backward relevance pass for ``class_k``.

    Relevance starts as the one-hot logit vector and flows through each layer
    by the epsilon-stabilized proportional rule; rectifications pass it
    through, pooling routes it to the winning pixel. Layer sums are conserved
    up to terms that vanish with ``epsilon``. Returns input-shaped relevance
    (batch axis kept); with ``return_layers`` also the relevance at every
    layer boundary, output first.
    """
    _check_class(net, class_k)
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be > 0, got {epsilon}")
    acts = trace.activations
    r = np.zeros_like(acts[-1])
    r[:, class_k] = acts[-1][:, class_k]
    collected = [r]
    for i in range(len(net.layers) - 1, -1, -1):
        r = net.layers[i].relevance(acts[i], acts[i + 1], r, epsilon)
        collected.append(r)
    if return_layers:
        return r, collected
    return r


def _check_class(net, class_k):
    if not 0 <= class_k < net.num_classes:
        raise InvalidArgumentError(
            f"class index {class_k} out of range [0, {net.num_classes})"
        )


# ---------------------------------------------------------------------------
# Persistence: magic, length-prefixed canonical-JSON header, raw little-endian
# float64 weights in declaration order, CRC32 of the float section.
# ---------------------------------------------------------------------------

_LAYER_CLASSES = {
    "conv": Conv2D,
    "relu": ReLU,
    "pool": MaxPool2x2,
    "gap": GlobalAvgPool,
    "dense": Dense,
}


def _header_dict(net):
    arch = []
    for lid, layer in zip(net.layer_ids, net.layers):
        entry = {"id": lid, "kind": layer.kind}
        if layer.has_weight:
            entry["shape"] = list(layer.weight.shape)
        arch.append(entry)
    return {
        "version": WEIGHT_VERSION,
        "arch": arch,
        "num_classes": net.num_classes,
        "in_channels": net.in_channels,
        "seed": net.metadata.get("seed"),
        "metadata": net.metadata,
    }


def save_weights(net, path):
    header = json.dumps(_header_dict(net), sort_keys=True, separators=(",", ":")).encode()
    floats = b"".join(
        np.ascontiguousarray(l.weight, dtype="<f8").tobytes()
        for l in net.layers
        if l.has_weight
    )
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(len(header).to_bytes(4, "little"))
        f.write(header)
        f.write(floats)
        f.write(zlib.crc32(floats).to_bytes(4, "little"))


def load_weights(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(WEIGHT_MAGIC) + 4 or blob[: len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise CorruptModelError(f"{path}: not a {WEIGHT_MAGIC.decode()} weight file")
    pos = len(WEIGHT_MAGIC)
    hlen = int.from_bytes(blob[pos : pos + 4], "little")
    pos += 4
    if len(blob) < pos + hlen + 4:
        raise CorruptModelError(f"{path}: truncated header")
    try:
        header = json.loads(blob[pos : pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptModelError(f"{path}: unreadable header ({e})") from e
    pos += hlen
    if header.get("version") != WEIGHT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: version {header.get('version')!r}, expected {WEIGHT_VERSION}"
        )
    floats = blob[pos:-4]
    stored_crc = int.from_bytes(blob[-4:], "little")
    if zlib.crc32(floats) != stored_crc:
        raise CorruptModelError(f"{path}: weight checksum mismatch")
    layers, ids, offset = [], [], 0
    for entry in header["arch"]:
        cls = _LAYER_CLASSES.get(entry["kind"])
        if cls is None:
            raise CorruptModelError(f"{path}: unknown layer kind {entry['kind']!r}")
        if entry.get("shape"):
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape)) * 8
            if offset + nbytes > len(floats):
                raise CorruptModelError(f"{path}: truncated weight section")
            w = np.frombuffer(floats[offset : offset + nbytes], dtype="<f8").reshape(shape)
            offset += nbytes
            layers.append(cls(w.astype(np.float64)))
        else:
            layers.append(cls())
        ids.append(entry["id"])
    if offset != len(floats):
        raise CorruptModelError(f"{path}: trailing bytes in weight section")
    return Network(
        layers=layers,
        layer_ids=ids,
        num_classes=int(header["num_classes"]),
        in_channels=int(header["in_channels"]),
        metadata=dict(header.get("metadata") or {}),
    )
