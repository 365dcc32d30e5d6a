"""Deterministic SGD training of the toy classifier on a manifest dataset.

Plain cross-entropy, no momentum, fixed He-uniform init and a seeded shuffle
order, so the same (manifest, seed) pair always yields bit-identical weights.
"""

import hashlib
import json

import numpy as np

from .datasets import load_arrays
from .errors import InvalidArgumentError
from .network import build_toy_network, forward

DEFAULT_LR = 0.1
DEFAULT_BATCH = 2

# Bias-free ReLU nets on all-positive images are badly conditioned: full-rate
# steps are needed to take off, but keep kicking the net out of the solution
# once found. The schedule below holds the rate until train accuracy first
# clears the lock threshold at an epoch end, then decays geometrically, which
# settled every seed tried. Deterministic given (data, seed).
LOCK_ACCURACY = 0.9
DECAY_FACTOR = 0.4


def _softmax_rows(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _sgd_step(net, batch, labels, lr):
    trace = forward(net, batch)
    acts = trace.activations
    probs = _softmax_rows(trace.logits)
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    g /= len(labels)
    loss = -np.log(probs[np.arange(len(labels)), labels] + 1e-300).mean()
    updates = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.has_weight:
            updates.append((layer, layer.grad_weight(acts[i], g)))
        if i > 0:
            g = layer.backward(acts[i], acts[i + 1], g)
    for layer, gw in updates:
        layer.weight -= lr * gw
    return loss


def accuracy(net, images, labels, batch_size=32):
    hits = 0
    for start in range(0, len(images), batch_size):
        logits = forward(net, images[start : start + batch_size]).logits
        hits += int((logits.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return hits / len(images)


def train_toy(manifest, epochs=10, lr=DEFAULT_LR, seed=0, batch_size=DEFAULT_BATCH,
              progress=None):
    """Train a fresh toy network on ``manifest`` and return it.

    ``progress``, if given, is called with a status line after every epoch.
    The returned network's metadata records the config, its digest and the
    final train accuracy."""
    if len(manifest) == 0:
        raise InvalidArgumentError("manifest is empty")
    if not isinstance(epochs, (int, np.integer)) or epochs < 1:
        raise InvalidArgumentError(f"epochs must be an integer >= 1, got {epochs!r}")
    if lr <= 0:
        raise InvalidArgumentError(f"learning rate must be > 0, got {lr}")

    images, labels = load_arrays(manifest)
    channels = images.shape[1]
    net = build_toy_network(
        in_channels=channels, num_classes=len(manifest.classes), seed=seed
    )
    rng = np.random.default_rng(seed + 1)  # shuffle stream, separate from init
    n = len(images)
    current_lr = lr
    locked = False
    acc = 0.0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            losses.append(_sgd_step(net, images[idx], labels[idx], current_lr))
        acc = accuracy(net, images, labels)
        if progress:
            progress(
                f"epoch {epoch}/{epochs}  loss {np.mean(losses):.4f}  "
                f"acc {acc:.3f}  lr {current_lr:.2e}"
            )
        locked = locked or acc >= LOCK_ACCURACY
        if locked:
            current_lr *= DECAY_FACTOR
    config = {"epochs": int(epochs), "lr": float(lr), "batch_size": int(batch_size),
              "seed": int(seed), "samples": n}
    digest = hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()[:16]
    net.metadata.update(config)
    net.metadata["config_digest"] = digest
    net.metadata["final_train_accuracy"] = acc
    return net
