import numpy as np
import pytest

from ucag.network import Conv2D, Dense, GlobalAvgPool, MaxPool2x2, Network, ReLU


def center_conv(out_c, in_c, weights):
    """3x3 kernel with only the center tap set: acts as a 1x1 conv, so zero
    padding can never leak into the output."""
    w = np.zeros((out_c, in_c, 3, 3))
    w[:, :, 1, 1] = np.asarray(weights).reshape(out_c, in_c)
    return Conv2D(w)


def channel_mean_net(dense_rows=((1.0,), (-1.0,))):
    """conv(center taps, 3->1 summing channels) -> gap -> dense.

    Logits are linear in the image mean, which makes perturbation curves
    easy to reason about by hand."""
    conv = center_conv(1, 3, [1.0, 1.0, 1.0])
    dense = Dense(np.asarray(dense_rows, dtype=np.float64))
    return Network(
        layers=[conv, GlobalAvgPool(), dense],
        layer_ids=["conv1", "gap", "dense"],
        num_classes=len(dense_rows),
        in_channels=3,
    )


def zero_net(num_classes=2, in_channels=3):
    conv = Conv2D(np.zeros((4, in_channels, 3, 3)))
    dense = Dense(np.zeros((num_classes, 4)))
    return Network(
        layers=[conv, ReLU(), GlobalAvgPool(), dense],
        layer_ids=["conv1", "relu1", "gap", "dense"],
        num_classes=num_classes,
        in_channels=in_channels,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240807)
