import copy

import numpy as np
import pytest

from conftest import zero_net
from ucag.errors import InvalidArgumentError
from ucag.explainers import ExplainerSpec, explain, explain_patches
from ucag.network import (
    Conv2D,
    Dense,
    GlobalAvgPool,
    Network,
    ReLU,
    build_toy_network,
    forward,
    forward_from,
    lrp_propagate,
)
from ucag.patches import plan_grid, unfold


def two_channel_net(dense_row0=(0.8, 0.3), seed=0):
    """conv(3->2) + relu + gap + dense with a 4x4-capable receptive field;
    the CAM layer activation is a 2-channel map."""
    rng = np.random.default_rng(seed)
    conv = Conv2D(rng.normal(scale=0.5, size=(2, 3, 3, 3)))
    dense = Dense(np.array([list(dense_row0), [0.1, -0.4]]))
    return Network(
        layers=[conv, ReLU(), GlobalAvgPool(), dense],
        layer_ids=["conv1", "relu1", "gap", "dense"],
        num_classes=2,
        in_channels=3,
    )


class TestSpec:
    def test_unknown_method_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ExplainerSpec(method="scorecam")

    def test_bad_epsilon_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ExplainerSpec(method="lrp-eps", epsilon=0.0)


class TestCam:
    def test_zero_dense_gives_zero_map(self, rng):
        smap = explain(ExplainerSpec("gradcam"), zero_net(), rng.uniform(size=(3, 8, 8)), 0)
        np.testing.assert_array_equal(smap.values, np.zeros((8, 8)))
        assert smap.kind == "cam"

    def test_single_positive_weight_reproduces_channel(self, rng):
        # Only channel 0 feeds class 0: the map IS that activation, scaled by
        # the (uniform, positive) gradient.
        net = two_channel_net(dense_row0=(0.8, 0.0))
        img = rng.uniform(size=(3, 4, 4))
        trace = forward(net, img[None])
        a0 = trace.activations[net.layer_index("relu1") + 1][0, 0]
        smap = explain(ExplainerSpec("gradcam"), net, img, 0)
        np.testing.assert_array_equal(smap.values, (0.8 / 16.0) * a0)

    def test_gradcam_weights_match_channel_fd(self, rng):
        # Whole-channel nudges measure hw * w_c directly; the tail after the
        # CAM layer is linear, so central differences are exact.
        net = two_channel_net()
        img = rng.uniform(size=(3, 4, 4))
        trace = forward(net, img[None])
        a = trace.activations[net.layer_index("relu1") + 1]
        eps = 1e-5
        coeffs = []
        for c in range(2):
            bump = np.zeros_like(a)
            bump[0, c] = eps
            fp = forward_from(net, "relu1", a + bump)[0, 0]
            fm = forward_from(net, "relu1", a - bump)[0, 0]
            coeffs.append((fp - fm) / (2 * eps) / 16.0)
        smap = explain(ExplainerSpec("gradcam"), net, img, 0)
        expected = np.maximum(coeffs[0] * a[0, 0] + coeffs[1] * a[0, 1], 0.0)
        np.testing.assert_allclose(smap.values, expected, atol=1e-9)

    def test_scale_covariance(self, rng):
        net = two_channel_net()
        img = rng.uniform(size=(3, 6, 6))
        base = explain(ExplainerSpec("gradcam"), net, img, 0)
        scaled_net = copy.deepcopy(net)
        scaled_net.layers[-1].weight[0] *= 2.0
        scaled = explain(ExplainerSpec("gradcam"), scaled_net, img, 0)
        np.testing.assert_array_equal(scaled.values, 2.0 * base.values)
        assert np.argmax(scaled.values) == np.argmax(base.values)

    def test_cam_methods_nonnegative_and_image_sized(self, rng):
        net = build_toy_network(3, 2, seed=2)
        img = rng.uniform(size=(3, 20, 20))
        for method in ("gradcam", "gradcam-pp", "xgradcam", "wgradcam"):
            smap = explain(ExplainerSpec(method), net, img, 1)
            assert smap.values.shape == (20, 20)
            assert smap.values.min() >= 0.0
            assert smap.kind == "cam"

    def test_spatial_layer_required(self, rng):
        net = build_toy_network(3, 2, seed=0)
        with pytest.raises(InvalidArgumentError):
            explain(ExplainerSpec("gradcam", layer="gap"), net, rng.uniform(size=(3, 16, 16)), 0)

    def test_class_range_checked(self, rng):
        net = build_toy_network(3, 2, seed=0)
        with pytest.raises(InvalidArgumentError):
            explain(ExplainerSpec("gradcam"), net, rng.uniform(size=(3, 16, 16)), 5)


class TestLrp:
    def test_signed_and_matches_propagation(self, rng):
        net = build_toy_network(3, 2, seed=1)
        img = rng.uniform(size=(3, 16, 16))
        smap = explain(ExplainerSpec("lrp-eps", epsilon=1e-7), net, img, 0)
        assert smap.kind == "attribution"
        rel = lrp_propagate(net, forward(net, img[None]), 0, 1e-7)[0]
        np.testing.assert_array_equal(smap.values, rel.sum(axis=0))


class TestExplainPatches:
    def test_degenerate_grid_equals_whole_image(self, rng):
        net = build_toy_network(3, 2, seed=0)
        img = rng.uniform(size=(3, 16, 16))
        patch_set = unfold(img, plan_grid((16, 16), 1.0, 1))
        maps, logits = explain_patches(ExplainerSpec("gradcam"), net, patch_set, 1)
        whole = explain(ExplainerSpec("gradcam"), net, img, 1)
        assert len(maps) == 1
        np.testing.assert_array_equal(maps[0].values, whole.values)
        np.testing.assert_array_equal(logits[0], forward(net, img[None]).logits[0])

    def test_constant_image_identical_partials(self):
        net = build_toy_network(3, 2, seed=0)
        img = np.full((3, 16, 16), 0.4)
        patch_set = unfold(img, plan_grid((16, 16), 0.5, 2))
        maps, logits = explain_patches(ExplainerSpec("gradcam"), net, patch_set, 0)
        for m in maps[1:]:
            np.testing.assert_array_equal(m.values, maps[0].values)
        np.testing.assert_array_equal(logits, np.tile(logits[0], (4, 1)))

    def test_patch_independence_bitwise(self, rng):
        net = build_toy_network(3, 2, seed=4)
        img = rng.uniform(size=(3, 24, 24))
        patch_set = unfold(img, plan_grid((24, 24), 0.6, 2, alpha=1.5))
        maps, logits = explain_patches(ExplainerSpec("gradcam"), net, patch_set, 0)
        for j in range(4):
            solo = explain(ExplainerSpec("gradcam"), net, patch_set.tensors[j], 0)
            np.testing.assert_array_equal(maps[j].values, solo.values)

    def test_reference_settings_full_run(self, rng):
        # 36 patches at the reference operating point on a 224x224 image.
        net = build_toy_network(3, 2, seed=0)
        img = rng.uniform(size=(3, 224, 224))
        patch_set = unfold(img, plan_grid((224, 224), 0.555, 6, alpha=2.6))
        maps, logits = explain_patches(ExplainerSpec("gradcam"), net, patch_set, 0)
        assert len(maps) == 36
        assert logits.shape == (36, 2)
        assert all(m.values.shape == patch_set.tensors.shape[2:] for m in maps)
