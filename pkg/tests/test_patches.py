import numpy as np
import pytest

from ucag.errors import InvalidArgumentError
from ucag.patches import duplication_matrix, fold_average, plan_grid, unfold
from ucag.tensor_ops import resize_bilinear


def coverage_oracle(grid):
    """Brute-force patch-membership count per pixel."""
    counts = np.zeros(grid.image, dtype=np.int64)
    ph, pw = grid.patch
    for r, c in grid.offsets:
        for i in range(r, r + ph):
            for j in range(c, c + pw):
                counts[i, j] += 1
    return counts


class TestPlanGrid:
    def test_exact_tiling(self):
        g = plan_grid((4, 4), 0.5, 2)
        assert g.patch == (2, 2)
        assert g.row_offsets == (0, 2) and g.col_offsets == (0, 2)
        assert g.offsets == ((0, 0), (0, 2), (2, 0), (2, 2))

    def test_reference_operating_point(self):
        g = plan_grid((224, 224), 0.555, 6)
        assert g.patch == (124, 124)
        assert g.row_offsets == (0, 20, 40, 60, 80, 100)

    def test_offset_formula(self):
        g = plan_grid((4, 4), 0.75, 2)
        assert g.patch == (3, 3)
        assert g.row_offsets == (0, 1)
        # direct evaluation of round(j * (H - H') / (n - 1))
        for length, rho, n in [(17, 0.4, 3), (31, 0.8, 5), (64, 0.555, 6)]:
            g = plan_grid((length, length), rho, n)
            ph = int(rho * length)
            expected = tuple(
                int(np.floor(j * (length - ph) / (n - 1) + 0.5)) for j in range(n)
            )
            assert g.row_offsets == expected
            assert g.row_offsets[0] == 0 and g.row_offsets[-1] == length - ph

    def test_scaled_size_avoids_float_noise(self):
        # 2.6 * 35 is exactly 91; the ceiling must not jump to 92.
        g = plan_grid((64, 64), 0.555, 6, alpha=2.6)
        assert g.patch == (35, 35)
        assert g.scaled == (91, 91)

    @pytest.mark.parametrize("rho,n", [(0.0, 2), (1.5, 2), (0.5, 0)])
    def test_bad_arguments(self, rho, n):
        with pytest.raises(InvalidArgumentError):
            plan_grid((8, 8), rho, n)

    def test_empty_patch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            plan_grid((4, 4), 0.1, 2)

    def test_uncoverable_grids_rejected(self):
        # A single patch smaller than the image can never reach full
        # coverage; neither can strides wider than the patch.
        with pytest.raises(InvalidArgumentError):
            plan_grid((8, 8), 0.5, 1)
        with pytest.raises(InvalidArgumentError):
            plan_grid((40, 40), 0.1, 2)
        plan_grid((8, 8), 1.0, 1)  # full-image single patch is fine


class TestUnfold:
    def test_tiling_crops(self):
        img = np.arange(16.0).reshape(1, 4, 4)
        ps = unfold(img, plan_grid((4, 4), 0.5, 2))
        assert ps.tensors.shape == (4, 1, 2, 2)
        np.testing.assert_array_equal(ps.tensors[0, 0], img[0, :2, :2])
        np.testing.assert_array_equal(ps.tensors[3, 0], img[0, 2:, 2:])

    def test_constant_image(self):
        ps = unfold(np.full((2, 6, 6), 1.5), plan_grid((6, 6), 0.5, 3, alpha=2.0))
        np.testing.assert_allclose(ps.tensors, 1.5, atol=1e-12)

    def test_crop_then_upscale_matches_oracles(self, rng):
        img = np.arange(16.0).reshape(1, 4, 4) + rng.normal(size=(1, 4, 4))
        grid = plan_grid((4, 4), 0.75, 2, alpha=2.0)
        ps = unfold(img, grid)
        assert ps.tensors.shape == (4, 1, 6, 6)
        for k, (r, c) in enumerate(grid.offsets):
            crop = img[:, r : r + 3, c : c + 3]
            np.testing.assert_allclose(
                ps.tensors[k], resize_bilinear(crop, (6, 6)), atol=1e-13
            )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            unfold(np.zeros((1, 5, 5)), plan_grid((4, 4), 0.5, 2))


class TestDuplicationMatrix:
    def test_disjoint_tiles(self):
        counts = duplication_matrix(plan_grid((4, 4), 0.5, 2))
        np.testing.assert_array_equal(counts, np.ones((4, 4), dtype=np.int64))

    def test_axis_counts_outer_product(self):
        g = plan_grid((4, 4), 0.75, 2)  # per-axis coverage [1, 2, 2, 1]
        axis = np.array([1, 2, 2, 1])
        np.testing.assert_array_equal(duplication_matrix(g), np.outer(axis, axis))

    def test_brute_force_oracle(self, rng):
        done = 0
        while done < 10:
            size = int(rng.integers(5, 40))
            rho = float(rng.uniform(0.2, 1.0))
            n = int(rng.integers(1, 5))
            try:
                g = plan_grid((size, size), rho, n)
            except InvalidArgumentError:
                continue
            np.testing.assert_array_equal(duplication_matrix(g), coverage_oracle(g))
            done += 1

    def test_reference_grid_bounds(self):
        g = plan_grid((224, 224), 0.555, 6)
        counts = duplication_matrix(g)
        assert counts.min() >= 1
        assert counts.max() <= 36
        assert counts.sum() == 36 * 124 * 124
        np.testing.assert_array_equal(counts, coverage_oracle(g))


class TestFoldAverage:
    def test_round_trip_identity(self, rng):
        img = rng.normal(size=(1, 7, 9))
        grid = plan_grid((7, 9), 0.6, 3)
        crops = unfold(img, grid).tensors[:, 0]
        assert np.abs(fold_average(crops, grid) - img[0]).max() < 1e-12

    def test_all_ones_cancel_counts(self):
        grid = plan_grid((5, 5), 0.8, 2)
        maps = np.ones((4,) + grid.patch)
        np.testing.assert_allclose(fold_average(maps, grid), np.ones((5, 5)), atol=1e-12)

    def test_hand_scatter_oracle(self):
        # Row offsets {0, 1} with patch height 3 over length 4: per-axis
        # coverage [1, 2, 2, 1]. Constant maps 1 and 3 blend to [1, 2, 2, 3].
        grid = plan_grid((4, 4), 0.75, 2)
        maps = np.stack(
            [np.full(grid.patch, v) for v in (1.0, 1.0, 3.0, 3.0)]
        )  # rows: offset 0 -> 1, offset 1 -> 3
        out = fold_average(maps, grid)
        expected = np.tile(np.array([1.0, 2.0, 2.0, 3.0])[:, None], (1, 4))
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_linearity(self, rng):
        grid = plan_grid((8, 8), 0.5, 3)
        m1 = rng.normal(size=(9,) + grid.patch)
        m2 = rng.normal(size=(9,) + grid.patch)
        lhs = fold_average(2.0 * m1 - 3.0 * m2, grid)
        rhs = 2.0 * fold_average(m1, grid) - 3.0 * fold_average(m2, grid)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_order_invariance(self, rng):
        # Scattering (map, offset) pairs in any order gives the same field.
        grid = plan_grid((6, 6), 0.5, 2)
        maps = rng.normal(size=(4,) + grid.patch)
        ph, pw = grid.patch
        acc = np.zeros(grid.image)
        for k in reversed(range(4)):
            r, c = grid.offsets[k]
            acc[r : r + ph, c : c + pw] += maps[k]
        np.testing.assert_allclose(
            fold_average(maps, grid), acc / grid.counts, atol=1e-12
        )

    def test_wrong_count_rejected(self):
        grid = plan_grid((6, 6), 0.5, 2)
        with pytest.raises(InvalidArgumentError):
            fold_average(np.ones((3,) + grid.patch), grid)
