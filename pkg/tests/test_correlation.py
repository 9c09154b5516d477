"""Similarity-volume contracts against the quadruple-loop oracle."""

import numpy as np
import pytest

from flowdet.correlation import (
    CorrelationPyramid, MemoryBudgetError, build_pyramid, correlate_pair, dump_volume,
    load_volume_dump,
)
from flowdet.numerics import ShapeError, Tensor, check_gradients

import oracles


def random_pyramid(rng, base=8, channels=4, levels=3):
    return [Tensor(rng.standard_normal((base >> l, base >> l, channels))) for l in range(levels)]


class TestCorrelatePair:
    def test_unit_dot_product(self):
        a = np.zeros((2, 2, 2))
        b = np.zeros((2, 2, 2))
        a[0, 0] = (1.0, 0.0)
        b[1, 1] = (1.0, 0.0)
        vol = correlate_pair(Tensor(a), Tensor(b), scale=False)
        assert vol.values.data[0, 0, 1, 1] == 1.0

    def test_zero_input_zero_volume(self, rng):
        vol = correlate_pair(Tensor(np.zeros((3, 3, 2))), Tensor(rng.standard_normal((2, 2, 2))), scale=False)
        np.testing.assert_array_equal(vol.values.data, 0.0)

    def test_matches_quadruple_loop_oracle(self, rng):
        a = rng.standard_normal((4, 4, 3))
        b = rng.standard_normal((2, 2, 3))
        vol = correlate_pair(Tensor(a), Tensor(b), scale=False)
        ref = oracles.correlation_loops(a, b)
        err = np.abs(vol.values.data - ref) / np.maximum(np.abs(ref), 1e-30)
        assert err.max() <= 1e-12

    def test_scaling_divides_by_sqrt_channels(self, rng):
        a = rng.standard_normal((3, 3, 4))
        b = rng.standard_normal((3, 3, 4))
        unscaled = correlate_pair(Tensor(a), Tensor(b), scale=False).values.data
        scaled = correlate_pair(Tensor(a), Tensor(b), scale=True).values.data
        np.testing.assert_allclose(scaled, unscaled / 2.0, atol=1e-12)

    def test_bilinearity(self, rng):
        a = rng.standard_normal((3, 3, 2))
        b = rng.standard_normal((2, 2, 2))
        lhs = correlate_pair(Tensor(3.5 * a), Tensor(b), scale=False).values.data
        rhs = 3.5 * correlate_pair(Tensor(a), Tensor(b), scale=False).values.data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_swap_symmetry(self, rng):
        a = rng.standard_normal((3, 4, 2))
        b = rng.standard_normal((2, 2, 2))
        ab = correlate_pair(Tensor(a), Tensor(b), scale=False).values.data
        ba = correlate_pair(Tensor(b), Tensor(a), scale=False).values.data
        np.testing.assert_array_equal(ab, np.transpose(ba, (2, 3, 0, 1)))

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError, match="channel"):
            correlate_pair(Tensor(rng.standard_normal((2, 2, 3))), Tensor(rng.standard_normal((2, 2, 4))))

    def test_gradients(self, rng):
        report = check_gradients(
            lambda a, b: correlate_pair(a, b, scale=True).values,
            [rng.standard_normal((3, 3, 2)), rng.standard_normal((2, 2, 2))])
        assert report.ok(1e-4)


class TestBuildPyramid:
    def test_three_levels_give_nine_volumes(self, rng):
        pyr = build_pyramid(random_pyramid(rng), random_pyramid(rng))
        assert isinstance(pyr, CorrelationPyramid)
        assert len(pyr.volumes) == 9

    def test_extent_formula(self, rng):
        pyr = build_pyramid(random_pyramid(rng, base=8), random_pyramid(rng, base=8))
        assert pyr.volume(0, 2).shape == (8, 8, 2, 2)
        assert pyr.volume(2, 0).shape == (2, 2, 8, 8)
        # within fixed l, successive k volumes shrink their last two extents by 2
        for l in range(3):
            for k in range(2):
                h1, w1 = pyr.volume(l, k).shape[2:]
                h2, w2 = pyr.volume(l, k + 1).shape[2:]
                assert (h2, w2) == (h1 // 2, w1 // 2)

    def test_matches_oracle_on_all_pairs(self, rng):
        cur = random_pyramid(rng, base=8, channels=3)
        prev = random_pyramid(rng, base=8, channels=3)
        pyr = build_pyramid(cur, prev, scale=False)
        for (l, k), vol in pyr.volumes.items():
            ref = oracles.correlation_loops(cur[l].data, prev[k].data)
            err = np.abs(vol.values.data - ref) / np.maximum(np.abs(ref), 1e-30)
            assert err.max() <= 1e-12

    def test_identical_frames_orthonormal_features_peak_on_diagonal(self):
        # distinct one-hot feature per pixel: the self-match must dominate its row
        size, channels = 4, 16
        feat = np.zeros((size, size, channels))
        for i in range(size):
            for j in range(size):
                feat[i, j, i * size + j] = 1.0
        pyr = build_pyramid([Tensor(feat)], [Tensor(feat)], scale=False)
        vol = pyr.volume(0, 0).values.data
        for i in range(size):
            for j in range(size):
                row = vol[i, j]
                assert row[i, j] == row.max() == 1.0
                assert np.count_nonzero(row == 1.0) == 1

    def test_level_count_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError, match="level count"):
            build_pyramid(random_pyramid(rng), random_pyramid(rng)[:2])

    def test_non_halving_pyramid_rejected(self, rng):
        bad = [Tensor(rng.standard_normal((8, 8, 2))), Tensor(rng.standard_normal((5, 5, 2)))]
        with pytest.raises(ShapeError, match="extent"):
            build_pyramid(bad, bad)

    def test_memory_budget_enforced(self, rng):
        levels = random_pyramid(rng, base=8)
        with pytest.raises(MemoryBudgetError, match="budget"):
            build_pyramid(levels, levels, max_elements=100)


def test_volume_dump_roundtrip(tmp_path, rng):
    vol = correlate_pair(Tensor(rng.standard_normal((3, 4, 2))),
                         Tensor(rng.standard_normal((2, 3, 2))), scale=False)
    path = tmp_path / "volume.bin"
    dump_volume(vol, path)
    loaded = load_volume_dump(path)
    assert loaded.shape == (3, 4, 2, 3)
    np.testing.assert_array_equal(loaded, vol.values.data)
    raw = path.read_bytes()
    assert len(raw) == 16 + 8 * vol.values.size  # 4 uint32 extents + f8 payload
