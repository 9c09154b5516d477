"""Temporal-neck contracts: lookup windows, GRU updates, stream state."""

import numpy as np
import pytest

from flowdet import mstf
from flowdet.checkpoint import load_tensors, save_tensors
from flowdet.correlation import build_pyramid
from flowdet.mstf import FlowState, LookupConfig
from flowdet.numerics import ShapeError, Tensor, check_gradients

import oracles

SHAPES = [(8, 8, 4), (4, 4, 4), (2, 2, 4)]


def make_pyramid(rng, shapes=None, scale=0.5):
    return [Tensor(rng.standard_normal(s) * scale) for s in (shapes or SHAPES)]


def make_params(config, seed=0):
    return mstf.init_params((4, 4, 4), config, seed=seed, dtype=np.float64)


def default_config(**kw):
    base = dict(radii=(1, 1, 1), corr_channels=4, split_ratio=(3, 1))
    base.update(kw)
    return LookupConfig(**base)


class TestLookup:
    def test_zero_flow_self_level_is_centered_window(self, rng):
        cur = make_pyramid(rng)
        prev = make_pyramid(rng)
        pyr = build_pyramid(cur, prev, scale=False)
        cfg = default_config()
        flow = Tensor(np.zeros((8, 8, 2)))
        f = mstf.lookup(pyr, 0, flow, cfg)
        vol = pyr.volume(0, 0).values.data
        i, j = 3, 5
        window = np.zeros((3, 3))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                y, x = i + dy, j + dx
                if 0 <= y < 8 and 0 <= x < 8:
                    window[dy + 1, dx + 1] = vol[i, j, y, x]
        np.testing.assert_array_equal(f.data[i, j, :9].reshape(3, 3), window)

    def test_integer_shift_matches_window_oracle(self, rng):
        cur = make_pyramid(rng)
        prev = make_pyramid(rng)
        pyr = build_pyramid(cur, prev, scale=False)
        cfg = default_config()
        flow = np.zeros((8, 8, 2))
        flow[:, :, 0] = 4.0  # integral in every level's coordinates (4, 2, 1)
        flow[:, :, 1] = -4.0
        f = mstf.lookup(pyr, 0, Tensor(flow), cfg).data
        start = 0
        for k in range(3):
            vol = pyr.volume(0, k).values.data
            ref = oracles.lookup_window_loops(vol, 0, k, flow, radius=1)
            np.testing.assert_array_equal(f[:, :, start:start + 9], ref)
            start += 9

    def test_channel_count_formula(self, rng):
        cur = make_pyramid(rng, [(8, 8, 4), (4, 4, 4), (2, 2, 4)])
        prev = make_pyramid(rng, [(8, 8, 4), (4, 4, 4), (2, 2, 4)])
        pyr = build_pyramid(cur, prev, scale=False)
        cfg = default_config(radii=(4, 4, 4))
        f = mstf.lookup(pyr, 0, Tensor(np.zeros((8, 8, 2))), cfg)
        assert f.shape == (8, 8, 3 * 81)  # 3 levels x (2*4+1)^2

    def test_nan_flow_rejected(self, rng):
        pyr = build_pyramid(make_pyramid(rng), make_pyramid(rng), scale=False)
        flow = np.zeros((8, 8, 2))
        flow[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            mstf.lookup(pyr, 0, Tensor(flow), default_config())

    def test_support_is_localized_to_flow_displaced_windows(self, rng):
        """Perturbing the previous frame outside every lookup window leaves f unchanged."""
        cfg = default_config()
        cur = make_pyramid(rng)
        prev_a = [g.data.copy() for g in make_pyramid(rng)]
        prev_b = [g.copy() for g in prev_a]
        i, j = 4, 4
        flow_val = (1.0, 2.0)  # integer so the window edge is sharp except bleed
        radius = 1
        for k, g in enumerate(prev_b):
            scale = 2.0 ** (0 - k)
            cx, cy = (j + flow_val[0]) * scale, (i + flow_val[1]) * scale
            h, w = g.shape[:2]
            for p in range(h):
                for q in range(w):
                    inside = (abs(q - cx) <= radius + 1.0) and (abs(p - cy) <= radius + 1.0)
                    if not inside:
                        g[p, q] += rng.standard_normal(g.shape[2])
        flow = np.zeros((8, 8, 2))
        flow[:, :] = flow_val
        f_a = mstf.lookup(build_pyramid([Tensor(x) for x in [c.data for c in cur]],
                                        [Tensor(x) for x in prev_a], scale=False),
                          0, Tensor(flow), cfg).data
        f_b = mstf.lookup(build_pyramid([Tensor(x) for x in [c.data for c in cur]],
                                        [Tensor(x) for x in prev_b], scale=False),
                          0, Tensor(flow), cfg).data
        np.testing.assert_array_equal(f_a[i, j], f_b[i, j])


class TestUpdate:
    def test_zero_flow_head_gives_zero_delta(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        state = FlowState.initial()
        _, state, _ = mstf.step(params, state, make_pyramid(rng), cfg)
        _, state2, info = mstf.step(params, state, make_pyramid(rng), cfg)
        for lvl, deltas in info.deltas.items():
            for d in deltas:
                np.testing.assert_array_equal(d, 0.0)
            np.testing.assert_array_equal(state2.flows[lvl].data, 0.0)

    def test_split_arithmetic_table(self):
        cfg = default_config(split_ratio=(3, 1))
        assert cfg.split_channels(64) == (48, 16)
        assert LookupConfig(radii=(1, 1, 1), split_ratio=(1, 1)).split_channels(64) == (32, 32)
        assert LookupConfig(radii=(1, 1, 1), split_ratio=(1, 3)).split_channels(64) == (16, 48)

    def test_bad_split_rejected_at_construction(self):
        cfg = default_config(split_ratio=(7, 1))
        with pytest.raises(ShapeError, match="split"):
            mstf.init_params((4, 4, 4), cfg, seed=0)  # 4 channels: motion share rounds to 0

    def test_static_slice_passes_through_bit_exact(self, rng):
        cfg = default_config(split_ratio=(3, 1))
        params = make_params(cfg)
        for lvl, p in params.levels.items():
            p.flow_w.data = rng.standard_normal(p.flow_w.shape) * 0.1
        state = FlowState.initial()
        first = make_pyramid(rng)
        _, state, _ = mstf.step(params, state, first, cfg)
        second = make_pyramid(rng)
        fused, _, _ = mstf.step(params, state, second, cfg)
        for lvl in range(3):
            static_n = cfg.split_channels(4)[0]
            np.testing.assert_array_equal(fused[lvl].data[:, :, :static_n],
                                          second[lvl].data[:, :, :static_n])


class TestStep:
    def test_first_frame_is_identity_passthrough(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        pyramid = make_pyramid(rng)
        fused, state, _ = mstf.step(params, FlowState.initial(), pyramid, cfg)
        assert all(f is g for f, g in zip(fused, pyramid))
        assert state.frame_count == 1
        for f in state.flows:
            np.testing.assert_array_equal(f.data, 0.0)

    def test_flow_accumulation_is_additive(self, rng):
        cfg = default_config(flow_iterations=2)
        params = make_params(cfg)
        for lvl, p in params.levels.items():
            p.flow_w.data = rng.standard_normal(p.flow_w.shape) * 0.05
            p.flow_b.data = rng.standard_normal(p.flow_b.shape) * 0.1
        state = FlowState.initial()
        sums = {lvl: 0.0 for lvl in cfg.fused_level_indices()}
        for frame in range(5):
            _, state, info = mstf.step(params, state, make_pyramid(rng), cfg)
            for lvl, deltas in info.deltas.items():
                for d in deltas:
                    sums[lvl] = sums[lvl] + d
        for lvl, total in sums.items():
            np.testing.assert_allclose(state.flows[lvl].data, total, atol=1e-6)

    def test_flow_iterations_multiply_lookup_count(self, rng):
        for iters in (1, 3):
            cfg = default_config(flow_iterations=iters)
            params = make_params(cfg)
            state = FlowState.initial()
            _, state, _ = mstf.step(params, state, make_pyramid(rng), cfg)
            fused, _, info = mstf.step(params, state, make_pyramid(rng), cfg)
            assert info.lookups == iters * 3
            assert [f.shape for f in fused] == SHAPES

    def test_frame_counter_strictly_increments(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        state = FlowState.initial()
        for expected in (1, 2, 3):
            _, state, _ = mstf.step(params, state, make_pyramid(rng), cfg)
            assert state.frame_count == expected

    def test_shape_drift_rejected(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        _, state, _ = mstf.step(params, FlowState.initial(), make_pyramid(rng), cfg)
        bad = make_pyramid(rng, [(16, 16, 4), (8, 8, 4), (4, 4, 4)])
        with pytest.raises(ShapeError, match="drift"):
            mstf.step(params, state, bad, cfg)

    def test_streaming_determinism(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        frames = [make_pyramid(rng) for _ in range(4)]
        outs = []
        for _ in range(2):
            state = FlowState.initial()
            run = []
            for pyramid in frames:
                fused, state, _ = mstf.step(params, state, pyramid, cfg)
                run.append([f.data.copy() for f in fused])
            outs.append((run, [f.data.copy() for f in state.flows]))
        for a, b in zip(outs[0][0], outs[1][0]):
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x, y)
        for x, y in zip(outs[0][1], outs[1][1]):
            np.testing.assert_array_equal(x, y)

    def test_reset_restores_first_frame_behaviour(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        state = FlowState.initial()
        for _ in range(3):
            _, state, _ = mstf.step(params, state, make_pyramid(rng), cfg)
        reset_state = mstf.reset(state)
        assert reset_state.fresh and reset_state.frame_count == 0
        again = mstf.reset(reset_state)
        assert again.fresh and again.frame_count == 0  # idempotent
        pyramid = make_pyramid(rng)
        fused, _, _ = mstf.step(params, reset_state, pyramid, cfg)
        assert all(f is g for f, g in zip(fused, pyramid))

    def test_stream_isolation_after_reset(self, rng):
        cfg = default_config()
        params = make_params(cfg)
        stream_b = [make_pyramid(rng) for _ in range(3)]
        noise = [make_pyramid(rng) for _ in range(3)]

        def run_b(state):
            outs = []
            for pyramid in stream_b:
                fused, state, _ = mstf.step(params, state, pyramid, cfg)
                outs.append([f.data.copy() for f in fused])
            return outs

        alone = run_b(FlowState.initial())
        state = FlowState.initial()
        for pyramid in noise:
            _, state, _ = mstf.step(params, state, pyramid, cfg)
        after_reset = run_b(mstf.reset(state))
        for a, b in zip(alone, after_reset):
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x, y)

    def test_zero_motion_share_degenerates_to_passthrough(self, rng):
        cfg = default_config(split_ratio=(1, 0))
        params = make_params(cfg)
        state = FlowState.initial()
        for _ in range(3):
            pyramid = make_pyramid(rng)
            fused, state, _ = mstf.step(params, state, pyramid, cfg)
            assert all(f is g for f, g in zip(fused, pyramid))

    def test_interp_direction_configurable(self, rng):
        params_fc = make_params(default_config(interp_direction="fine_to_coarse"))
        params_cf = mstf.init_params((4, 4, 4), default_config(interp_direction="coarse_to_fine"), seed=0,
                                     dtype=np.float64)
        for params, cfg in ((params_fc, params_fc.config), (params_cf, params_cf.config)):
            state = FlowState.initial()
            _, state, _ = mstf.step(params, state, make_pyramid(rng), cfg)
            fused, _, _ = mstf.step(params, state, make_pyramid(rng), cfg)
            assert [f.shape for f in fused] == SHAPES


def test_end_to_end_gradient_through_two_frames(rng):
    cfg = default_config(flow_iterations=2)
    params = make_params(cfg)
    prng = np.random.default_rng(5)
    for lvl, p in params.levels.items():
        p.flow_w.data = prng.standard_normal(p.flow_w.shape) * 0.05
        p.flow_b.data = prng.standard_normal(p.flow_b.shape) * 0.2  # off-lattice coords

    def run(*tensors):
        cur = list(tensors[:3])
        prev = list(tensors[3:])
        state = FlowState.initial()
        _, state, _ = mstf.step(params, state, prev, cfg)
        fused, _, _ = mstf.step(params, state, cur, cfg)
        return fused

    inputs = [rng.standard_normal(s) * 0.5 for s in SHAPES] + \
             [rng.standard_normal(s) * 0.5 for s in SHAPES]
    report = check_gradients(run, inputs, step=1e-5, tolerance=1e-4)
    assert report.ok(1e-4), report.max_rel_error


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = default_config()
    params = make_params(cfg, seed=3)
    named = params.named_tensors()
    path = tmp_path / "neck.fdck"
    save_tensors({k: v.data for k, v in named.items()}, path)
    fresh = make_params(cfg, seed=9)
    loaded, version = load_tensors(path)
    mstf.load_into_params(fresh, loaded)
    assert version == 1
    for key, tensor in fresh.named_tensors().items():
        np.testing.assert_allclose(tensor.data, named[key].data.astype(np.float32), atol=1e-7)
