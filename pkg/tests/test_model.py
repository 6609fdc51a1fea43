"""Forward-pass semantics of the attention head."""

import numpy as np
import pytest

import stanlab as sl
import stanlab.tensor as tt
from stanlab.errors import ConfigurationError, DimensionError

CFG = dict(k=3, t=4, h=5, w=5, d_a=6, d_v=6, d=8)


def make_cfg(mode="audio-visual", **over):
    base = dict(CFG)
    base.update(over)
    return sl.StanConfig(mode=mode, **base)


def make_clip(cfg, seed=0, label=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(cfg.k, dtype=np.float32)
    labels[label] = 1.0
    return sl.ClipRecord(
        id=f"clip{seed}",
        audio=sl.Tensor(rng.normal(size=(cfg.t, cfg.d_a)).astype(np.float32)),
        visual=sl.Tensor(rng.normal(size=(cfg.t, cfg.h, cfg.w, cfg.d_v)).astype(np.float32)),
        labels=labels)


def zero_params(params):
    for _, p in params.named():
        p.data = np.zeros_like(p.data)
    return params


class TestCompose:
    def test_single_step_mean_equals_step(self):
        cfg = make_cfg(t=1)
        rng = np.random.default_rng(1)
        audio = sl.Tensor(rng.normal(size=(1, cfg.d_a)).astype(np.float32))
        from stanlab.model import _audio_with_context
        ctx = _audio_with_context(audio).numpy()
        assert np.allclose(ctx[0, :cfg.d_a], ctx[0, cfg.d_a:], atol=1e-7)

    def test_zero_inputs_zero_params_give_zero(self):
        cfg = make_cfg()
        params = zero_params(sl.StanParams(cfg, seed=0))
        audio = sl.Tensor(np.zeros((cfg.t, cfg.d_a), dtype=np.float32))
        visual = sl.Tensor(np.zeros((cfg.t, cfg.h, cfg.w, cfg.d_v), dtype=np.float32))
        out = sl.compose_spacetime(audio, visual, params, cfg)
        assert out.shape == (cfg.t, cfg.h, cfg.w, cfg.d_prime)
        assert np.all(out.numpy() == 0.0)

    def test_channel_halves_track_their_modality(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=2)
        clip = make_clip(cfg, seed=3)
        base = sl.compose_spacetime(clip.audio, clip.visual, params, cfg).numpy()

        bumped_audio = sl.Tensor(clip.audio.numpy() + 0.5)
        out_a = sl.compose_spacetime(bumped_audio, clip.visual, params, cfg).numpy()
        assert not np.allclose(out_a[..., :cfg.d], base[..., :cfg.d])
        assert np.array_equal(out_a[..., cfg.d:], base[..., cfg.d:])

        bumped_visual = sl.Tensor(clip.visual.numpy() + 0.5)
        out_v = sl.compose_spacetime(clip.audio, bumped_visual, params, cfg).numpy()
        assert np.array_equal(out_v[..., :cfg.d], base[..., :cfg.d])
        assert not np.allclose(out_v[..., cfg.d:], base[..., cfg.d:])


class TestSpaceAttention:
    def test_zero_gate_gives_half(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=0)
        for name in ("space_gate",):
            w, b = params._convs[name]
            w.data = np.zeros_like(w.data)
            b.data = np.zeros_like(b.data)
        clip = make_clip(cfg, seed=1)
        x_st = sl.compose_spacetime(clip.audio, clip.visual, params, cfg)
        a_s, cam = sl.space_attention(x_st, params, cfg)
        assert np.all(a_s.numpy() == 0.5)
        assert cam.shape == (cfg.t, cfg.h, cfg.w, cfg.k)

    def test_time_permutation_equivariance(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=4)
        clip = make_clip(cfg, seed=5)
        x_st = sl.compose_spacetime(clip.audio, clip.visual, params, cfg)
        a_s, _ = sl.space_attention(x_st, params, cfg)

        perm = np.array([2, 0, 3, 1])
        x_perm = sl.Tensor(x_st.numpy()[perm].copy())
        a_perm, _ = sl.space_attention(x_perm, params, cfg)
        assert np.array_equal(a_perm.numpy(), a_s.numpy()[perm])


class TestTimePath:
    def test_constant_visual_pools_exactly(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=0)
        rng = np.random.default_rng(6)
        const_map = rng.normal(size=(cfg.t, 1, 1, cfg.d_v)).astype(np.float32)
        visual = sl.Tensor(np.broadcast_to(const_map,
                                           (cfg.t, cfg.h, cfg.w, cfg.d_v)).copy())
        pooled = tt.avg_pool_spatial(visual).numpy()
        assert np.allclose(pooled, const_map[:, 0, 0, :], atol=1e-6)

    def test_zero_weights_zero_features(self):
        cfg = make_cfg()
        params = zero_params(sl.StanParams(cfg, seed=0))
        clip = make_clip(cfg, seed=7)
        x_t = sl.time_features(clip.audio, clip.visual, params, cfg)
        assert np.all(x_t.numpy() == 0.0)

    def test_zero_gate_gives_half_attention(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=1)
        for w, b in params._mlps["time_gate"]:
            w.data = np.zeros_like(w.data)
            b.data = np.zeros_like(b.data)
        clip = make_clip(cfg, seed=8)
        x_t = sl.time_features(clip.audio, clip.visual, params, cfg)
        a_t, cav = sl.time_attention(x_t, params, cfg)
        assert np.all(a_t.numpy() == 0.5)
        assert cav.shape == (cfg.t, cfg.k)

    def test_identical_steps_identical_attention(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=2)
        rng = np.random.default_rng(9)
        row = rng.normal(size=(1, cfg.d)).astype(np.float32)
        x_t = sl.Tensor(np.repeat(row, cfg.t, axis=0))
        a_t, _ = sl.time_attention(x_t, params, cfg)
        assert np.all(a_t.numpy() == a_t.numpy()[0])


class TestForward:
    def test_factorization_holds_exactly(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=3)
        out = sl.forward(make_clip(cfg, seed=10), params, cfg)
        a = out.attention
        assert np.array_equal(a.a_st.numpy(),
                              a.a_s.numpy() * a.a_t.numpy()[:, None, None])

    def test_attention_strictly_inside_unit_interval(self):
        cfg = make_cfg()
        for seed in range(10):
            params = sl.StanParams(cfg, seed=seed)
            out = sl.forward(make_clip(cfg, seed=seed), params, cfg)
            for t in (out.attention.a_s, out.attention.a_t, out.attention.a_st):
                v = t.numpy()
                assert np.all(v > 0.0) and np.all(v < 1.0)

    def test_saturated_time_gate_reduces_to_space_attention(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=4)
        w, b = params._mlps["time_gate"][0]
        w.data = np.zeros_like(w.data)
        b.data = np.full_like(b.data, 40.0)  # sigmoid == 1.0 in float32
        out = sl.forward(make_clip(cfg, seed=11), params, cfg)
        assert np.all(out.attention.a_t.numpy() == 1.0)
        assert np.array_equal(out.attention.a_st.numpy(), out.attention.a_s.numpy())

    def test_zero_everything_gives_half_probabilities(self):
        cfg = make_cfg()
        params = zero_params(sl.StanParams(cfg, seed=0))
        clip = sl.ClipRecord(
            id="z",
            audio=sl.Tensor(np.zeros((cfg.t, cfg.d_a), dtype=np.float32)),
            visual=sl.Tensor(np.zeros((cfg.t, cfg.h, cfg.w, cfg.d_v), dtype=np.float32)),
            labels=np.array([1, 0, 0], dtype=np.float32))
        out = sl.forward(clip, params, cfg)
        assert np.all(out.p.numpy() == 0.5)
        assert np.all(out.p_cam.numpy() == 0.5)
        assert np.all(out.p_cav.numpy() == 0.5)

    def test_forward_deterministic(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=5)
        clip = make_clip(cfg, seed=12)
        a = sl.forward(clip, params, cfg)
        b = sl.forward(clip, params, cfg)
        assert a.p.numpy().tobytes() == b.p.numpy().tobytes()
        assert a.attention.a_st.numpy().tobytes() == b.attention.a_st.numpy().tobytes()

    def test_time_gate_shift_monotone_in_a_st(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=6)
        clip = make_clip(cfg, seed=13)
        w, b = params._mlps["time_gate"][0]
        base_bias = b.data.copy()
        prev = None
        for shift in (0.0, 1.0, 2.0, 4.0, 8.0):
            b.data = base_bias + np.float32(shift)
            a_st = sl.forward(clip, params, cfg).attention.a_st.numpy()
            if prev is not None:
                assert np.all(a_st >= prev)
            prev = a_st
        a_s = sl.forward(clip, params, cfg).attention.a_s.numpy()
        assert np.all(prev <= a_s + 1e-7)

    def test_mode_shape_mismatch_raises(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=0)
        bad = make_clip(make_cfg(t=5), seed=1)
        with pytest.raises(DimensionError):
            sl.forward(bad, params, cfg)
        with pytest.raises(ConfigurationError):
            sl.forward(make_clip(cfg), params, make_cfg(mode="audio"))


class TestModes:
    def test_audio_mode_ignores_visual(self):
        cfg = make_cfg(mode="audio")
        params = sl.StanParams(cfg, seed=7)
        clip = make_clip(make_cfg(), seed=14)
        out1 = sl.forward(clip, params, cfg)
        clip2 = sl.ClipRecord(id=clip.id, audio=clip.audio,
                              visual=sl.Tensor(clip.visual.numpy() * -3.0 + 1.0),
                              labels=clip.labels)
        out2 = sl.forward(clip2, params, cfg)
        assert np.array_equal(out1.p.numpy(), out2.p.numpy())
        assert np.array_equal(out1.attention.a_t.numpy(), out2.attention.a_t.numpy())
        assert out1.p_cam is None and out1.cam is None
        assert out1.attention.a_s is None
        # broadcast attention: constant over space, equal to a_t
        a_st = out1.attention.a_st.numpy()
        assert np.allclose(a_st, out1.attention.a_t.numpy()[:, None, None])

    def test_visual_mode_ignores_audio(self):
        cfg = make_cfg(mode="visual")
        params = sl.StanParams(cfg, seed=8)
        clip = make_clip(make_cfg(), seed=15)
        out1 = sl.forward(clip, params, cfg)
        clip2 = sl.ClipRecord(id=clip.id, audio=sl.Tensor(clip.audio.numpy() + 9.0),
                              visual=clip.visual, labels=clip.labels)
        out2 = sl.forward(clip2, params, cfg)
        assert np.array_equal(out1.p.numpy(), out2.p.numpy())
        assert out1.p_cam is not None and out1.attention.a_s is not None

    def test_unimodal_width_is_single_d(self):
        for mode in ("audio", "visual"):
            cfg = make_cfg(mode=mode)
            assert cfg.d_prime == cfg.d
        assert make_cfg().d_prime == 2 * CFG["d"]

    def test_invalid_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            make_cfg(mode="both").validate()


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=9)
        path = tmp_path / "model.stan"
        sl.save_checkpoint(path, params, cfg)
        loaded, cfg2 = sl.load_checkpoint(path)
        assert cfg2.to_dict() == cfg.to_dict()
        for (n1, p1), (n2, p2) in zip(params.named(), loaded.named()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)

    def test_forward_identical_after_reload(self, tmp_path):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=10)
        clip = make_clip(cfg, seed=16)
        path = tmp_path / "model.stan"
        sl.save_checkpoint(path, params, cfg)
        loaded, _ = sl.load_checkpoint(path)
        assert np.array_equal(sl.forward(clip, params, cfg).p.numpy(),
                              sl.forward(clip, loaded, cfg).p.numpy())

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "bad.stan"
        path.write_bytes(b"\x00\x01notjson\n" + b"rest")
        with pytest.raises(sl.FormatError):
            sl.load_checkpoint(path)

    def test_shape_mismatch_rejected(self):
        cfg = make_cfg()
        params = sl.StanParams(cfg, seed=0)
        state = params.state_dict()
        name = next(iter(state))
        state[name] = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(ConfigurationError, match="shape"):
            sl.StanParams(cfg, seed=1).load_state(state)
