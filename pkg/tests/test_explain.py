"""TVD, masks, perturbation machinery, pointing games, and exports."""

import numpy as np
import pytest

import stanlab as sl
import stanlab.tensor as tt
from stanlab.errors import ContractError, DimensionError
from stanlab.explain import StanAttentionModel

from oracles import tvd_loops


class TestTVD:
    def test_identical_is_zero(self):
        p = np.array([0.3, 0.7, 0.1])
        assert sl.tvd(p, p) == 0.0

    def test_opposite_corners(self):
        assert sl.tvd([1.0, 0.0], [0.0, 1.0]) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sum_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=6)
        q = rng.uniform(size=6)
        assert abs(sl.tvd(p, q) - tvd_loops(p, q)) < 1e-12

    def test_metric_properties(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            p, q, r = rng.uniform(size=(3, 5))
            assert sl.tvd(p, q) == sl.tvd(q, p)
            assert sl.tvd(p, q) >= 0.0
            assert sl.tvd(p, r) <= sl.tvd(p, q) + sl.tvd(q, r) + 1e-12
        assert sl.tvd(rng.uniform(size=4), rng.uniform(size=4)) > 0.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            sl.tvd([0.1, 0.2], [0.1, 0.2, 0.3])


class TestRelevanceMask:
    def test_boundary_included_in_relevant(self):
        a = np.full((2, 3), 0.5)
        mask = sl.relevance_mask(a, 0.5, "relevant")
        assert np.all(mask == 1.0)
        assert np.all(sl.relevance_mask(a, 0.5, "irrelevant") == 0.0)

    @pytest.mark.parametrize("threshold", [0.1, 0.3, 0.5, 0.8])
    def test_targets_partition_indices(self, threshold):
        rng = np.random.default_rng(1)
        a = rng.uniform(size=(4, 5))
        rel = sl.relevance_mask(a, threshold, "relevant")
        irr = sl.relevance_mask(a, threshold, "irrelevant")
        assert np.all(rel + irr == 1.0)

    def test_uniform_fraction_tracks_threshold(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=100_000)
        frac = sl.relevance_mask(a, 0.3, "relevant").mean()
        assert abs(frac - 0.7) < 0.01

    def test_bad_arguments(self):
        with pytest.raises(ContractError):
            sl.relevance_mask(np.zeros(3), 1.5, "relevant")
        with pytest.raises(ContractError):
            sl.relevance_mask(np.zeros(3), 0.5, "nonsense")


def small_cfg():
    return sl.StanConfig(k=3, t=4, h=3, w=3, d_a=4, d_v=4, d=6)


def small_clip(cfg, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(cfg.k, dtype=np.float32)
    labels[0] = 1.0
    grounding = np.zeros(cfg.t, dtype=np.float32)
    grounding[1:3] = 1.0
    return sl.ClipRecord(
        id=f"pclip{seed}",
        audio=sl.Tensor(rng.normal(size=(cfg.t, cfg.d_a)).astype(np.float32)),
        visual=sl.Tensor(rng.normal(size=(cfg.t, cfg.h, cfg.w, cfg.d_v)).astype(np.float32)),
        labels=labels, grounding=grounding)


class ConstantAttentionModel(StanAttentionModel):
    def __init__(self, params, cfg, value):
        super().__init__(params, cfg)
        self.value = value

    def attention(self, audio, visual):
        return np.full(visual.shape[:3], self.value, dtype=np.float32)


class RandomAttentionModel(StanAttentionModel):
    """Attention decoupled from the features entirely."""

    def attention(self, audio, visual):
        rng = np.random.default_rng(12345)
        return rng.uniform(size=visual.shape[:3]).astype(np.float32)


class TestPerturbation:
    def setup_method(self):
        self.cfg = small_cfg()
        self.params = sl.StanParams(self.cfg, seed=0)
        self.clip = small_clip(self.cfg)

    def test_sigma_zero_is_exactly_zero(self):
        pcfg = sl.PerturbConfig(sigmas=(0.0, 0.5), trials=5, seed=1)
        curve = sl.perturbation_test_stan(self.clip, self.params, self.cfg, pcfg)
        assert curve.mean_tvd[0] == 0.0
        assert curve.std_tvd[0] == 0.0

    def test_reproducible_bit_exact(self):
        pcfg = sl.PerturbConfig(sigmas=(0.0, 0.3, 0.9), trials=8, seed=3)
        c1 = sl.perturbation_test_stan(self.clip, self.params, self.cfg, pcfg)
        c2 = sl.perturbation_test_stan(self.clip, self.params, self.cfg, pcfg)
        assert c1.mean_tvd == c2.mean_tvd and c1.std_tvd == c2.std_tvd

    def test_general_wrapper_reproduces_stan_exactly(self):
        pcfg = sl.PerturbConfig(sigmas=(0.0, 0.4, 0.8), trials=6, seed=5)
        direct = sl.perturbation_test_stan(self.clip, self.params, self.cfg, pcfg)
        wrapped = sl.perturbation_test_general(
            StanAttentionModel(self.params, self.cfg), self.clip, pcfg)
        assert direct.mean_tvd == wrapped.mean_tvd
        assert direct.std_tvd == wrapped.std_tvd

    def test_constant_full_attention_degenerate_masks(self):
        model = ConstantAttentionModel(self.params, self.cfg, 1.0)
        pcfg = sl.PerturbConfig(sigmas=(0.0, 0.5), trials=5, seed=7,
                                target="irrelevant")
        curve = sl.perturbation_test_general(model, self.clip, pcfg)
        assert all(v == 0.0 for v in curve.mean_tvd)  # empty irrelevant mask
        rel = sl.perturbation_test_general(
            model, self.clip,
            sl.PerturbConfig(sigmas=(0.0, 0.5), trials=5, seed=7, target="relevant"))
        assert rel.mean_tvd[-1] > 0.0  # mask covers everything

    def test_random_attention_no_separation(self):
        model = RandomAttentionModel(self.params, self.cfg)
        kw = dict(sigmas=(0.0, 1.0), trials=60, seed=9)
        rel = sl.perturbation_test_general(
            model, self.clip, sl.PerturbConfig(target="relevant", **kw))
        irr = sl.perturbation_test_general(
            model, self.clip, sl.PerturbConfig(target="irrelevant", **kw))
        sem = (rel.std_tvd[-1] + irr.std_tvd[-1]) / np.sqrt(kw["trials"])
        assert abs(rel.mean_tvd[-1] - irr.mean_tvd[-1]) < 4.0 * sem + 1e-6

    def test_nan_params_rejected(self):
        bad = sl.StanParams(self.cfg, seed=1)
        first = next(iter(bad.named()))[1]
        first.data = first.data.copy()
        first.data.reshape(-1)[0] = np.nan
        with pytest.raises(ContractError):
            sl.perturbation_test_stan(self.clip, bad, self.cfg,
                                      sl.PerturbConfig(sigmas=(0.0,), trials=1))

    def test_config_validation(self):
        with pytest.raises(ContractError):
            sl.PerturbConfig(sigmas=(0.1, 0.5)).validate()  # must start at 0
        with pytest.raises(ContractError):
            sl.PerturbConfig(sigmas=(0.0, 0.5, 0.3)).validate()
        with pytest.raises(ContractError):
            sl.PerturbConfig(trials=0).validate()

    def test_curve_csv_round_trip(self, tmp_path):
        pcfg = sl.PerturbConfig(sigmas=(0.0, 1.0), trials=4, seed=11)
        curve = sl.perturbation_test_stan(self.clip, self.params, self.cfg, pcfg)
        path = tmp_path / "curve.csv"
        curve.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sigma,mean_tvd,std_tvd,trials"
        parsed = [line.split(",") for line in lines[1:]]
        assert [float(row[0]) for row in parsed] == [0.0, 1.0]
        assert float(parsed[1][1]) == curve.mean_tvd[1]

    def test_monotone_helper(self):
        up = sl.PerturbCurve([0.0, 0.5, 1.0], [0.0, 0.1, 0.2],
                             [0.0, 0.01, 0.01], 100)
        assert up.monotone_non_decreasing()
        down = sl.PerturbCurve([0.0, 0.5, 1.0], [0.0, 0.2, 0.05],
                               [0.0, 0.01, 0.01], 100)
        assert not down.monotone_non_decreasing()


class TestPointingGame:
    def test_exact_match_zero(self):
        mask = np.array([0.0, 1.0, 1.0, 0.0])
        assert sl.pointing_game_mae(mask, mask, "soft") == 0.0

    def test_analytic_third(self):
        mae = sl.pointing_game_mae(np.array([1.0, 1.0, 0.0]),
                                   np.array([1.0, 0.0, 0.0]), "soft")
        assert abs(mae - 1.0 / 3.0) < 1e-12

    def test_binary_equals_hamming_fraction(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.uniform(size=8)
            g = (rng.uniform(size=8) < 0.5).astype(np.float64)
            binarized = (a >= 0.5).astype(np.float64)
            expected = np.count_nonzero(binarized != g) / 8.0
            assert sl.pointing_game_mae(a, g, "binary") == expected

    def test_range_and_validation(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=6)
        g = (rng.uniform(size=6) < 0.5).astype(np.float64)
        assert 0.0 <= sl.pointing_game_mae(a, g, "soft") <= 1.0
        with pytest.raises(DimensionError):
            sl.pointing_game_mae(a, g[:-1], "soft")
        with pytest.raises(ContractError):
            sl.pointing_game_mae(a, a, "soft")  # non-binary mask
        with pytest.raises(ContractError):
            sl.pointing_game_mae(a, g, "fuzzy")


class TestBilinearAndPGM:
    def test_constant_map_stays_constant(self):
        out = sl.bilinear_resize(np.full((3, 5), 0.42), 17, 9)
        assert np.allclose(out, 0.42)

    def test_two_by_two_monotone_columns(self):
        out = sl.bilinear_resize(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4)
        assert out.shape == (4, 4)
        assert np.all(np.diff(out, axis=1) >= 0.0)
        expected_row = np.array([0.0, 1 / 3, 2 / 3, 1.0])
        assert np.allclose(out, np.tile(expected_row, (4, 1)))

    def test_endpoints_pinned(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(size=(3, 3))
        out = sl.bilinear_resize(a, 9, 9)
        assert out[0, 0] == a[0, 0] and out[-1, -1] == a[-1, -1]

    def test_pgm_all_white(self, tmp_path):
        path = tmp_path / "w.pgm"
        sl.write_pgm(path, np.ones((2, 3)))
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n3 2\n255\n")
        assert raw[-6:] == b"\xff" * 6

    def test_pgm_rounding(self, tmp_path):
        path = tmp_path / "g.pgm"
        sl.write_pgm(path, np.array([[0.0, 0.5, 1.0]]))
        assert path.read_bytes()[-3:] == bytes([0, 128, 255])


class TestExportAttention:
    def test_export_writes_all_artifacts(self, tmp_path):
        cfg = small_cfg()
        params = sl.StanParams(cfg, seed=2)
        clip = small_clip(cfg, seed=3)
        with tt.no_grad():
            out = sl.forward(clip, params, cfg)
        files = sl.export_attention(clip.id, out.attention, tmp_path, size=(16, 16))
        names = {f.name for f in files}
        assert f"{clip.id}_time_attention.csv" in names
        assert f"{clip.id}_spacetime.avtf" in names
        assert sum(1 for n in names if n.endswith("_space.pgm")) == cfg.t

        csv_line = (tmp_path / f"{clip.id}_time_attention.csv").read_text().strip()
        recovered = np.array([float(v) for v in csv_line.split(",")])
        assert np.allclose(recovered, out.attention.a_t.numpy(), atol=0)

        stored = sl.read_feature_file(tmp_path / f"{clip.id}_spacetime.avtf")
        assert np.array_equal(stored.numpy(), out.attention.a_st.numpy())

    def test_pgm_has_upsampled_size(self, tmp_path):
        cfg = small_cfg()
        params = sl.StanParams(cfg, seed=4)
        clip = small_clip(cfg, seed=5)
        with tt.no_grad():
            out = sl.forward(clip, params, cfg)
        sl.export_attention(clip.id, out.attention, tmp_path, size=(32, 24))
        pgm = next(tmp_path.glob("*_t00_space.pgm")).read_bytes()
        assert pgm.startswith(b"P5\n24 32\n255\n")
