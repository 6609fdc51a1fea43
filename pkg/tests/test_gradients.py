"""Tape gradients against central finite differences, op by op."""

import numpy as np
import pytest

import stanlab as sl
from stanlab.errors import ContractError

SEEDS = range(20)


def param(name, arr):
    return sl.ParamTensor(name, np.asarray(arr, dtype=np.float32))


def make_scalarizer(rng, n):
    """Fixed random-weighted sum so every output element has a distinct
    weight; the weights are frozen so repeated evaluations agree."""
    w = sl.Tensor(rng.normal(size=(n, 1)).astype(np.float32))
    b = sl.Tensor(np.zeros(1, dtype=np.float32))

    def scalarize(t):
        return sl.reshape(sl.linear_map(sl.reshape(t, (1, n)), w, b), ())

    return scalarize


def check(name, build, seeds=SEEDS, tol=5e-3):
    """build(rng) -> (params, f). Verified for every seed."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        params, f = build(rng)
        report = sl.check_gradients(f, params, eps=1e-3, tol=tol, name=name)
        worst = max(worst, report.max_rel_error)
        assert report.passed, f"{name} seed {seed}: {report}"
    return worst


class TestPerOpGradients:
    def test_linear_map(self):
        def build(rng):
            x = param("x", rng.normal(size=(3, 4)))
            w = param("w", rng.normal(size=(4, 5)))
            b = param("b", rng.normal(size=5))
            s = make_scalarizer(rng, 15)
            return [x, w, b], lambda: s(sl.linear_map(x, w, b))
        check("linear_map", build)

    def test_conv2d(self):
        def build(rng):
            x = param("x", rng.normal(size=(4, 4, 2)))
            w = param("w", rng.normal(size=(3, 3, 2, 2)))
            b = param("b", rng.normal(size=2))
            s = make_scalarizer(rng, 32)
            return [x, w, b], lambda: s(sl.conv2d(x, w, b))
        check("conv2d", build)

    def test_sigmoid(self):
        def build(rng):
            x = param("x", rng.normal(size=(3, 4)))
            s = make_scalarizer(rng, 12)
            return [x], lambda: s(sl.sigmoid(x))
        check("sigmoid", build)

    def test_relu(self):
        def build(rng):
            # keep values away from the kink, where FD is ill-defined
            x = param("x", rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.1)
            s = make_scalarizer(rng, 12)
            return [x], lambda: s(sl.relu(x))
        check("relu", build)

    def test_add(self):
        def build(rng):
            x = param("x", rng.normal(size=(2, 3)))
            y = param("y", rng.normal(size=(2, 3)))
            s = make_scalarizer(rng, 6)
            return [x, y], lambda: s(sl.add(x, y))
        check("add", build)

    def test_avg_pool_spatial(self):
        def build(rng):
            x = param("x", rng.normal(size=(2, 3, 3, 2)))
            s = make_scalarizer(rng, 4)
            return [x], lambda: s(sl.avg_pool_spatial(x))
        check("avg_pool_spatial", build)

    def test_avg_pool_temporal(self):
        def build(rng):
            x = param("x", rng.normal(size=(5, 3)))
            s = make_scalarizer(rng, 3)
            return [x], lambda: s(sl.avg_pool_temporal(x))
        check("avg_pool_temporal", build)

    def test_tile_spatial(self):
        def build(rng):
            x = param("x", rng.normal(size=(3, 2)))
            s = make_scalarizer(rng, 36)
            return [x], lambda: s(sl.tile_spatial(x, 2, 3))
        check("tile_spatial", build)

    def test_tile_temporal(self):
        def build(rng):
            x = param("x", rng.normal(size=(4,)))
            s = make_scalarizer(rng, 12)
            return [x], lambda: s(sl.tile_temporal(x, 3))
        check("tile_temporal", build)

    def test_outer_product_st(self):
        def build(rng):
            a_s = param("a_s", rng.uniform(0.1, 0.9, size=(3, 2, 2)))
            a_t = param("a_t", rng.uniform(0.1, 0.9, size=3))
            s = make_scalarizer(rng, 12)
            return [a_s, a_t], lambda: s(sl.outer_product_st(a_s, a_t))
        check("outer_product_st", build)

    def test_elementwise_mul(self):
        def build(rng):
            x = param("x", rng.normal(size=(2, 3, 2, 3)))
            a = param("a", rng.normal(size=(2, 3, 2)))
            s = make_scalarizer(rng, 36)
            return [x, a], lambda: s(sl.elementwise_mul(x, a))
        check("elementwise_mul", build)

    def test_concat_channels_routes_gradients(self):
        def build(rng):
            x = param("x", rng.normal(size=(2, 3)))
            y = param("y", rng.normal(size=(2, 2)))
            s = make_scalarizer(rng, 10)
            return [x, y], lambda: s(sl.concat_channels(x, y))
        check("concat_channels", build)

    def test_stack_time(self):
        def build(rng):
            xs = [param(f"x{i}", rng.normal(size=(2, 2))) for i in range(3)]
            s = make_scalarizer(rng, 12)
            return xs, lambda: s(sl.stack_time(xs))
        check("stack_time", build)

    def test_bce_multilabel(self):
        def build(rng):
            x = param("x", rng.normal(size=(4,)))
            y = (rng.uniform(size=4) < 0.5).astype(np.float32)
            y[0] = 1.0
            return [x], lambda: sl.bce_multilabel(sl.sigmoid(x), y)
        check("bce_multilabel", build)


class TestCheckGradientsContract:
    def test_constant_function_all_zero(self):
        w = param("w", np.ones((2, 2)))

        def f():
            c = sl.Tensor(np.zeros((1, 2), dtype=np.float32))
            zero_w = sl.Tensor(np.zeros((2, 1), dtype=np.float32))
            return sl.reshape(sl.linear_map(c, zero_w, sl.Tensor(np.zeros(1, dtype=np.float32))), ())

        report = sl.check_gradients(f, [w], eps=1e-3, tol=1e-6, name="constant")
        assert report.passed
        assert report.max_rel_error == 0.0

    def test_non_scalar_rejected(self):
        w = param("w", np.ones(3))
        with pytest.raises(ContractError):
            sl.check_gradients(lambda: sl.sigmoid(w), [w])

    def test_bad_eps_rejected(self):
        w = param("w", np.ones(3))
        with pytest.raises(ContractError):
            sl.check_gradients(lambda: sl.avg_pool_temporal(w), [w], eps=0.0)

    def test_report_pass_flag_consistent(self):
        x = param("x", np.array([0.3, -0.2], dtype=np.float32))
        s = make_scalarizer(np.random.default_rng(0), 2)
        rep = sl.check_gradients(lambda: s(sl.sigmoid(x)), [x],
                                 eps=1e-3, tol=1e-12, name="tight")
        assert rep.passed == (rep.max_rel_error < rep.tolerance)


class TestPersistentGradients:
    def test_grads_accumulate_until_reset(self):
        x = param("x", np.array([1.0, 2.0], dtype=np.float32))
        for _ in range(2):
            out = sl.avg_pool_temporal(sl.sigmoid(x))
            out.backward()
        g_twice = x.grad.copy()
        x.zero_grad()
        assert x.grad is None
        out = sl.avg_pool_temporal(sl.sigmoid(x))
        out.backward()
        assert np.allclose(g_twice, 2.0 * x.grad)
