"""Optimizer contracts, with a straight-line oracle for the factored update."""

import math

import numpy as np
import pytest

from lopt.exceptions import ShapeMismatchError
from lopt.optim import Adafactor, Sgd, make_optimizer
from lopt.tensor import Tensor


def named(*arrays):
    return [(f"p{i}", Tensor(a, requires_grad=True)) for i, a in enumerate(arrays)]


# ---------------------------------------------------------------------------
# straight-line oracle: plain Python, no vectorized shortcuts


class OracleAdafactor:
    def __init__(self, shapes, lr=0.3, eps1=1e-30, clip=1.0, decay=0.8):
        self.lr, self.eps1, self.clip, self.decay = lr, eps1, clip, decay
        self.t = 0
        self.state = []
        for shape in shapes:
            if len(shape) >= 2:
                self.state.append(([0.0] * shape[0], [0.0] * shape[1]))
            else:
                self.state.append([0.0] * (shape[0] if shape else 1))

    def step(self, params, grads):
        self.t += 1
        beta = 1.0 - self.t ** (-self.decay)
        out = []
        for pi, (p, g) in enumerate(zip(params, grads)):
            p = [row[:] for row in p] if isinstance(p[0], list) else p[:]
            if isinstance(g[0], list):  # matrix
                rows, cols = len(g), len(g[0])
                r, c = self.state[pi]
                for i in range(rows):
                    mean = 0.0
                    for j in range(cols):
                        mean += g[i][j] * g[i][j] + self.eps1
                    r[i] = beta * r[i] + (1 - beta) * (mean / cols)
                for j in range(cols):
                    mean = 0.0
                    for i in range(rows):
                        mean += g[i][j] * g[i][j] + self.eps1
                    c[j] = beta * c[j] + (1 - beta) * (mean / rows)
                rmean = sum(r) / rows
                u = [[0.0] * cols for _ in range(rows)]
                for i in range(rows):
                    for j in range(cols):
                        vhat = r[i] * c[j] / rmean if rmean > 0 else 0.0
                        u[i][j] = g[i][j] / math.sqrt(vhat) if vhat > 0 else 0.0
                sq = sum(u[i][j] ** 2 for i in range(rows) for j in range(cols))
                rms = math.sqrt(sq / (rows * cols))
                div = max(1.0, rms / self.clip)
                for i in range(rows):
                    for j in range(cols):
                        p[i][j] -= self.lr * u[i][j] / div
            else:  # vector
                v = self.state[pi]
                n = len(g)
                u = [0.0] * n
                for i in range(n):
                    v[i] = beta * v[i] + (1 - beta) * (g[i] * g[i] + self.eps1)
                    u[i] = g[i] / math.sqrt(v[i]) if v[i] > 0 else 0.0
                rms = math.sqrt(sum(x * x for x in u) / n)
                div = max(1.0, rms / self.clip)
                for i in range(n):
                    p[i] -= self.lr * u[i] / div
            out.append(p)
        return out


def test_adafactor_matches_oracle_over_100_random_steps():
    rng = np.random.default_rng(123)
    mat = rng.normal(size=(3, 4))
    vec = rng.normal(size=5)
    params = named(mat.copy(), vec.copy())
    opt = Adafactor(params, lr=0.3)
    oracle = OracleAdafactor([(3, 4), (5,)])
    op = [mat.tolist(), vec.tolist()]
    for _ in range(100):
        gm = rng.normal(size=(3, 4))
        gv = rng.normal(size=5)
        opt.step({"p0": gm, "p1": gv})
        op = oracle.step(op, [gm.tolist(), gv.tolist()])
        assert np.abs(params[0][1].data - np.array(op[0])).max() < 1e-12
        assert np.abs(params[1][1].data - np.array(op[1])).max() < 1e-12


def test_adafactor_single_scalar_grad_one():
    params = named(np.array([2.0]))
    Adafactor(params, lr=0.3).step({"p0": np.array([1.0])})
    # straight-line: t=1, beta=0, v=1+eps1, u=1/sqrt(1+eps1), rms=|u|<=1
    expected = 2.0 - 0.3 * (1.0 / math.sqrt(1.0 + 1e-30))
    assert params[0][1].data[0] == pytest.approx(expected, abs=1e-12)


def test_adafactor_zero_gradient():
    for eps1 in (0.0, 1e-30):
        params = named(np.ones((2, 3)))
        opt = Adafactor(params, lr=0.3, eps1=eps1)
        opt.step({"p0": np.zeros((2, 3))})
        # u = 0 either way, so the parameter shift is exactly zero
        np.testing.assert_array_equal(params[0][1].data, np.ones((2, 3)))


def test_adafactor_constant_gradient_monotone_decrease():
    rng = np.random.default_rng(5)
    g = rng.uniform(0.5, 1.5, size=(2, 3))
    params = named(np.zeros((2, 3)))
    opt = Adafactor(params, lr=0.3)
    prev = params[0][1].data.copy()
    for _ in range(100):
        opt.step({"p0": g})
        cur = params[0][1].data
        assert np.all(cur < prev)
        prev = cur.copy()


def test_adafactor_factored_estimate_exact_for_rank_one_sq_grad():
    rng = np.random.default_rng(9)
    a = rng.uniform(0.5, 2.0, size=6)
    b = rng.uniform(0.5, 2.0, size=8)
    g = np.sqrt(np.outer(a, b))
    params = named(np.zeros((6, 8)))
    opt = Adafactor(params, lr=0.3, eps1=0.0)
    opt.step({"p0": g})
    r, c = opt._row["p0"], opt._col["p0"]
    vhat = np.outer(r, c) / r.mean()
    assert np.abs(vhat - np.outer(a, b)).max() < 1e-10


def test_adafactor_update_rms_never_exceeds_clip():
    rng = np.random.default_rng(17)
    params = named(rng.normal(size=(4, 6)))
    clip = 1.0
    lr = 0.3
    opt = Adafactor(params, lr=lr, clip_threshold=clip)
    for _ in range(50):
        before = params[0][1].data.copy()
        opt.step({"p0": rng.normal(size=(4, 6)) * 10.0 ** float(rng.integers(-3, 4))})
        u = (before - params[0][1].data) / lr
        rms = np.sqrt(np.mean(u * u))
        assert rms <= clip * (1 + 1e-12)


def test_adafactor_determinism():
    rng = np.random.default_rng(3)
    init = rng.normal(size=(3, 3))
    grads = [rng.normal(size=(3, 3)) for _ in range(20)]
    results = []
    for _ in range(2):
        params = named(init.copy())
        opt = Adafactor(params, lr=0.3)
        for g in grads:
            opt.step({"p0": g})
        results.append(params[0][1].data.copy())
    np.testing.assert_array_equal(results[0], results[1])


def test_adafactor_shape_mismatch():
    params = named(np.zeros((2, 2)))
    with pytest.raises(ShapeMismatchError):
        Adafactor(params).step({"p0": np.zeros((3, 2))})


def test_adafactor_nonfinite_gradient_skips_step():
    params = named(np.ones((2, 2)))
    opt = Adafactor(params, lr=0.3)
    g = np.ones((2, 2))
    g[0, 0] = np.nan
    with pytest.warns(UserWarning, match="non-finite"):
        applied = opt.step({"p0": g})
    assert applied is False
    np.testing.assert_array_equal(params[0][1].data, np.ones((2, 2)))
    assert opt.t == 0


def test_adafactor_accumulators_positive_after_first_update():
    params = named(np.zeros((2, 3)), np.zeros(4))
    opt = Adafactor(params)
    opt.step({"p0": np.zeros((2, 3)), "p1": np.zeros(4)})
    assert np.all(opt._row["p0"] > 0) and np.all(opt._col["p0"] > 0)
    assert np.all(opt._full["p1"] > 0)


# ---------------------------------------------------------------------------
# sgd


def test_sgd_zero_lr_no_change():
    params = named(np.array([1.0, 2.0]))
    Sgd(params, lr=0.0).step({"p0": np.array([5.0, 5.0])})
    np.testing.assert_array_equal(params[0][1].data, [1.0, 2.0])


def test_sgd_unit_lr_grad_equals_param_zeroes():
    init = np.array([[1.5, -2.0], [0.25, 3.0]])
    params = named(init.copy())
    Sgd(params, lr=1.0).step({"p0": init})
    np.testing.assert_array_equal(params[0][1].data, np.zeros((2, 2)))


def test_sgd_quadratic_bowl_converges_like_closed_form():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Sgd([("x", x)], lr=0.1)
    for step in range(200):
        opt.step({"x": 2.0 * x.data})
        assert x.data[0] == pytest.approx(0.8 ** (step + 1), rel=1e-9)
    assert abs(x.data[0]) < 1e-6


def test_sgd_shape_mismatch():
    params = named(np.zeros(3))
    with pytest.raises(ShapeMismatchError):
        Sgd(params, lr=0.1).step({"p0": np.zeros(4)})


def test_make_optimizer_dispatch():
    params = named(np.zeros(2))
    assert isinstance(make_optimizer("adafactor", params, lr=0.3), Adafactor)
    assert isinstance(make_optimizer("sgd", params, lr=0.1), Sgd)
    with pytest.raises(ValueError):
        make_optimizer("adam", params, lr=0.1)
