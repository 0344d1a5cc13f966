"""The three prompt parameterizations and their parameter accounting.

Each parameterization materializes an (n, d) soft prompt on the tape:

    full:   X itself, n*d trainable values
    lopt1:  X = U V           with U (n, r), V (r, d); r*(n+d) trainable
    lopt2:  X = sigma(X0 U) V with fixed X0 (n, d), U (d, r), V (r, d);
            2*r*d trainable, X0 never receives gradient

All trainable matrices (and X0) are drawn i.i.d. uniform on [-0.5, 0.5]
from a seeded generator.
"""

from __future__ import annotations

import numpy as np

from . import serialize, tensor as T
from .exceptions import CheckpointError, ConfigError
from .tensor import ELU, Nonlinearity, Tensor

METHODS = ("full", "lopt1", "lopt2")

INIT_LOW, INIT_HIGH = -0.5, 0.5


def default_rank(n):
    """Rank used when a config leaves r unset: floor(n/4)."""
    return n // 4


def _validate_dims(method, n, d, r):
    if method not in METHODS:
        raise ConfigError(f"unknown prompt method {method!r}")
    if n < 1 or d < 1:
        raise ConfigError(f"prompt dims must be positive, got n={n}, d={d}")
    if method != "full" and (r is None or r < 1):
        raise ConfigError(f"{method} requires rank r >= 1, got {r}")


class FullPrompt:
    method = "full"

    def __init__(self, x):
        self.x = x
        self.n, self.d = x.shape

    def materialize(self):
        return self.x

    def trainable(self):
        return [("x", self.x)]


class LoPT1:
    """Rank-r product of two trainable factors."""

    method = "lopt1"

    def __init__(self, u, v):
        self.u = u
        self.v = v
        self.n = u.shape[0]
        self.r = u.shape[1]
        self.d = v.shape[1]

    def materialize(self):
        return T.matmul(self.u, self.v)

    def trainable(self):
        return [("u", self.u), ("v", self.v)]


class LoPT2:
    """Nonlinear rank-r map of a fixed random base prompt."""

    method = "lopt2"

    def __init__(self, x0, u, v, sigma):
        self.x0 = x0  # requires_grad stays False for the whole run
        self.u = u
        self.v = v
        self.sigma = sigma
        self.n, self.d = x0.shape
        self.r = u.shape[1]

    def materialize(self):
        return T.matmul(T.apply_nonlinearity(T.matmul(self.x0, self.u), self.sigma), self.v)

    def trainable(self):
        return [("u", self.u), ("v", self.v)]


def init_prompt(method, n, d, r=None, sigma=ELU, seed=0):
    """Build a freshly initialized parameterization, deterministic per seed."""
    _validate_dims(method, n, d, r)
    rng = np.random.default_rng([int(seed), 0xA11CE])

    def draw(*shape):
        return Tensor(rng.uniform(INIT_LOW, INIT_HIGH, size=shape), requires_grad=True)

    if method == "full":
        return FullPrompt(draw(n, d))
    if method == "lopt1":
        return LoPT1(draw(n, r), draw(r, d))
    x0 = Tensor(rng.uniform(INIT_LOW, INIT_HIGH, size=(n, d)), requires_grad=False)
    return LoPT2(x0, draw(d, r), draw(r, d), sigma)


def materialize(p):
    return p.materialize()


def trainable_parameters(p):
    """Named trainable tensors, in optimizer binding order. X0 is never included."""
    return p.trainable()


def parameter_count(method, n, d, r=None):
    _validate_dims(method, n, d, r)
    if method == "full":
        return n * d
    if method == "lopt1":
        return r * (n + d)
    return 2 * r * d


def reduction_rate(method, n, d, r=None, baseline_n=None, baseline_d=None):
    """Signed percent change of trainable parameters vs a full-prompt
    baseline of baseline_n x baseline_d, to two decimals."""
    if baseline_n is None:
        baseline_n = n
    if baseline_d is None:
        baseline_d = d
    base = baseline_n * baseline_d
    if base == 0:
        raise ConfigError("reduction_rate: zero-parameter baseline")
    count = parameter_count(method, n, d, r)
    return round(100.0 * (count / base - 1.0), 2)


def save_prompt(p, path):
    doc = {
        "format": serialize.FORMAT,
        "method": p.method,
        "n": p.n,
        "d": p.d,
        "r": getattr(p, "r", None),
        "sigma": p.sigma.kind if isinstance(p, LoPT2) else None,
        "tensors": {name: serialize.tensor_to_json(t.data) for name, t in _all_tensors(p)},
    }
    serialize.dump_document(doc, path)


def load_prompt(path):
    doc = serialize.load_document(path, expected_keys=("method", "n", "d", "tensors"))
    method = doc["method"]
    tensors = {k: serialize.tensor_from_json(v) for k, v in doc["tensors"].items()}
    try:
        if method == "full":
            return FullPrompt(Tensor(tensors["x"], requires_grad=True))
        if method == "lopt1":
            return LoPT1(
                Tensor(tensors["u"], requires_grad=True),
                Tensor(tensors["v"], requires_grad=True),
            )
        if method == "lopt2":
            return LoPT2(
                Tensor(tensors["x0"], requires_grad=False),
                Tensor(tensors["u"], requires_grad=True),
                Tensor(tensors["v"], requires_grad=True),
                Nonlinearity(doc.get("sigma") or "elu"),
            )
    except KeyError as e:
        raise CheckpointError(f"{path}: missing tensor {e}") from e
    raise CheckpointError(f"{path}: unknown prompt method {method!r}")


def _all_tensors(p):
    if isinstance(p, LoPT2):
        return [("x0", p.x0)] + p.trainable()
    return p.trainable()
