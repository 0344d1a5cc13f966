"""Adafactor (factored second moments, update clipping) and plain SGD.

Adafactor follows the standard update with a fixed learning rate and
no relative-step scaling, warmup, momentum, or weight decay:

    beta_t = 1 - t**(-decay_exponent)
    R <- beta_t * R + (1 - beta_t) * row_mean(G^2 + eps1)
    C <- beta_t * C + (1 - beta_t) * col_mean(G^2 + eps1)
    Vhat = outer(R, C) / mean(R)
    u = G / sqrt(Vhat)
    u <- u / max(1, rms(u) / clip_threshold)
    param <- param - lr * u

Parameters with fewer than two dimensions keep a full accumulator
instead of the R/C factorization. eps2 is carried in the state for
config compatibility; it would only enter a relative-step schedule,
which is deliberately not implemented.
"""

from __future__ import annotations

import warnings

import numpy as np

from .exceptions import ShapeMismatchError


def _rms(x):
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def _safe_div_sqrt(g, v):
    # 0/0 -> 0: with eps1 = 0 and a zero gradient the accumulators stay
    # zero and the update must be exactly zero.
    out = np.zeros_like(g)
    np.divide(g, np.sqrt(v), out=out, where=v > 0)
    return out


class Adafactor:
    def __init__(
        self,
        params,
        lr=0.3,
        eps1=1e-30,
        eps2=1e-3,
        clip_threshold=1.0,
        decay_exponent=0.8,
    ):
        """params: list of (name, Tensor) pairs; 2-D tensors get factored state."""
        self.params = list(params)
        self.lr = lr
        self.eps1 = eps1
        self.eps2 = eps2
        self.clip_threshold = clip_threshold
        self.decay_exponent = decay_exponent
        self.t = 0
        self._row = {}
        self._col = {}
        self._full = {}
        for name, p in self.params:
            if p.ndim >= 2:
                self._row[name] = np.zeros(p.shape[0])
                self._col[name] = np.zeros(p.shape[1])
            else:
                self._full[name] = np.zeros(p.shape)

    def step(self, grads=None):
        """Apply one update. grads defaults to each tensor's .grad.

        Returns True if the step was applied; a non-finite gradient is
        reported via warnings and the whole step is skipped (False).
        """
        if grads is None:
            grads = {name: p.grad for name, p in self.params}
        for name, p in self.params:
            g = grads.get(name)
            if g is None:
                raise ShapeMismatchError(f"adafactor: missing gradient for {name!r}")
            if g.shape != p.shape:
                raise ShapeMismatchError(
                    f"adafactor: gradient shape {g.shape} != param shape {p.shape} for {name!r}"
                )
            if not np.all(np.isfinite(g)):
                warnings.warn(f"adafactor: non-finite gradient for {name!r}, step skipped")
                return False

        self.t += 1
        beta = 1.0 - self.t ** (-self.decay_exponent)
        for name, p in self.params:
            g = np.asarray(grads[name], dtype=np.float64)
            g2 = g * g + self.eps1
            if p.ndim >= 2:
                r = self._row[name]
                c = self._col[name]
                r *= beta
                r += (1.0 - beta) * g2.mean(axis=1)
                c *= beta
                c += (1.0 - beta) * g2.mean(axis=0)
                vhat = np.outer(r, c) / r.mean() if r.mean() > 0 else np.zeros(p.shape)
                u = _safe_div_sqrt(g, vhat)
            else:
                v = self._full[name]
                v *= beta
                v += (1.0 - beta) * g2
                u = _safe_div_sqrt(g, v)
            u /= max(1.0, _rms(u) / self.clip_threshold)
            p.data -= self.lr * u
        return True


class Sgd:
    """Stateless gradient descent, the sanity baseline."""

    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def step(self, grads=None):
        if grads is None:
            grads = {name: p.grad for name, p in self.params}
        for name, p in self.params:
            g = grads.get(name)
            if g is None:
                raise ShapeMismatchError(f"sgd: missing gradient for {name!r}")
            if g.shape != p.shape:
                raise ShapeMismatchError(
                    f"sgd: gradient shape {g.shape} != param shape {p.shape} for {name!r}"
                )
        for name, p in self.params:
            p.data -= self.lr * np.asarray(grads[name], dtype=np.float64)
        return True


def make_optimizer(kind, params, lr, **kwargs):
    if kind == "adafactor":
        return Adafactor(params, lr=lr, **kwargs)
    if kind == "sgd":
        return Sgd(params, lr=lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")
