"""Independent numerical oracles: finite-difference gradients and a
hand-rolled one-sided Jacobi SVD for rank measurement.

These deliberately avoid the tape and numpy's SVD so they can serve as
the second route in every dual check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteInputError

# Relative error floor: coordinates where both gradients are below this
# magnitude compare against the floor instead, so fdiff noise on
# near-zero gradients does not produce spurious failures while absolute
# deviations above floor*threshold are still caught.
REL_ERR_FLOOR = 1e-4


def finite_diff_grad(f, params, eps=1e-5):
    """Central-difference gradient of f w.r.t. a list of arrays.

    f must be deterministic and take the full params list. Returns one
    array per parameter, same shapes.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = [np.array(p, dtype=np.float64, copy=True) for p in params]
    grads = []
    for pi, p in enumerate(work):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = f(work)
            flat[j] = orig - eps
            f_minus = f(work)
            flat[j] = orig
            gflat[j] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_errors(analytic, numeric, floor=REL_ERR_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


@dataclass
class GradReport:
    """Per-parameter comparison of tape gradients against finite differences."""

    eps: float
    threshold: float
    per_param: dict = field(default_factory=dict)  # name -> {max_rel_err, mean_rel_err}

    @property
    def max_rel_err(self):
        if not self.per_param:
            return 0.0
        return max(v["max_rel_err"] for v in self.per_param.values())

    @property
    def passed(self):
        return self.max_rel_err < self.threshold

    def to_dict(self):
        return {
            "eps": self.eps,
            "threshold": self.threshold,
            "max_rel_err": self.max_rel_err,
            "passed": bool(self.passed),
            "per_param": self.per_param,
        }


def grad_report(names, analytic, numeric, eps=1e-5, threshold=1e-4):
    rep = GradReport(eps=eps, threshold=threshold)
    for name, a, n in zip(names, analytic, numeric):
        errs = relative_errors(a, n)
        rep.per_param[name] = {
            "max_rel_err": float(errs.max()) if errs.size else 0.0,
            "mean_rel_err": float(errs.mean()) if errs.size else 0.0,
        }
    return rep


# ---------------------------------------------------------------------------
# singular values via one-sided Jacobi (Hestenes) iteration

_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 60


def singular_values(x):
    """Descending singular values of a 2-D array, min(n, d) of them.

    One-sided Jacobi orthogonalization of the columns of the (possibly
    transposed) matrix; adequate and accurate for the small matrices
    this package materializes (dimensions up to a few thousand would be
    slow, up to ~64 is instant).
    """
    a = np.array(x, dtype=np.float64, copy=True)
    if a.ndim != 2:
        raise ValueError(f"singular_values: need 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInputError("singular_values: input has non-finite entries")
    if a.shape[0] < a.shape[1]:
        a = np.ascontiguousarray(a.T)
    n = a.shape[1]
    if n == 0 or a.shape[0] == 0:
        return np.zeros(min(a.shape))

    for _ in range(_JACOBI_MAX_SWEEPS):
        max_cos = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai = a[:, i]
                aj = a[:, j]
                gamma = float(ai @ aj)
                alpha = float(ai @ ai)
                beta = float(aj @ aj)
                norm2 = math.sqrt(alpha * beta)
                if norm2 == 0.0 or gamma == 0.0:
                    continue
                cos = abs(gamma) / norm2
                if cos > max_cos:
                    max_cos = cos
                if cos <= _JACOBI_TOL:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ai - s * aj
                new_j = s * ai + c * aj
                a[:, i] = new_i
                a[:, j] = new_j
        if max_cos <= _JACOBI_TOL:
            break

    svals = np.sqrt(np.sum(a * a, axis=0))
    svals[::-1].sort()
    return svals


def effective_rank(x, tol=1e-6):
    """Number of singular values above tol * largest; zero matrix has rank 0."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = singular_values(x)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


@dataclass
class RankReport:
    singular_values: list
    effective_rank: int
    tol: float

    def to_dict(self):
        return {
            "singular_values": [float(v) for v in self.singular_values],
            "effective_rank": self.effective_rank,
            "tol": self.tol,
        }


def rank_report(x, tol=1e-6):
    s = singular_values(x)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s > tol * s[0]))
    return RankReport(singular_values=list(s), effective_rank=rank, tol=tol)


# ---------------------------------------------------------------------------
# end-to-end gradient check over a full prompt-tuning path

KINK_MARGIN = 1e-4  # resample if any relu/elu input is this close to zero
_MAX_RESAMPLES = 50


def gradcheck_path(
    method,
    sigma_kind="elu",
    seed=0,
    n=4,
    d=16,
    r=2,
    eps=1e-5,
    threshold=1e-4,
):
    """Finite-difference check of d(loss)/d(trainable) through
    materialize -> frozen LM forward -> cross-entropy.

    Seeds whose relu/elu pre-activations fall within KINK_MARGIN of zero
    are rejected and redrawn, so central differences never straddle a
    kink.
    """
    from . import prompts
    from .model import ModelDims, TinyLM
    from .tensor import Nonlinearity, Tensor, backward, softmax_cross_entropy

    dims = ModelDims(
        vocab_size=16, embed_dim=d, layers=1, heads=2, ffn_mult=4, max_seq=n + 8
    )
    lm = TinyLM(dims, seed=seed * 7919 + 13)
    lm.freeze()
    token_ids = [seed % dims.vocab_size, (seed + 5) % dims.vocab_size, 3]
    target = (seed + 1) % dims.vocab_size
    sigma = Nonlinearity(sigma_kind)

    prompt = None
    for attempt in range(_MAX_RESAMPLES):
        cand = prompts.init_prompt(
            method, n=n, d=d, r=r, sigma=sigma, seed=seed + 10_000 * attempt
        )
        if method != "lopt2" or sigma_kind == "gelu":
            prompt = cand
            break
        pre = cand.x0.data @ cand.u.data
        if np.min(np.abs(pre)) > KINK_MARGIN:
            prompt = cand
            break
    if prompt is None:
        raise RuntimeError("could not find a kink-free sample for gradcheck")

    named = prompts.trainable_parameters(prompt)
    names = [name for name, _ in named]
    tensors = [t for _, t in named]

    def loss_value(arrays):
        saved = [t.data for t in tensors]
        for t, arr in zip(tensors, arrays):
            t.data = np.asarray(arr, dtype=np.float64)
        try:
            x = prompts.materialize(prompt)
            logits = lm.forward(x, lm.embed(token_ids))
            return softmax_cross_entropy(logits, target).item()
        finally:
            for t, s in zip(tensors, saved):
                t.data = s

    x = prompts.materialize(prompt)
    logits = lm.forward(x, lm.embed(token_ids))
    loss = softmax_cross_entropy(logits, target)
    for t in tensors:
        t.zero_grad()
    backward(loss)
    analytic = [t.grad.copy() for t in tensors]
    numeric = finite_diff_grad(loss_value, [t.data for t in tensors], eps=eps)
    return grad_report(names, analytic, numeric, eps=eps, threshold=threshold)
