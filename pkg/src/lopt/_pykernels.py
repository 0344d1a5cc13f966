"""Pure-numpy implementations of the hot kernels.

This module is the fallback backend; `lopt._ckernels` is the compiled
twin with identical signatures. Both operate on C-contiguous float64
arrays and return freshly allocated arrays. Row convention: 2-D inputs
are (sequence, feature).
"""

import numpy as np

NAME = "python"

_GELU_SCALE = 0.7978845608028654  # sqrt(2/pi), tanh-form gelu
_GELU_CUBIC = 0.044715


def nonlin_fwd(x, kind, alpha=1.0):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "elu":
        return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    if kind == "gelu":
        inner = _GELU_SCALE * (x + _GELU_CUBIC * x * x * x)
        return 0.5 * x * (1.0 + np.tanh(inner))
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


def _nonlin_deriv(x, kind, alpha):
    # relu derivative is 0 at x == 0; elu uses 1 there (the right limit,
    # equal to the left limit when alpha == 1)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "elu":
        d = np.where(x > 0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))
        d[x == 0] = 1.0
        return d
    if kind == "gelu":
        inner = _GELU_SCALE * (x + _GELU_CUBIC * x * x * x)
        t = np.tanh(inner)
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_SCALE * (
            1.0 + 3.0 * _GELU_CUBIC * x * x
        )
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


def nonlin_bwd(x, dy, kind, alpha=1.0):
    """Gradient w.r.t. x, recomputed from the saved input."""
    return _nonlin_deriv(x, kind, alpha) * dy


def nonlin_fwd_deriv(x, kind, alpha=1.0):
    """(value, derivative) in one pass, for tape nodes that will backprop."""
    return nonlin_fwd(x, kind, alpha), _nonlin_deriv(x, kind, alpha)


def layernorm_fwd(x, gamma, beta, eps):
    """Row-wise layer norm. Returns (y, mean, rstd); mean/rstd feed the backward."""
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    var = np.mean(xc * xc, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd[:, None] * gamma + beta
    return y, mean, rstd


def layernorm_bwd(x, gamma, mean, rstd, dy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1)
    m2 = np.mean(dxhat * xhat, axis=1)
    dx = (dxhat - m1[:, None] - xhat * m2[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return dx, dgamma, dbeta


def softmax_xent_fwd(logits, targets):
    """Per-row softmax cross-entropy, max-subtracted for stability.

    logits: (L, V), targets: (L,) int. Returns (losses (L,), probs (L, V)).
    """
    m = logits.max(axis=1)
    z = logits - m[:, None]
    e = np.exp(z)
    s = e.sum(axis=1)
    probs = e / s[:, None]
    rows = np.arange(logits.shape[0])
    losses = np.log(s) - z[rows, targets]
    return losses, probs


def softmax_xent_bwd(probs, targets, dlosses):
    dlogits = probs * dlosses[:, None]
    rows = np.arange(probs.shape[0])
    dlogits[rows, targets] -= dlosses
    return dlogits


def causal_attention_fwd(q, k, v, n_heads):
    """Multi-head causal self-attention, fused into a single op.

    q, k, v: (t, d) with d divisible by n_heads; heads are contiguous
    column blocks. Returns (out (t, d), attn (n_heads, t, t)); attn is
    the saved softmax weights for the backward pass.
    """
    t, d = q.shape
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)
    out = np.empty_like(q)
    attn = np.empty((n_heads, t, t))
    iu = np.triu_indices(t, k=1)
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) * scale
        scores[iu] = -np.inf
        m = scores.max(axis=1)
        e = np.exp(scores - m[:, None])
        a = e / e.sum(axis=1)[:, None]
        attn[h] = a
        out[:, sl] = a @ v[:, sl]
    return out, attn


def causal_attention_bwd(q, k, v, attn, dout, n_heads):
    t, d = q.shape
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        a = attn[h]
        da = dout[:, sl] @ v[:, sl].T
        dv[:, sl] = a.T @ dout[:, sl]
        # softmax backward per row; masked entries have a == 0, so ds == 0 there
        ds = a * (da - np.sum(da * a, axis=1)[:, None])
        dq[:, sl] = (ds @ k[:, sl]) * scale
        dk[:, sl] = (ds.T @ q[:, sl]) * scale
    return dq, dk, dv
