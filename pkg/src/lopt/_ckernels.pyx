# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of lopt._pykernels.

Same signatures and numerical conventions; fused loops over contiguous
float64 buffers. The payoff is per-call overhead: the arrays here are
tiny (sequence lengths ~20, widths ~64), so the numpy versions spend a
large fraction of their time in dispatch and temporaries.
"""

import numpy as np

from libc.math cimport exp, expm1, log, sqrt, tanh

NAME = "compiled"

cdef double GELU_SCALE = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_CUBIC = 0.044715


def nonlin_fwd(x, kind, double alpha=1.0):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xa)
    cdef double[::1] xv = xa.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v, inner
    if kind == "relu":
        for i in range(n):
            v = xv[i]
            ov[i] = v if v > 0.0 else 0.0
    elif kind == "elu":
        for i in range(n):
            v = xv[i]
            ov[i] = v if v > 0.0 else alpha * expm1(v)
    elif kind == "gelu":
        for i in range(n):
            v = xv[i]
            inner = GELU_SCALE * (v + GELU_CUBIC * v * v * v)
            ov[i] = 0.5 * v * (1.0 + tanh(inner))
    else:
        raise ValueError(f"unknown nonlinearity kind {kind!r}")
    return out


cdef _deriv_into(double[::1] xv, double[::1] dv, str kind, double alpha):
    # relu derivative is 0 at x == 0; elu uses 1 there (right limit)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v, t, inner
    if kind == "relu":
        for i in range(n):
            dv[i] = 1.0 if xv[i] > 0.0 else 0.0
    elif kind == "elu":
        for i in range(n):
            v = xv[i]
            if v >= 0.0:
                dv[i] = 1.0
            else:
                dv[i] = alpha * exp(v)
    elif kind == "gelu":
        for i in range(n):
            v = xv[i]
            inner = GELU_SCALE * (v + GELU_CUBIC * v * v * v)
            t = tanh(inner)
            dv[i] = (
                0.5 * (1.0 + t)
                + 0.5 * v * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * v * v)
            )
    else:
        raise ValueError(f"unknown nonlinearity kind {kind!r}")


def nonlin_bwd(x, dy, kind, double alpha=1.0):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    dya = np.ascontiguousarray(dy, dtype=np.float64)
    out = np.empty_like(xa)
    _deriv_into(xa.reshape(-1), out.reshape(-1), kind, alpha)
    cdef double[::1] gv = dya.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(ov.shape[0]):
        ov[i] *= gv[i]
    return out


def nonlin_fwd_deriv(x, kind, double alpha=1.0):
    """(value, derivative) in one pass, for tape nodes that will backprop.

    Fused so gelu evaluates its tanh once for both outputs.
    """
    xa = np.ascontiguousarray(x, dtype=np.float64)
    y = np.empty_like(xa)
    deriv = np.empty_like(xa)
    cdef double[::1] xv = xa.reshape(-1)
    cdef double[::1] yv = y.reshape(-1)
    cdef double[::1] dv = deriv.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v, t, e, inner
    if kind == "relu":
        for i in range(n):
            v = xv[i]
            if v > 0.0:
                yv[i] = v
                dv[i] = 1.0
            else:
                yv[i] = 0.0
                dv[i] = 0.0
    elif kind == "elu":
        for i in range(n):
            v = xv[i]
            if v >= 0.0:
                yv[i] = v
                dv[i] = 1.0
            else:
                yv[i] = alpha * expm1(v)  # expm1 keeps accuracy near the kink
                dv[i] = alpha * exp(v)
    elif kind == "gelu":
        for i in range(n):
            v = xv[i]
            inner = GELU_SCALE * (v + GELU_CUBIC * v * v * v)
            t = tanh(inner)
            yv[i] = 0.5 * v * (1.0 + t)
            dv[i] = (
                0.5 * (1.0 + t)
                + 0.5 * v * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * v * v)
            )
    else:
        raise ValueError(f"unknown nonlinearity kind {kind!r}")
    return y, deriv


def layernorm_fwd(x, gamma, beta, double eps):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t rows = xa.shape[0], cols = xa.shape[1]
    y = np.empty_like(xa)
    mean = np.empty(rows)
    rstd = np.empty(rows)
    cdef double[:, ::1] xv = xa
    cdef double[:, ::1] yv = y
    cdef double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
    cdef double[::1] mv = mean
    cdef double[::1] rv = rstd
    cdef Py_ssize_t i, j
    cdef double m, var, d, r
    for i in range(rows):
        m = 0.0
        for j in range(cols):
            m += xv[i, j]
        m /= cols
        var = 0.0
        for j in range(cols):
            d = xv[i, j] - m
            var += d * d
        var /= cols
        r = 1.0 / sqrt(var + eps)
        mv[i] = m
        rv[i] = r
        for j in range(cols):
            yv[i, j] = (xv[i, j] - m) * r * gv[j] + bv[j]
    return y, mean, rstd


def layernorm_bwd(x, gamma, mean, rstd, dy):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    dya = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t rows = xa.shape[0], cols = xa.shape[1]
    dx = np.empty_like(xa)
    dgamma = np.zeros(cols)
    dbeta = np.zeros(cols)
    cdef double[:, ::1] xv = xa
    cdef double[:, ::1] gyv = dya
    cdef double[:, ::1] dxv = dx
    cdef double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mean, dtype=np.float64)
    cdef double[::1] rv = np.ascontiguousarray(rstd, dtype=np.float64)
    cdef double[::1] dgv = dgamma
    cdef double[::1] dbv = dbeta
    cdef Py_ssize_t i, j
    cdef double m, r, xhat, dxhat, m1, m2
    for i in range(rows):
        m = mv[i]
        r = rv[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            xhat = (xv[i, j] - m) * r
            dxhat = gyv[i, j] * gv[j]
            m1 += dxhat
            m2 += dxhat * xhat
            dgv[j] += gyv[i, j] * xhat
            dbv[j] += gyv[i, j]
        m1 /= cols
        m2 /= cols
        for j in range(cols):
            xhat = (xv[i, j] - m) * r
            dxhat = gyv[i, j] * gv[j]
            dxv[i, j] = (dxhat - m1 - xhat * m2) * r
    return dx, dgamma, dbeta


def softmax_xent_fwd(logits, targets):
    la = np.ascontiguousarray(logits, dtype=np.float64)
    ta = np.ascontiguousarray(targets, dtype=np.intp)
    cdef Py_ssize_t rows = la.shape[0], cols = la.shape[1]
    losses = np.empty(rows)
    probs = np.empty_like(la)
    cdef double[:, ::1] lv = la
    cdef double[:, ::1] pv = probs
    cdef double[::1] lossv = losses
    cdef Py_ssize_t[::1] tv = ta
    cdef Py_ssize_t i, j
    cdef double m, s, z
    for i in range(rows):
        m = lv[i, 0]
        for j in range(1, cols):
            if lv[i, j] > m:
                m = lv[i, j]
        s = 0.0
        for j in range(cols):
            z = exp(lv[i, j] - m)
            pv[i, j] = z
            s += z
        for j in range(cols):
            pv[i, j] /= s
        lossv[i] = log(s) - (lv[i, tv[i]] - m)
    return losses, probs


def softmax_xent_bwd(probs, targets, dlosses):
    pa = np.ascontiguousarray(probs, dtype=np.float64)
    ta = np.ascontiguousarray(targets, dtype=np.intp)
    da = np.ascontiguousarray(dlosses, dtype=np.float64)
    cdef Py_ssize_t rows = pa.shape[0], cols = pa.shape[1]
    dlogits = np.empty_like(pa)
    cdef double[:, ::1] pv = pa
    cdef double[:, ::1] ov = dlogits
    cdef double[::1] dv = da
    cdef Py_ssize_t[::1] tv = ta
    cdef Py_ssize_t i, j
    for i in range(rows):
        for j in range(cols):
            ov[i, j] = pv[i, j] * dv[i]
        ov[i, tv[i]] -= dv[i]
    return dlogits


def causal_attention_fwd(q, k, v, Py_ssize_t n_heads):
    qa = np.ascontiguousarray(q, dtype=np.float64)
    ka = np.ascontiguousarray(k, dtype=np.float64)
    va = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t t = qa.shape[0], d = qa.shape[1]
    cdef Py_ssize_t dh = d // n_heads
    cdef double scale = 1.0 / sqrt(<double> dh)
    out = np.empty_like(qa)
    attn = np.zeros((n_heads, t, t))
    row_buf = np.empty(t)
    cdef double[:, ::1] qv = qa
    cdef double[:, ::1] kv = ka
    cdef double[:, ::1] vv = va
    cdef double[:, ::1] ov = out
    cdef double[:, :, ::1] av = attn
    cdef double[::1] row = row_buf
    cdef Py_ssize_t h, i, j, c, base
    cdef double s, m, tot, acc
    for h in range(n_heads):
        base = h * dh
        for i in range(t):
            m = -1e308
            for j in range(i + 1):
                s = 0.0
                for c in range(dh):
                    s += qv[i, base + c] * kv[j, base + c]
                s *= scale
                row[j] = s
                if s > m:
                    m = s
            tot = 0.0
            for j in range(i + 1):
                s = exp(row[j] - m)
                row[j] = s
                tot += s
            for j in range(i + 1):
                av[h, i, j] = row[j] / tot
            for c in range(dh):
                acc = 0.0
                for j in range(i + 1):
                    acc += av[h, i, j] * vv[j, base + c]
                ov[i, base + c] = acc
    return out, attn


def causal_attention_bwd(q, k, v, attn, dout, Py_ssize_t n_heads):
    qa = np.ascontiguousarray(q, dtype=np.float64)
    ka = np.ascontiguousarray(k, dtype=np.float64)
    va = np.ascontiguousarray(v, dtype=np.float64)
    aa = np.ascontiguousarray(attn, dtype=np.float64)
    doa = np.ascontiguousarray(dout, dtype=np.float64)
    cdef Py_ssize_t t = qa.shape[0], d = qa.shape[1]
    cdef Py_ssize_t dh = d // n_heads
    cdef double scale = 1.0 / sqrt(<double> dh)
    dq = np.zeros_like(qa)
    dk = np.zeros_like(ka)
    dv = np.zeros_like(va)
    da_buf = np.empty(t)
    cdef double[:, ::1] qv = qa
    cdef double[:, ::1] kv = ka
    cdef double[:, ::1] vv = va
    cdef double[:, :, ::1] av = aa
    cdef double[:, ::1] gv = doa
    cdef double[:, ::1] dqv = dq
    cdef double[:, ::1] dkv = dk
    cdef double[:, ::1] dvv = dv
    cdef double[::1] da = da_buf
    cdef Py_ssize_t h, i, j, c, base
    cdef double s, dsum, ds
    for h in range(n_heads):
        base = h * dh
        for i in range(t):
            dsum = 0.0
            for j in range(i + 1):
                s = 0.0
                for c in range(dh):
                    s += gv[i, base + c] * vv[j, base + c]
                da[j] = s
                dsum += av[h, i, j] * s
            for j in range(i + 1):
                ds = av[h, i, j] * (da[j] - dsum)
                for c in range(dh):
                    dqv[i, base + c] += ds * kv[j, base + c] * scale
                    dkv[j, base + c] += ds * qv[i, base + c] * scale
                    dvv[j, base + c] += av[h, i, j] * gv[i, base + c]
    return dq, dk, dv
