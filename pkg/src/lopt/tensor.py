"""Dense float64 tensors with tape-based reverse-mode autodiff.

The op set is exactly what a small decoder-only transformer and the
low-rank prompt factorizations need: matmul, elementwise arithmetic,
row gather/select/concat, layer norm, the three nonlinearities, fused
causal attention, and softmax cross-entropy. Everything is float64 so
finite-difference gradient checks are meaningful.

Graphs are built eagerly: each op returns a new Tensor holding its
parents and a backward closure. `backward(loss)` walks the graph in
reverse topological order and accumulates gradients onto requires_grad
leaves only; intermediate gradients live in a scratch dict for the
duration of the call, so repeated backward calls accumulate exactly one
extra contribution per call. A graph is freed by dropping references to
its root (there is no retained global tape).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .exceptions import NonScalarLossError, ShapeMismatchError


@dataclass(frozen=True)
class Nonlinearity:
    """Elementwise activation: kind in {relu, elu, gelu}, alpha used by elu only."""

    kind: str
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("relu", "elu", "gelu"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")


RELU = Nonlinearity("relu")
ELU = Nonlinearity("elu")
GELU = Nonlinearity("gelu")


class Tensor:
    """A float64 array plus optional gradient buffer and graph linkage.

    Leaves are created directly; op results carry `_parents` and a
    `_backward` closure. Only leaves with requires_grad=True ever hold a
    persistent `.grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A leaf sharing this tensor's data, outside any graph."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Reverse-mode sweep from a scalar loss.

    Populates `.grad` on every requires_grad leaf reachable from `loss`;
    leaves with requires_grad=False are left untouched. Calling again
    without zeroing adds another full contribution.
    """
    if not isinstance(loss, Tensor) or loss.shape != ():
        got = loss.shape if isinstance(loss, Tensor) else type(loss)
        raise NonScalarLossError(f"backward requires a scalar loss, got {got}")

    order = _topo_order(loss)
    grads = {id(loss): np.ones((), dtype=np.float64)}

    def sink(parent, contribution):
        if not parent.requires_grad:
            return
        key = id(parent)
        held = grads.get(key)
        grads[key] = contribution if held is None else held + contribution

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            node._backward(g, sink)
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g


def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# ops


def matmul(a, b):
    """Matrix product with numpy semantics for 1-D operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeMismatchError(f"matmul: unsupported shapes {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g, sink):
        if a.ndim == 2 and b.ndim == 2:
            sink(a, g @ bd.T)
            sink(b, ad.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            sink(a, bd @ g)
            sink(b, np.outer(ad, g))
        else:  # 2-D @ 1-D
            sink(a, np.outer(g, bd))
            sink(b, ad.T @ g)

    return _node(ad @ bd, (a, b), bwd)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}")

    def bwd(g, sink):
        sink(a, g)
        sink(b, g)

    return _node(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"sub: {a.shape} vs {b.shape}")

    def bwd(g, sink):
        sink(a, g)
        sink(b, -g)

    return _node(a.data - b.data, (a, b), bwd)


def mul(a, b):
    """Elementwise (Hadamard) product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g, sink):
        sink(a, g * bd)
        sink(b, g * ad)

    return _node(ad * bd, (a, b), bwd)


def scale(x, s):
    x = _as_tensor(x)
    s = float(s)

    def bwd(g, sink):
        sink(x, g * s)

    return _node(x.data * s, (x,), bwd)


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)

    def bwd(g, sink):
        sink(x, np.full(x.shape, float(g)))

    return _node(x.data.sum(), (x,), bwd)


def transpose(x):
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeMismatchError(f"transpose: need 2-D, got {x.shape}")

    def bwd(g, sink):
        sink(x, np.ascontiguousarray(g.T))

    return _node(np.ascontiguousarray(x.data.T), (x,), bwd)


def gather_rows(src, indices):
    """Row gather (embedding lookup). Duplicate indices accumulate in backward."""
    src = _as_tensor(src)
    if src.ndim != 2:
        raise ShapeMismatchError(f"gather_rows: need 2-D source, got {src.shape}")
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)

    def bwd(g, sink):
        if src.requires_grad:
            acc = np.zeros(src.shape)
            np.add.at(acc, idx, g)
            sink(src, acc)

    return _node(src.data[idx].copy(), (src,), bwd)


def select_row(x, index):
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeMismatchError(f"select_row: need 2-D, got {x.shape}")
    i = int(index)

    def bwd(g, sink):
        acc = np.zeros(x.shape)
        acc[i] = g
        sink(x, acc)

    return _node(x.data[i].copy(), (x,), bwd)


def concat_rows(a, b):
    """Stack a above b; either may have zero rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"concat_rows: {a.shape} vs {b.shape}")
    na = a.shape[0]

    def bwd(g, sink):
        sink(a, g[:na].copy())
        sink(b, g[na:].copy())

    return _node(np.concatenate([a.data, b.data], axis=0), (a, b), bwd)


def apply_nonlinearity(x, f):
    x = _as_tensor(x)
    if not x.requires_grad:
        return Tensor(backend.kernels.nonlin_fwd(x.data, f.kind, f.alpha))
    y, deriv = backend.kernels.nonlin_fwd_deriv(x.data, f.kind, f.alpha)

    def bwd(g, sink):
        sink(x, g * deriv)

    return _node(y, (x,), bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Row-wise layer normalization with learned gain/shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatchError(
            f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    y, mean, rstd = backend.kernels.layernorm_fwd(x.data, gamma.data, beta.data, eps)
    xd, gd = x.data, gamma.data

    def bwd(g, sink):
        dx, dgamma, dbeta = backend.kernels.layernorm_bwd(xd, gd, mean, rstd, g)
        sink(x, dx)
        sink(gamma, dgamma)
        sink(beta, dbeta)

    return _node(y, (x, gamma, beta), bwd)


def causal_attention(q, k, v, n_heads):
    """Fused multi-head causal self-attention over (t, d) inputs."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if not (q.shape == k.shape == v.shape) or q.ndim != 2:
        raise ShapeMismatchError(
            f"causal_attention: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if q.shape[1] % n_heads != 0:
        raise ShapeMismatchError(
            f"causal_attention: width {q.shape[1]} not divisible by {n_heads} heads"
        )
    out, attn = backend.kernels.causal_attention_fwd(q.data, k.data, v.data, n_heads)
    qd, kd, vd = q.data, k.data, v.data

    def bwd(g, sink):
        dq, dk, dv = backend.kernels.causal_attention_bwd(qd, kd, vd, attn, g, n_heads)
        sink(q, dq)
        sink(k, dk)
        sink(v, dv)

    return _node(out, (q, k, v), bwd)


def softmax_cross_entropy(logits, target):
    """-log softmax(logits)[target] for a 1-D logit vector."""
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeMismatchError(f"softmax_cross_entropy: need 1-D logits, got {logits.shape}")
    t = int(target)
    if not 0 <= t < logits.shape[0]:
        raise IndexError(f"target {t} out of range for {logits.shape[0]} classes")
    targets = np.array([t], dtype=np.intp)
    losses, probs = backend.kernels.softmax_xent_fwd(logits.data[None, :], targets)

    def bwd(g, sink):
        d = backend.kernels.softmax_xent_bwd(probs, targets, np.array([float(g)]))
        sink(logits, d[0])

    return _node(losses[0], (logits,), bwd)


def softmax_cross_entropy_rows(logits, targets):
    """Mean cross-entropy over rows of (L, V) logits against L targets."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeMismatchError(f"softmax_cross_entropy_rows: got {logits.shape}")
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    if t.shape[0] != logits.shape[0]:
        raise ShapeMismatchError(
            f"softmax_cross_entropy_rows: {logits.shape[0]} rows vs {t.shape[0]} targets"
        )
    if t.size and (t.min() < 0 or t.max() >= logits.shape[1]):
        raise IndexError(f"target out of range for {logits.shape[1]} classes")
    losses, probs = backend.kernels.softmax_xent_fwd(logits.data, t)
    n = logits.shape[0]

    def bwd(g, sink):
        d = backend.kernels.softmax_xent_bwd(probs, t, np.full(n, float(g) / n))
        sink(logits, d)

    return _node(losses.mean(), (logits,), bwd)
