"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float64 in tests, float32 allowed for
training speed). Ops build an implicit DAG through parent references; no op
broadcasts silently -- every shape rule is stated in the op itself and
violations raise ShapeMismatch with both shapes in the message.

numpy supplies array storage and BLAS kernels; all differentiation logic
lives here.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True
_debug_checks = False


def set_debug(enabled: bool) -> None:
    """Enable the NaN/Inf guard after every op (slow; test use)."""
    global _debug_checks
    _debug_checks = enabled


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES and not np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self.op})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _in_graph(t: Tensor) -> bool:
    return t.requires_grad or t.backward_fn is not None


def _make(out_data: np.ndarray, op: str, parents: tuple[Tensor, ...],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.op = op
    if _grad_enabled and any(_in_graph(p) for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _check_float(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.dtype not in _FLOAT_DTYPES:
            raise ShapeMismatch(f"{name}: expected float tensor, got dtype {t.data.dtype}")
    if len({t.data.dtype for t in ts}) > 1:
        raise ShapeMismatch(f"{name}: mixed dtypes {[str(t.data.dtype) for t in ts]}")


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D [m,k]@[k,n] or batched 3D [B,m,k]@[B,k,n] (equal batch dim)."""
    _check_float("matmul", a, b)
    ad, bd = a.data, b.data
    ok = (ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0]) or (
        ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1]
    )
    if not ok:
        raise ShapeMismatch(f"matmul: incompatible shapes {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g: np.ndarray) -> None:
        if ad.ndim == 2:
            if _in_graph(a):
                _accumulate(a, g @ bd.T)
            if _in_graph(b):
                _accumulate(b, ad.T @ g)
        else:
            if _in_graph(a):
                _accumulate(a, g @ bd.transpose(0, 2, 1))
            if _in_graph(b):
                _accumulate(b, ad.transpose(0, 2, 1) @ g)

    return _make(out, "matmul", (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; shapes must be identical."""
    _check_float("add", a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: shapes {a.shape} vs {b.shape}")

    def bw(g: np.ndarray) -> None:
        if _in_graph(a):
            _accumulate(a, g)
        if _in_graph(b):
            _accumulate(b, g)

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise subtract; shapes must be identical."""
    _check_float("sub", a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: shapes {a.shape} vs {b.shape}")

    def bw(g: np.ndarray) -> None:
        if _in_graph(a):
            _accumulate(a, g)
        if _in_graph(b):
            _accumulate(b, -g)

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise multiply; shapes must be identical."""
    _check_float("mul", a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: shapes {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bw(g: np.ndarray) -> None:
        if _in_graph(a):
            _accumulate(a, g * bd)
        if _in_graph(b):
            _accumulate(b, g * ad)

    return _make(ad * bd, "mul", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    _check_float("scale", a)
    c = float(c)

    def bw(g: np.ndarray) -> None:
        if _in_graph(a):
            _accumulate(a, g * c)

    return _make(a.data * c, "scale", (a,), bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add b over the trailing axes of x: b.shape == x.shape[-b.ndim:].

    The only sanctioned broadcast in the engine; the gradient of b sums over
    the leading axes of x.
    """
    _check_float("add_bias", x, b)
    if b.data.ndim > x.data.ndim or x.shape[x.data.ndim - b.data.ndim:] != b.shape:
        raise ShapeMismatch(f"add_bias: trailing axes of {x.shape} do not match {b.shape}")
    lead = tuple(range(x.data.ndim - b.data.ndim))

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            _accumulate(x, g)
        if _in_graph(b):
            _accumulate(b, g.sum(axis=lead) if lead else g)

    return _make(x.data + b.data, "add_bias", (x, b), bw)


def relu(x: Tensor) -> Tensor:
    _check_float("relu", x)
    mask = x.data > 0

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0), "relu", (x,), bw)


_GELU_C0 = math.sqrt(2.0 / math.pi)
_GELU_C1 = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU (smooth, so finite differences apply)."""
    _check_float("gelu", x)
    xd = x.data
    u = _GELU_C0 * (xd + _GELU_C1 * xd ** 3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * xd ** 2)
            local = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du
            _accumulate(x, g * local)

    return _make(out, "gelu", (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_float("softmax", x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            dot = (g * out).sum(axis=axis, keepdims=True)
            _accumulate(x, out * (g - dot))

    return _make(out, "softmax", (x,), bw)


_LN_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    gain and bias must be 1-D with length x.shape[-1].
    """
    _check_float("layer_norm", x, gain, bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs last dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (xd - mu) * inv_std
    out = xhat * gain.data + bias.data

    def bw(g: np.ndarray) -> None:
        if _in_graph(bias):
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if _in_graph(gain):
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if _in_graph(x):
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv_std * (dxhat - m1 - xhat * m2))

    return _make(out, "layer_norm", (x, gain, bias), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    _check_float("concat", *tensors)
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeMismatch(f"concat: ranks differ {tensors[0].shape} vs {t.shape}")
        for ax, (i, j) in enumerate(zip(base, other)):
            if ax != (axis % len(base)) and i != j:
                raise ShapeMismatch(f"concat: shapes {tensors[0].shape} vs {t.shape} on axis {ax}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if _in_graph(t):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, bw)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    _check_float("narrow", x)
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeMismatch(f"narrow: [{start},{stop}) out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            full = np.zeros_like(x.data)
            full[idx] = g
            _accumulate(x, full)

    return _make(x.data[idx].copy(), "narrow", (x,), bw)


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a [V, d] table by an integer index array."""
    _check_float("embedding_lookup", table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatch(f"embedding_lookup: indices must be integers, got {idx.dtype}")
    if table.data.ndim != 2:
        raise ShapeMismatch(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding_lookup: index out of range for table {table.shape}")

    def bw(g: np.ndarray) -> None:
        if _in_graph(table):
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
            _accumulate(table, dt)

    return _make(table.data[idx], "embedding_lookup", (table,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    _check_float("reshape", x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeMismatch(f"reshape: {x.shape} -> {shape} changes element count")
    old = x.shape

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            _accumulate(x, g.reshape(old))

    return _make(np.ascontiguousarray(x.data.reshape(shape)), "reshape", (x,), bw)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    _check_float("transpose", x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeMismatch(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            _accumulate(x, np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), bw)


def mean(x: Tensor) -> Tensor:
    """Mean over all elements; returns a scalar tensor."""
    _check_float("mean", x)
    n = x.data.size

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            _accumulate(x, np.full_like(x.data, float(g) / n))

    return _make(np.asarray(x.data.mean(), dtype=x.data.dtype), "mean", (x,), bw)


def sum_sq(x: Tensor) -> Tensor:
    """Sum of squared elements; returns a scalar tensor."""
    _check_float("sum_sq", x)

    def bw(g: np.ndarray) -> None:
        if _in_graph(x):
            _accumulate(x, 2.0 * float(g) * x.data)

    return _make(np.asarray((x.data ** 2).sum(), dtype=x.data.dtype), "sum_sq", (x,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements (mean-square convention)."""
    d = sub(a, b)
    return mean(mul(d, d))


# ---------------------------------------------------------------------------
# graph traversal


class Graph:
    """Topologically ordered op records reachable from a root tensor."""

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order  # parents before children


def backward(loss: Tensor) -> None:
    """Populate .grad on every in-graph tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    graph = Graph(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """First/second-moment accumulators plus the shared step counter."""

    def __init__(self, params: Sequence[Tensor]):
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState | None,
              lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on the param tensors."""
    if state is None:
        state = AdamState(params)
    if len(params) != len(grads):
        raise ShapeMismatch(f"adam_step: {len(params)} params vs {len(grads)} grads")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam_step: grad {g.shape} vs param {p.data.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return state


class Adam:
    """Stateful wrapper applying adam_step to a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(self.params)

    def step(self) -> None:
        grads = []
        for p in self.params:
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        adam_step(self.params, grads, self.state,
                  lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)
