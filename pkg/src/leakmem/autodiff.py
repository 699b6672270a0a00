"""Dense tensors with reverse-mode differentiation over an explicit tape.

All model code in this package is built from the primitives here. Forward
values are plain numpy arrays (float32 by default, float64 for gradient
checking); adjoints are recorded on a thread-local tape in application order
and replayed in reverse by ``backward``. Ops called outside a ``Tape`` context
run forward-only, which is the inference fast path.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DomainError,
    NumericError,
    ShapeError,
)

DEFAULT_DTYPE = np.float32

# Floor used inside KL ratios and norm denominators; avoids NaN on
# early-training degenerate vectors.
EPS = 1e-8


class Tensor:
    """N-dimensional real array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep = isinstance(data, (np.ndarray, np.generic)) and np.asarray(data).dtype in (
            np.float32, np.float64)
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out: Tensor, inputs: tuple, bwd: Callable):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


class _TapeState(threading.local):
    def __init__(self):
        self.stack = []


_state = _TapeState()


class Tape:
    """Ordered record of primitive applications for one forward pass.

    A tape and the tensors created under it form a single-ownership unit;
    replaying the recorded adjoints in reverse yields gradients that are
    bit-identical across runs with the same inputs.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _state.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _state.stack.pop()
        assert popped is self
        return False


def _active_tape():
    return _state.stack[-1] if _state.stack else None


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``."""
    if tape is None:
        tape = _active_tape()
        if tape is None:
            raise ContractError("backward called with no active tape")
    if loss.data.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        grads = node.bwd(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = gi.astype(inp.data.dtype, copy=True)
            else:
                inp.grad = inp.grad + gi.astype(inp.data.dtype, copy=False)


def _record(out: Tensor, inputs: tuple, bwd: Callable) -> Tensor:
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = _active_tape()
        if tape is not None:
            tape.nodes.append(_Node(out, inputs, bwd))
        else:
            out.requires_grad = False
    return out


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.data.dtype != b.data.dtype:
            raise ContractError(
                f"mixed tensor dtypes {a.data.dtype.name} and {b.data.dtype.name}"
            )
        return a, b
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along the axes numpy broadcast over."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def bwd(g):
        return (-g,)

    return _record(out, (a,), bwd)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = Tensor(a.data**p)

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record(out, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * y,)

    return _record(out, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log requires strictly positive input")
    out = Tensor(np.log(a.data))

    def bwd(g):
        return (g / a.data,)

    return _record(out, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g / (2.0 * y),)

    return _record(out, (a,), bwd)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))

    def bwd(g):
        return (g * np.sign(a.data),)

    return _record(out, (a,), bwd)


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient is assigned to ``b``."""
    a, b = _pair(a, b)
    out = Tensor(np.maximum(a.data, b.data))

    def bwd(g):
        mask = a.data > b.data
        ga = np.where(mask, g, 0.0)
        gb = np.where(mask, 0.0, g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), bwd)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only through the interior."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))

    def bwd(g):
        mask = (a.data > lo) & (a.data < hi)
        return (np.where(mask, g, 0.0),)

    return _record(out, (a,), bwd)


def detach(a: Tensor) -> Tensor:
    """Forward the value, block the gradient."""
    return Tensor(a.data, requires_grad=False)


# ---------------------------------------------------------------------------
# reductions and structure


def _reduced_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_like(g, shape, axes, keepdims):
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _reduced_axes(axis, a.data.ndim)
    out = Tensor(a.data.sum(axis=axes if axes else None, keepdims=keepdims))

    def bwd(g):
        return (_expand_like(g, a.data.shape, axes, keepdims).copy(),)

    return _record(out, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _reduced_axes(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else a.data.size
    out = Tensor(a.data.mean(axis=axes if axes else None, keepdims=keepdims))

    def bwd(g):
        return (_expand_like(g, a.data.shape, axes, keepdims) / count,)

    return _record(out, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _record(out, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inverse),)

    return _record(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        shape = list(t.data.shape)
        shape.insert(axis % (t.data.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics (operands must be >= 2-D)."""
    a, b = _pair(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or batched operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# named operations with spec contracts


def softmax(x, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Temperature softmax along ``axis`` with max-subtraction for overflow safety."""
    x = as_tensor(x)
    if temperature <= 0:
        raise DomainError(f"softmax temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains non-finite values")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner) / temperature,)

    return _record(out, (x,), bwd)


def l2_norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; a 1e-12 floor inside the sqrt guards the kink at 0."""
    ss = sum_(mul(x, x), axis=axis, keepdims=keepdims)
    return sqrt(add(ss, 1e-12))


def cosine_similarity(u, v, axis: int = -1) -> Tensor:
    """Cosine of the angle between ``u`` and ``v``, clamped to [-1, 1] against rounding."""
    u, v = _pair(u, v)
    if u.data.shape != v.data.shape:
        raise ShapeError(f"cosine_similarity operands differ in shape: {u.data.shape} vs {v.data.shape}")
    nu = np.sqrt((u.data * u.data).sum(axis=axis))
    nv = np.sqrt((v.data * v.data).sum(axis=axis))
    if np.any(nu < EPS) or np.any(nv < EPS):
        raise DegenerateInputError("cosine_similarity received a zero-norm operand")
    dot = sum_(mul(u, v), axis=axis)
    denom = add(mul(l2_norm(u, axis=axis), l2_norm(v, axis=axis)), EPS)
    return clip(div(dot, denom), -1.0, 1.0)


def kl_divergence(p, q, axis: int = -1) -> Tensor:
    """KL(p || q) in nats along ``axis`` with 0*ln(0) := 0 and q floored at EPS.

    Both inputs must lie on the probability simplex within 1e-6.
    """
    p, q = _pair(p, q)
    if p.data.shape != q.data.shape:
        raise ShapeError(f"kl_divergence operands differ in shape: {p.data.shape} vs {q.data.shape}")
    for name, t in (("p", p), ("q", q)):
        sums = t.data.sum(axis=axis)
        if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(t.data < -1e-9):
            raise DomainError(f"kl_divergence operand '{name}' is off the probability simplex")
    pd, qd = p.data, q.data
    qf = np.maximum(qd, EPS)
    safe_p = np.where(pd > 0, pd, 1.0)
    log_ratio = np.log(safe_p / qf)
    out = Tensor(np.where(pd > 0, pd * log_ratio, 0.0).sum(axis=axis))
    axes = _reduced_axes(axis, pd.ndim)

    def bwd(g):
        ge = _expand_like(g, pd.shape, axes, False)
        gp = np.where(pd > 0, log_ratio + 1.0, 0.0) * ge
        gq = np.where(qd > EPS, -pd / qf, 0.0) * ge
        return gp, gq

    return _record(out, (p, q), bwd)


def avg_pool_spatial(f) -> Tensor:
    """Mean over the two trailing spatial axes of a (c, s, s) or (batch, c, s, s) grid."""
    f = as_tensor(f)
    if f.data.ndim not in (3, 4):
        raise ShapeError(f"avg_pool_spatial expects a (c, s, s) grid, got shape {f.data.shape}")
    if f.data.shape[-1] != f.data.shape[-2] or f.data.shape[-1] < 1:
        raise ShapeError(f"avg_pool_spatial expects square spatial axes, got shape {f.data.shape}")
    return mean(f, axis=(-2, -1))


def weighted_sum(inputs: Sequence[Tensor], logits: Tensor) -> Tensor:
    """Convex combination of equally-shaped inputs, weights = softmax(logits)."""
    inputs = [as_tensor(t) for t in inputs]
    logits = as_tensor(logits)
    if logits.data.ndim != 1 or logits.data.shape[0] != len(inputs):
        raise ShapeError(
            f"weighted_sum got {len(inputs)} inputs but logits of shape {logits.data.shape}"
        )
    base = inputs[0].data.shape
    for t in inputs[1:]:
        if t.data.shape != base:
            raise ShapeError(f"weighted_sum inputs differ in shape: {base} vs {t.data.shape}")
    w = softmax(logits)
    stacked = stack(inputs, axis=0)
    w_shaped = reshape(w, (len(inputs),) + (1,) * len(base))
    return sum_(mul(stacked, w_shaped), axis=0)
