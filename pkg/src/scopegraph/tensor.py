"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Value` that remembers its parents and a
closure propagating the output gradient back to them. :func:`backward`
rebuilds the tape (reachable nodes in creation order) on each call, so
variable-length sentences need no static graph.

Broadcasting is limited to a 0-d scalar combined with a tensor; row-bias
addition has its own op (:func:`add_bias`).
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-12

_node_ids = itertools.count()


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Value:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, _parents: tuple = (), _op: str = "leaf"):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.op = _op
        self._parents: tuple[Value, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Value(shape={list(self.shape)}, op={self.op}, data={np.array2string(self.data, precision=4)})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> Value:
        return transpose(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data: np.ndarray, parents: Sequence[Value], op: str, backward) -> Value:
    out = Value(data, requires_grad=any(p.requires_grad for p in parents), _parents=tuple(parents), _op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar-with-tensor broadcasting exists
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_broadcast(a: Value, b: Value, opname: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{opname}: incompatible shapes {list(a.shape)} and {list(b.shape)}")


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), "div", backward)


def scale(x: Value, c: float) -> Value:
    """Multiply by a Python constant."""
    x = as_value(x)
    c = float(c)
    return _make(x.data * c, (x,), "scale", lambda g: x._accumulate(g * c))


def relu(x: Value) -> Value:
    x = as_value(x)
    on = x.data > 0
    return _make(np.where(on, x.data, 0.0), (x,), "relu", lambda g: x._accumulate(g * on))


def sigmoid(x: Value) -> Value:
    x = as_value(x)
    d = x.data
    # split by sign so exp never overflows
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), "sigmoid", lambda g: x._accumulate(g * out * (1.0 - out)))


def exp(x: Value) -> Value:
    x = as_value(x)
    out = np.exp(x.data)
    return _make(out, (x,), "exp", lambda g: x._accumulate(g * out))


def log(x: Value) -> Value:
    x = as_value(x)
    if np.any(x.data <= 0):
        raise DomainError(f"log of non-positive entry (min {x.data.min():.3g})")
    return _make(np.log(x.data), (x,), "log", lambda g: x._accumulate(g / x.data))


def clamp(x: Value, lo: float, hi: float) -> Value:
    x = as_value(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), "clamp", lambda g: x._accumulate(g * inside))


# ----------------------------------------------------------------------------
# linear algebra and reductions
# ----------------------------------------------------------------------------


def matmul(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def transpose(x: Value) -> Value:
    x = as_value(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {list(x.shape)}")
    return _make(x.data.T, (x,), "transpose", lambda g: x._accumulate(g.T))


def add_bias(x: Value, b: Value) -> Value:
    """Add the vector ``b`` [n] to every row of ``x`` [m, n]."""
    x, b = as_value(x), as_value(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: {list(b.shape)} does not fit rows of {list(x.shape)}")

    def backward(g):
        x._accumulate(g)
        b._accumulate(g.sum(axis=0))

    return _make(x.data + b.data, (x, b), "add_bias", backward)


def reshape(x: Value, shape: Sequence[int]) -> Value:
    x = as_value(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: x._accumulate(g.reshape(old)))


def total(x: Value) -> Value:
    """Sum of all entries, as a 0-d value."""
    x = as_value(x)
    return _make(np.asarray(x.data.sum()), (x,), "sum", lambda g: x._accumulate(np.full_like(x.data, g)))


def mean(x: Value) -> Value:
    x = as_value(x)
    return scale(total(x), 1.0 / x.size)


def take(x: Value, index) -> Value:
    """Numpy-style indexing; gradient scatters back with ``np.add.at``."""
    x = as_value(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    return _make(np.array(out), (x,), "take", backward)


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[list(v.shape) for v in values]}") from exc
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        for v, part in zip(values, np.split(g, bounds, axis=axis)):
            v._accumulate(part)

    return _make(out, values, "concat", backward)


def softmax_rows(x: Value) -> Value:
    x = as_value(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {list(x.shape)}")
    z = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return _make(out, (x,), "softmax_rows", backward)


def log_softmax_rows(x: Value) -> Value:
    x = as_value(x)
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects a matrix, got {list(x.shape)}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward(g):
        x._accumulate(g - np.exp(out) * g.sum(axis=1, keepdims=True))

    return _make(out, (x,), "log_softmax_rows", backward)


def logsumexp_rows(x: Value) -> Value:
    """Row-wise log-sum-exp of a matrix, returned as a vector."""
    x = as_value(x)
    if x.data.ndim != 2:
        raise ShapeError(f"logsumexp_rows expects a matrix, got {list(x.shape)}")
    m = x.data.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=1, keepdims=True))
    soft = np.exp(x.data - lse)
    return _make(lse[:, 0], (x,), "logsumexp_rows", lambda g: x._accumulate(soft * g[:, None]))


def cosine_pairwise(a: Value, b: Value, eps: float = EPS) -> Value:
    """``out[i, j] = a_i . b_j / (|a_i| |b_j| + eps)`` for row sets ``a`` and ``b``.

    Zero rows get a zero subgradient for the normalisation term instead of NaN.
    """
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_pairwise: rows of {list(a.shape)} and {list(b.shape)} differ in width")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    dots = a.data @ b.data.T
    q = np.outer(na, nb) + eps
    out = dots / q
    ua = np.divide(a.data, na[:, None], out=np.zeros_like(a.data), where=na[:, None] > 0)
    ub = np.divide(b.data, nb[:, None], out=np.zeros_like(b.data), where=nb[:, None] > 0)

    def backward(g):
        # d out_ij / d a_i = b_j / q_ij - dots_ij * |b_j| * ua_i / q_ij^2
        w = g / q
        r = g * dots / (q * q)
        a._accumulate(w @ b.data - (r @ nb)[:, None] * ua)
        b._accumulate(w.T @ a.data - (r.T @ na)[:, None] * ub)

    return _make(out, (a, b), "cosine_pairwise", backward)


def cosine_sim(u: Value, v: Value, eps: float = EPS) -> Value:
    u, v = as_value(u), as_value(v)
    if u.data.ndim != 1 or u.shape != v.shape or u.shape[0] < 1:
        raise ShapeError(f"cosine_sim: shapes {list(u.shape)} and {list(v.shape)}")
    d = u.shape[0]
    return reshape(cosine_pairwise(reshape(u, (1, d)), reshape(v, (1, d)), eps), ())


def masked_mean_pool(x: Value, mask) -> Value:
    """Mean of the rows of ``x`` [S, D] where ``mask`` [S] is 1."""
    x = as_value(x)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (x.shape[0],):
        raise ShapeError(f"mask of length {mask.shape} for {x.shape[0]} rows")
    k = mask.sum()
    if k <= 0:
        raise ValueError("empty scope: mask has no active positions")
    w = Value((mask / k)[None, :])
    return reshape(matmul(w, x), (x.shape[1],))


# ----------------------------------------------------------------------------
# tape
# ----------------------------------------------------------------------------


def tape(root: Value) -> list[Value]:
    """Nodes reachable from ``root`` in creation order (a topological order)."""
    seen: dict[int, Value] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in seen:
            continue
        seen[node.node_id] = node
        stack.extend(node._parents)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Value) -> None:
    if loss.shape != () and loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    nodes = tape(loss)
    for node in nodes:
        if not node.is_leaf:
            node.grad = None
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params: Iterable[Value]) -> None:
    for p in params:
        p.grad = None


def parameter(data) -> Value:
    return Value(data, requires_grad=True)
