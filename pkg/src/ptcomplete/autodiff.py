"""Dense tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the result records its parents and a backward rule and receives a
monotonically increasing tape id. :func:`backward` collects the nodes
reachable from a scalar root and replays them in descending id order, which
is always a valid reverse topological order because a node is created after
all of its parents.

Binary elementwise operations broadcast only over leading (batch) axes: the
shorter operand's shape must equal the trailing part of the longer one.
Anything else goes through an explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "BackwardError",
    "tensor",
    "get_default_dtype",
    "set_default_dtype",
    "default_dtype",
    "no_grad",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "relu",
    "gelu",
    "tanh",
    "sigmoid",
    "softmax",
    "reduce_max",
    "sum",
    "mean",
    "concat",
    "gather",
    "batch_gather",
    "gather_max",
    "layer_norm",
    "reshape",
    "swapaxes",
    "broadcast_to",
    "row_norm",
    "elementwise",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class BackwardError(RuntimeError):
    """Raised on invalid backward calls (non-scalar root, reused graph)."""


_DTYPE = np.dtype(np.float64 if os.environ.get("PTCOMPLETE_FLOAT64") == "1" else np.float32)
_GRAD_ENABLED = True


def get_default_dtype() -> np.dtype:
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the floating precision (64-bit for gradient checks)."""
    prev = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tape:
    """Append-only id source shared by all recorded nodes.

    Nodes keep references to their parents, so the tape itself only needs to
    hand out the recording order.
    """

    def __init__(self) -> None:
        self._counter = itertools.count(1)
        self.recorded = 0

    def next_id(self) -> int:
        self.recorded += 1
        return next(self._counter)


TAPE = Tape()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = 0
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
        out._id = TAPE.next_id()
    return out


def backward(root: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that requires it.

    The graph is consumed: a second call from the same root raises.
    """
    if root.size != 1 and grad is None:
        raise BackwardError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise BackwardError("graph already consumed by a previous backward pass")
    if not root.requires_grad:
        raise BackwardError("root does not require grad")

    nodes: dict[int, Tensor] = {}
    leaves: dict[int, Tensor] = {}
    stack = [root]
    seen = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is None:
            if t._consumed:
                raise BackwardError("graph already consumed by a previous backward pass")
            leaves[id(t)] = t
            continue
        nodes[id(t)] = t
        for p in t._parents:
            if p.requires_grad:
                stack.append(p)

    grads: dict[int, np.ndarray] = {
        id(root): np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=root.dtype)
    }
    for node in sorted(nodes.values(), key=lambda n: n._id, reverse=True):
        g = grads.pop(id(node), None)
        rule, parents = node._backward, node._parents
        node._backward = None
        node._parents = ()
        node._consumed = True
        if g is None:
            continue
        pgrads = rule(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# --------------------------------------------------------------------------
# broadcasting helpers


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: shapes {sa} and {sb} are not broadcastable over leading axes")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def rule(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), rule)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * a.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    half = x.dtype.type(0.5)
    inner = c * (x + k * x * x * x)
    t = np.tanh(inner)
    out = half * x * (1 + t)

    def rule(g):
        dinner = c * (1 + 3 * k * x * x)
        return (g * (half * (1 + t) + half * x * (1 - t * t) * dinner),)

    return _make(out, (a,), rule)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1 - t * t),))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    s = s.astype(a.dtype)
    return _make(s, (a,), lambda g: (g * s * (1 - s),))


_UNARY = {"relu": relu, "gelu": gelu, "tanh": tanh, "sigmoid": sigmoid, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name; binary ops need ``b``."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](_as_tensor(a))
    raise ValueError(f"unknown elementwise op {op!r}")


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    if a.ndim < 2 or b.ndim < 2 or sa[-1] != sb[-2]:
        raise ShapeError(f"matmul: shapes {sa} and {sb} do not align")
    if b.ndim > 2 and sa[:-2] != sb[:-2]:
        raise ShapeError(f"matmul: batch extents of {sa} and {sb} differ")
    if b.ndim > a.ndim:
        raise ShapeError(f"matmul: shapes {sa} and {sb} do not align")
    ad, bd = a.data, b.data

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, sa[-1]).T @ g.reshape(-1, sb[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), rule)


# --------------------------------------------------------------------------
# reductions


def _axis(axis, ndim):
    if axis is None:
        return None
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return ax


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    ax = _axis(axis, a.ndim)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    def rule(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), rule)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[_axis(axis, a.ndim)]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reduce_max(a: Tensor, axis: int = 0) -> Tensor:
    """Maximum along ``axis``; gradient goes to the first maximal entry."""
    ax = _axis(axis, a.ndim)
    if a.shape[ax] == 0:
        raise ShapeError("reduce_max over an empty axis")
    arg = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(arg, ax), axis=ax).squeeze(ax)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, np.expand_dims(arg, ax), np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _make(out, (a,), rule)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _axis(axis, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return _make(s, (a,), rule)


def layer_norm(a: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply ``weight``/``bias``."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    w = weight.data if weight is not None else None
    out = xhat * w if w is not None else xhat
    if bias is not None:
        out = out + bias.data
    n = x.shape[-1]
    parents = [a] + [t for t in (weight, bias) if t is not None]

    def rule(g):
        res = []
        gx = g * w if w is not None else g
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        res.append(ga)
        if weight is not None:
            res.append((g * xhat).reshape(-1, n).sum(axis=0))
        if bias is not None:
            res.append(g.reshape(-1, n).sum(axis=0))
        return res

    return _make(out.astype(a.dtype), parents, rule)


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis. The gradient at a zero row is zero."""
    x = a.data
    n = np.sqrt((x * x).sum(axis=-1))

    def rule(g):
        safe = np.where(n > 0, n, 1)
        d = np.where((n > 0)[..., None], x / safe[..., None], 0)
        return ((g[..., None] * d).astype(x.dtype),)

    return _make(n, (a,), rule)


# --------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def rule(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _make(np.ascontiguousarray(out), (a,), rule)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    ax = _axis(axis, ts[0].ndim)
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {[t.shape for t in ts]} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in ts], axis=ax),
        ts,
        lambda g: tuple(np.split(g, splits, axis=ax)),
    )


def gather(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select entries of ``a`` along ``axis`` (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.int64)
    ax = _axis(axis, a.ndim)
    n = a.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexError(f"gather: index out of range for axis of length {n}")
    idx = np.where(idx < 0, idx + n, idx)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        kernels.scatter_add_rows(moved.reshape(n, -1), idx.reshape(-1), gm.reshape(idx.size, -1))
        return (full,)

    return _make(np.take(a.data, idx, axis=ax), (a,), rule)


def batch_gather(a: Tensor, indices: np.ndarray) -> Tensor:
    """Per-batch row selection: ``out[b, *i] = a[b, indices[b, *i]]``.

    ``a`` is ``[B, N, ...]`` and ``indices`` is ``[B, ...]`` of ints in ``[0, N)``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    B, N = a.shape[0], a.shape[1]
    if idx.shape[0] != B:
        raise ShapeError(f"batch_gather: batch extents {a.shape} vs {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise IndexError(f"batch_gather: index out of range for {N} rows")
    tail = a.shape[2:]
    flat = (idx + (np.arange(B) * N).reshape((B,) + (1,) * (idx.ndim - 1))).reshape(-1)
    src = a.data.reshape((B * N,) + tail)
    out = src[flat].reshape(idx.shape + tail)
    shape = a.shape

    def rule(g):
        full = np.zeros((B * N, int(np.prod(tail, dtype=np.int64))), dtype=g.dtype)
        kernels.scatter_add_rows(full, flat, g.reshape(flat.size, -1))
        return (full.reshape(shape),)

    return _make(out, (a,), rule)


def gather_max(values: Tensor, neighbors: np.ndarray) -> Tensor:
    """``out[b, q, c] = max_j values[b, neighbors[b, q, j], c]``.

    Fused neighbor gather + channelwise max pooling; gradient goes to the first
    maximal neighbor per channel.
    """
    idx = np.ascontiguousarray(neighbors, dtype=np.int64)
    v = values.data
    if v.ndim != 3 or idx.ndim != 3 or idx.shape[0] != v.shape[0]:
        raise ShapeError(f"gather_max: values {v.shape} / neighbors {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v.shape[1]):
        raise IndexError("gather_max: neighbor index out of range")
    out, arg = kernels.gather_max(np.ascontiguousarray(v), idx)
    shape = v.shape

    def rule(g):
        return (kernels.scatter_max_grad(np.ascontiguousarray(g), arg, shape[1]),)

    return _make(out, (values,), rule)
