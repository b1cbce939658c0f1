"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every differentiable op appends a record to the active :class:`GradTape`
when at least one input requires a gradient. :func:`backward` replays the
tape in reverse, accumulating into leaf ``grad`` buffers with ``+=`` so
that shared weights collect contributions from every use.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

DTYPE = np.float64


class ContractError(RuntimeError):
    """Raised when an operation is called outside its contract."""


class DimensionError(ValueError):
    """Raised on incompatible operand shapes."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_record", "_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._record: _Record | None = None
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _raise_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


class _Record:
    __slots__ = ("seq", "generation", "inputs", "output", "backward_fn", "op")

    def __init__(self, seq, generation, inputs, output, backward_fn, op):
        self.seq = seq
        self.generation = generation
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.op = op


class GradTape:
    """Ordered log of executed differentiable operations."""

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.generation = 0
        self._counter = itertools.count()
        self.enabled = True

    def __len__(self) -> int:
        return len(self.records)

    def reset(self) -> None:
        for rec in self.records:
            rec.output._record = None
        self.records = []
        self.generation += 1

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> None:
        rec = _Record(next(self._counter), self.generation, tuple(inputs), output, backward_fn, op)
        output._record = rec
        self.records.append(rec)


_TAPE = GradTape()

# hook used by the self-check negative control: op name -> multiplier on its input grads
_GRAD_CORRUPTION: dict[str, float] = {}


def get_tape() -> GradTape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


@contextlib.contextmanager
def corrupt_gradient(op: str, factor: float = 1.5):
    """Scale the backward contribution of ``op``; used to prove checks can fail."""
    _GRAD_CORRUPTION[op] = factor
    try:
        yield
    finally:
        _GRAD_CORRUPTION.pop(op, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = _TAPE.enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    out._record = None
    out._leaf = False
    if needs:
        _TAPE.record(op, inputs, out, backward_fn)
    return out


def scatter_add(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``out[index[k]] += values[k]``, via a sparse incidence product (fixed summation order)."""
    if index.size == 0:
        return np.zeros((n,) + values.shape[1:], dtype=DTYPE)
    m = index.size
    incidence = sparse.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))
    out = incidence @ values.reshape(m, -1)
    return np.asarray(out).reshape((n,) + values.shape[1:])


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every leaf reachable from the scalar ``loss``.

    The tape is cleared afterwards; calling again on the same loss without a
    new forward pass raises :class:`ContractError`.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    rec = loss._record
    if rec is None:
        if not loss.requires_grad:
            return
        if loss._leaf:
            loss.grad += np.ones_like(loss.data)
            return
        raise ContractError("loss was already back-propagated; run a new forward pass first")
    if rec.generation != _TAPE.generation:
        raise ContractError("loss was already back-propagated; run a new forward pass first")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for r in reversed(_TAPE.records):
        if r.seq > rec.seq:
            continue
        g = grads.pop(id(r.output), None)
        if g is None:
            continue
        r.output.grad = g
        in_grads = r.backward_fn(g)
        factor = _GRAD_CORRUPTION.get(r.op)
        for t, gi in zip(r.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if factor is not None:
                gi = gi * factor
            if t._leaf:
                t.grad += gi
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    _TAPE.reset()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Matrix product; also batches over a leading axis when either operand is 3-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, (a, b), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data >= 0
    return _make("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data >= 0
    factor = np.where(pos, 1.0, slope)
    return _make("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def activation(x, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    from .config import ConfigError

    raise ConfigError(f"unknown activation {kind!r}")


def apply_mask(x, mask: np.ndarray, scale_by: float = 1.0) -> Tensor:
    """Multiply by a fixed 0/1 mask (and optional rescale); the mask is not learned."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=DTYPE) * scale_by
    return _make("apply_mask", x.data * m, (x,), lambda g: (_unbroadcast(g * m, x.shape),))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def row_mean(a) -> Tensor:
    """Mean over rows (axis 0)."""
    return mean(a, axis=0)


def max_axis(a, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make("max_axis", out, (a,), bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make("transpose", np.swapaxes(a.data, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("permute", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make("stack", np.stack([t.data for t in ts], axis=axis), ts, bw)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int)) or i is Ellipsis for i in parts)

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] = g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _make("getitem", a.data[index], (a,), bw)


def gather_rows(a, idx) -> Tensor:
    """Rows ``a[idx]``; repeated indices accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        flat = idx.reshape(-1)
        ga = scatter_add(flat, g.reshape((flat.size,) + a.shape[1:]), a.shape[0])
        return (ga,)

    return _make("gather_rows", a.data[idx], (a,), bw)


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segments``."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.intp)
    out = scatter_add(seg, a.data, num_segments)
    return _make("segment_sum", out, (a,), lambda g: (g[seg],))


def edge_aggregate(weights, x, dst, src, num_nodes: int) -> Tensor:
    """Per-head weighted neighbour sum: ``out[i, m] = sum_e w[e, m] * x[src_e, (m)]`` over edges with ``dst_e == i``.

    ``weights`` is ``(E, M)``. ``x`` is either ``(n, M, k)`` (per-head
    features) or ``(n, k)`` (shared across heads). Output is ``(num_nodes, M, k)``.
    """
    weights, x = as_tensor(weights), as_tensor(x)
    dst = np.asarray(dst, dtype=np.intp)
    src = np.asarray(src, dtype=np.intp)
    E, M = weights.shape
    per_head = x.ndim == 3
    n_src = x.shape[0]
    k = x.shape[-1]
    wd, xd = weights.data, x.data
    mats = [sparse.csr_matrix((wd[:, m], (dst, src)), shape=(num_nodes, n_src)) for m in range(M)]
    out = np.empty((num_nodes, M, k))
    for m in range(M):
        out[:, m, :] = mats[m] @ (xd[:, m, :] if per_head else xd)

    def bw(g):
        gw = np.empty_like(wd)
        gx = np.zeros_like(xd)
        for m in range(M):
            xm = xd[:, m, :] if per_head else xd
            gm = g[:, m, :]
            gw[:, m] = np.einsum("ek,ek->e", gm[dst], xm[src])
            contrib = mats[m].T @ gm
            if per_head:
                gx[:, m, :] = contrib
            else:
                gx += contrib
        return gw, gx

    return _make("edge_aggregate", out, (weights, x), bw)


def segment_softmax(a, segments, num_segments: int) -> Tensor:
    """Softmax over groups of rows sharing a segment id (independently per column)."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.intp)
    if a.shape[0] == 0:
        return _make("segment_softmax", a.data.copy(), (a,), lambda g: (g,))
    seg_max = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(seg_max, seg, a.data)
    ex = np.exp(a.data - seg_max[seg])
    denom = scatter_add(seg, ex, num_segments)
    out = ex / denom[seg]

    def bw(g):
        dot = scatter_add(seg, g * out, num_segments)
        return (out * (g - dot[seg]),)

    return _make("segment_softmax", out, (a,), bw)


def softmax_scaled(x, scale: float = 1.0, mask: np.ndarray | None = None) -> Tensor:
    """Softmax of ``x / scale`` along the last axis, max-subtracted.

    ``mask`` (broadcastable, truthy = keep) zeroes excluded positions; rows
    with nothing kept come out all zero.
    """
    if not scale > 0:
        raise ContractError(f"softmax scale must be positive, got {scale}")
    x = as_tensor(x)
    z = x.data / scale
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(keep, z, -np.inf)
    zmax = np.max(z, axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    ex = np.exp(z - zmax)
    denom = ex.sum(axis=-1, keepdims=True)
    out = np.divide(ex, denom, out=np.zeros_like(ex), where=denom > 0)

    def bw(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot) / scale,)

    return _make("softmax_scaled", out, (x,), bw)


def log_softmax(x, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax along the last axis; masked positions are excluded and return 0."""
    x = as_tensor(x)
    z = x.data
    keep = None
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(keep, z, -np.inf)
    zmax = np.max(z, axis=-1, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    if keep is not None:
        out = np.where(keep, out, 0.0)

    def bw(g):
        if keep is not None:
            g = np.where(keep, g, 0.0)
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", out, (x,), bw)


OpFn = Callable[..., Tensor]
