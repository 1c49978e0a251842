"""Differentiable dense arrays on top of numpy.

The substrate is deliberately small: immutable ``Tensor`` objects wrapping
numpy arrays, a ``Tape`` that records executed ops in execution order, and
reverse-mode gradient propagation by walking the tape backwards.  A tensor
holds float32 or float64 data; integer inputs (token ids, gather indices)
are passed around as plain numpy arrays because nothing differentiates
through them.

Broadcasting follows one documented rule, trailing-axis alignment: shapes
are right-aligned and each aligned pair of extents must be equal or contain
a 1 (numpy semantics).  Anything else raises :class:`ShapeError` instead of
silently broadcasting.

Gradient recording is opt-in.  Ops compute plain values unless a tape is
active, so evaluation code pays nothing for the autodiff machinery:

    with Tape() as tape:
        loss = some_composition(params)
    grads = tape.backward(loss)
    g = grads.of(params["w"])       # zeros if w never participated

The tape is single-owner: one training step runs on one tape.  Tensors are
immutable after construction and safe to share across concurrently running
tapes (e.g. data-parallel evaluation), but a single ``Tape`` instance must
not be used from two threads.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from tempofuse.errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "sigmoid",
    "softmax",
    "log_softmax",
    "cross_entropy_logits",
    "layer_norm",
    "gelu",
    "embedding_lookup",
    "gather",
    "concat",
    "mean",
    "sum_",
    "reshape",
    "transpose",
    "slice_",
    "pad2d",
    "repeat",
]

FLOAT_DTYPES = (np.float32, np.float64)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Immutable dense array: shape, float dtype, row-major values."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64 if arr.dtype == np.int64 else np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly computed array without copying."""
        t = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(t, "data", arr)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # Operator sugar; all arithmetic routes through the module-level ops so
    # everything is recorded uniformly.
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, dtype=None) -> Tensor:
    """Construct a Tensor, copying ``data``."""
    return Tensor(data, dtype=dtype)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64) if np.isscalar(x) else x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

# Module-level active-tape stack.  Training is single-writer per the
# concurrency contract, so plain module state is sufficient and cheap.
_TAPE_STACK: list["Tape"] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Gradients:
    """Read-only view of the gradients produced by one backward pass."""

    def __init__(self, grads: dict, keepalive: list):
        self._grads = grads
        self._keepalive = keepalive  # holds tensor refs so ids stay valid

    def of(self, t: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. ``t``; exact zeros if it did not
        participate in the recorded computation."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return g


class Tape:
    """Ordered record of executed ops with per-node gradient slots.

    Records are appended in execution order, so reversing them yields a
    valid reverse topological order; gradients accumulate additively into
    per-tensor slots.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted (single-owner contract)"
        return False

    def _record(self, out: Tensor, inputs: tuple, pull: Callable) -> None:
        self._records.append((out, inputs, pull))

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse-propagate from a scalar ``loss`` through every recorded op."""
        if not isinstance(loss, Tensor) or loss.shape != ():
            raise ValueError(
                f"backward root must be a scalar Tensor, got shape "
                f"{getattr(loss, 'shape', type(loss))}"
            )
        grads: dict[int, np.ndarray] = {
            id(loss): np.ones((), dtype=loss.dtype)
        }
        keepalive: list = [loss]
        for out, inputs, pull in reversed(self._records):
            g_out = grads.get(id(out))
            if g_out is None:
                continue
            for t, g in zip(inputs, pull(g_out)):
                if t is None or g is None:
                    continue
                slot = grads.get(id(t))
                if slot is None:
                    grads[id(t)] = g
                    keepalive.append(t)
                else:
                    grads[id(t)] = slot + g
        return Gradients(grads, keepalive)


def _record(out: Tensor, inputs: tuple, pull: Callable) -> None:
    t = _active_tape()
    if t is not None:
        t._record(out, inputs, pull)


def record_op(out: Tensor, inputs: tuple, pull: Callable) -> None:
    """Register a custom differentiable op on the active tape (if any).

    ``pull(g_out)`` must return one gradient array per input, in order.
    """
    _record(out, inputs, pull)


def wrap(arr: np.ndarray) -> Tensor:
    """Adopt ``arr`` as a Tensor without copying; caller yields ownership."""
    return Tensor._wrap(arr)


# ---------------------------------------------------------------------------
# Broadcasting helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of trailing-axis broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(sa: tuple, sb: tuple, op: str) -> None:
    for a, b in zip(reversed(sa), reversed(sb)):
        if a != b and a != 1 and b != 1:
            raise ShapeError(f"{op}: shapes {sa} and {sb} do not align on trailing axes")


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    out = Tensor._wrap(a.data + b.data)

    def pull(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    _record(out, (a, b), pull)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = Tensor._wrap(a.data - b.data)

    def pull(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    _record(out, (a, b), pull)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = Tensor._wrap(a.data * b.data)

    def pull(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    _record(out, (a, b), pull)
    return out


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = Tensor._wrap(a.data * s)

    def pull(g):
        return (g * s,)

    _record(out, (a,), pull)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; stacked (batched) operands follow numpy matmul rules."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul(batch)")
    out = Tensor._wrap(np.matmul(a.data, b.data))

    def pull(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    _record(out, (a, b), pull)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.reshape(shape))

    def pull(g):
        return (g.reshape(a.shape),)

    _record(out, (a,), pull)
    return out


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.transpose(a.data, axes))

    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def pull(g):
        return (np.transpose(g, inv),)

    _record(out, (a,), pull)
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor._wrap(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def pull(g):
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(ts), pull)
    return out


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.sum(axis=axis, keepdims=keepdims))

    def pull(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).astype(a.dtype, copy=False),)

    _record(out, (a,), pull)
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    out = Tensor._wrap(a.data.mean(axis=axis, keepdims=keepdims))

    def pull(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / n, a.shape).astype(a.dtype, copy=False),)

    _record(out, (a,), pull)
    return out


def slice_(a, key) -> Tensor:
    """Basic slicing; gradient scatters back into a zero array."""
    a = _as_tensor(a)
    out = Tensor._wrap(a.data[key].copy())

    def pull(g):
        ga = np.zeros(a.shape, dtype=a.dtype)
        ga[key] = g
        return (ga,)

    _record(out, (a,), pull)
    return out


def pad2d(a, before_after: Sequence[tuple]) -> Tensor:
    """Zero padding; ``before_after`` gives (before, after) per axis."""
    a = _as_tensor(a)
    out = Tensor._wrap(np.pad(a.data, before_after))
    key = tuple(
        slice(b, dim + b) for (b, _), dim in zip(before_after, a.shape)
    )

    def pull(g):
        return (g[key],)

    _record(out, (a,), pull)
    return out


def repeat(a, k: int, axis: int) -> Tensor:
    """Repeat each slice ``k`` times along ``axis`` (nearest upsampling)."""
    a = _as_tensor(a)
    out = Tensor._wrap(np.repeat(a.data, k, axis=axis))
    ax = axis % a.ndim

    def pull(g):
        shp = g.shape[:ax] + (a.shape[ax], k) + g.shape[ax + 1 :]
        return (g.reshape(shp).sum(axis=ax + 1),)

    _record(out, (a,), pull)
    return out


def gather(a, indices) -> Tensor:
    """Take rows along axis 0 with integer indices; gradient scatter-adds.

    Repeated indices accumulate, which is what weight tying needs.
    """
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"gather index out of range [0, {a.shape[0]})")
    out = Tensor._wrap(a.data[idx].copy())

    def pull(g):
        ga = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    _record(out, (a,), pull)
    return out


def embedding_lookup(table, ids) -> Tensor:
    """Row gather from a 2-d table; gradient is a scatter-add over rows."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.shape[0]})"
        )
    out = Tensor._wrap(table.data[ids])

    def pull(g):
        gt = np.zeros(table.shape, dtype=table.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    _record(out, (table,), pull)
    return out


# ---------------------------------------------------------------------------
# Nonlinear ops
# ---------------------------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # evaluate through the positive branch only so exp never overflows
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor._wrap(y)

    def pull(g):
        return (g * y * (1.0 - y),)

    _record(out, (a,), pull)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; rows sum to 1 within 1e-6."""
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    # -inf rows would produce NaN; masked attention guarantees each row has
    # at least one finite entry, so m is always finite here.
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(y)

    def pull(g):
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    _record(out, (a,), pull)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    y = s - lse
    sm = np.exp(y)
    out = Tensor._wrap(y)

    def pull(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    _record(out, (a,), pull)
    return out


def gelu(a) -> Tensor:
    """Exact (erf-based) gaussian error linear unit."""
    a = _as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor._wrap(x * phi)

    def pull(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * pdf),)

    _record(out, (a,), pull)
    return out


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply the
    learnable affine ``gamma * xhat + beta``."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match "
            f"feature extent {a.shape[-1:]}"
        )
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor._wrap(xhat * gamma.data + beta.data)

    def pull(g):
        gxhat = g * gamma.data
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = (gxhat - m1 - xhat * m2) * inv
        axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    _record(out, (a, gamma, beta), pull)
    return out


def cross_entropy_logits(logits, targets) -> Tensor:
    """Mean negative log-softmax probability of integer ``targets``.

    ``logits`` is (N, V); ``targets`` holds N class indices in [0, V).
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects (N, V) logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, v = logits.shape
    if t.shape[0] != n:
        raise ShapeError(f"{t.shape[0]} targets for {n} logit rows")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise IndexError(f"target class out of range [0, {v})")
    x = logits.data
    m = np.max(x, axis=1, keepdims=True)
    s = x - m
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    logp = s - lse
    rows = np.arange(n)
    loss = -logp[rows, t].mean()
    out = Tensor._wrap(np.asarray(loss, dtype=x.dtype))

    def pull(g):
        sm = np.exp(logp)
        sm[rows, t] -= 1.0
        return (sm * (g / n),)

    _record(out, (logits,), pull)
    return out


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def assert_all_finite(arr: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
