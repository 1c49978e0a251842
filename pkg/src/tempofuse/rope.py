"""Rotary encoding of observation time.

Queries and keys are rotated, pairwise, by angles proportional to the
acquisition day of their token: pair i of a d-dimensional head vector turns
by m * theta_i, with theta_i = base^(-2i/d) and m the integer day count
since 2000-01-01.  Because a dot product of two rotated vectors only sees
the angle difference, attention logits depend on day offsets m - n, never
on absolute dates; m = n reduces to the unrotated dot product.

Angles are reduced modulo 2*pi in f64 before the trig calls so that day
counts in the tens of thousands lose no precision.  Values are never
rotated, only q and k, and rotation happens per head on head-sliced
vectors.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

import numpy as np

from tempofuse import nd
from tempofuse.errors import ConfigError, ShapeError

__all__ = [
    "RopeSchedule",
    "frequencies",
    "rotate",
    "rotate_tokens",
    "relative_property_check",
    "date_to_days",
    "EPOCH",
]

EPOCH = datetime.date(2000, 1, 1)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RopeSchedule:
    """Per-pair angular frequencies for one head dimension."""

    d: int
    base: float
    theta: np.ndarray = field(repr=False)  # (d/2,), strictly decreasing

    def __post_init__(self):
        self.theta.setflags(write=False)


def frequencies(d: int, base: float = 10000.0) -> RopeSchedule:
    """theta_i = base^(-2i/d) for i in [0, d/2)."""
    if d < 2 or d % 2 != 0:
        raise ConfigError(f"rotary head dimension must be even and >= 2, got {d}")
    if not base > 1.0:
        raise ConfigError(f"frequency base must exceed 1, got {base}")
    i = np.arange(d // 2, dtype=np.float64)
    theta = np.power(float(base), -2.0 * i / d)
    return RopeSchedule(d=d, base=float(base), theta=theta)


def _angles(m, sched: RopeSchedule) -> np.ndarray:
    """Reduced rotation angles, shape m.shape + (d/2,)."""
    m = np.asarray(m, dtype=np.float64)
    return np.mod(m[..., None] * sched.theta, TWO_PI)


def rotate(x, m, sched: RopeSchedule) -> np.ndarray:
    """Rotate consecutive pairs (2i, 2i+1) of x by m * theta_i.

    x: (..., d) array; m: integer day count, scalar or shape broadcastable
    to x's leading axes.  Pure numpy; for the on-tape version used inside
    attention see rotate_tokens.
    """
    x = np.asarray(x)
    if x.shape[-1] != sched.d:
        _dim_error(x.shape, sched.d)
    ang = _angles(m, sched)
    cos, sin = np.cos(ang), np.sin(ang)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x, dtype=np.result_type(x.dtype, np.float64))
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _dim_error(shape, d):
    raise ShapeError(f"last extent of {shape} does not match schedule d={d}")


def rotate_tokens(x: nd.Tensor, days: np.ndarray, sched: RopeSchedule) -> nd.Tensor:
    """Differentiable pairwise rotation for stacked token vectors.

    x: (..., N, d) Tensor; days: (N,) integer day per token.  The backward
    pass rotates the incoming gradient by the opposite angles (rotations
    are orthogonal).
    """
    if x.shape[-1] != sched.d:
        _dim_error(x.shape, sched.d)
    ang = _angles(np.asarray(days), sched)          # (N, d/2)
    cos = np.cos(ang).astype(x.dtype, copy=False)
    sin = np.sin(ang).astype(x.dtype, copy=False)

    def apply(v, s):
        even, odd = v[..., 0::2], v[..., 1::2]
        out = np.empty_like(v)
        out[..., 0::2] = even * cos - odd * s
        out[..., 1::2] = even * s + odd * cos
        return out

    out = nd.wrap(apply(x.data, sin))

    def pull(g):
        return (apply(g, -sin),)

    nd.record_op(out, (x,), pull)
    return out


def relative_property_check(q, k, m: int, n: int, delta: int, sched: RopeSchedule,
                            tol: float = 1e-5) -> bool:
    """Does shifting both times by delta leave the q.k logit unchanged?"""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    a = float(np.dot(rotate(q, m, sched), rotate(k, n, sched)))
    b = float(np.dot(rotate(q, m + delta, sched), rotate(k, n + delta, sched)))
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def date_to_days(year: int, month: int, day: int) -> int:
    """Days since 2000-01-01 for a Gregorian calendar date (epoch = 0)."""
    d = datetime.date(year, month, day)
    if d < EPOCH:
        raise ValueError(f"{d.isoformat()} precedes the 2000-01-01 epoch")
    return (d - EPOCH).days
