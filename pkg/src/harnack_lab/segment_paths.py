"""Discretized history segments and the simulation grid.

A segment holds the last stretch of a path, sampled on a uniform grid of
m+1 points covering the delay window [-r0, 0]. The grid step is always
h = r0/m so that the delay lookup lands exactly on a stored value.
"""

import numpy as np


class GridMismatchError(ValueError):
    pass


def _as_value_array(values):
    a = np.asarray(values, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("segment needs a 2-d (m+1, d) value array with m >= 1")
    return a


class SegmentPath:
    """Values of a path at relative times -r0, -r0+h, ..., 0.

    values has shape (m+1, d); values[-1] is the current point (offset 0),
    values[0] the oldest (offset -r0). Instances are immutable.
    """

    __slots__ = ("r0", "h", "values")

    def __init__(self, r0, values):
        a = _as_value_array(values)
        if not np.isfinite(a).all():
            raise ValueError("segment values must be finite")
        r0 = float(r0)
        if r0 <= 0:
            raise ValueError("r0 must be positive")
        m = a.shape[0] - 1
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "h", r0 / m)
        object.__setattr__(self, "values", a)

    def __setattr__(self, name, value):
        raise AttributeError("SegmentPath is immutable")

    @property
    def m(self):
        return self.values.shape[0] - 1

    @property
    def dim(self):
        return self.values.shape[1]

    def endpoint(self):
        # value at relative time 0
        return np.array(self.values[-1])

    def times(self):
        return np.linspace(-self.r0, 0.0, self.m + 1)

    def same_grid(self, other):
        return self.m == other.m and abs(self.r0 - other.r0) <= 1e-12 * max(self.r0, 1.0)

    def to_rows(self):
        """(time offset, coordinates) rows for CSV serialization."""
        return [(float(t), *map(float, v)) for t, v in zip(self.times(), self.values)]

    def __repr__(self):
        return f"SegmentPath(r0={self.r0}, m={self.m}, d={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, SegmentPath):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(self.values, other.values)


def segment_from_function(f, r0, m):
    """Sample f at the m+1 grid times covering [-r0, 0]."""
    if m < 1 or int(m) != m:
        raise ValueError("m must be a positive integer")
    ts = np.linspace(-float(r0), 0.0, int(m) + 1)
    vals = [np.atleast_1d(np.asarray(f(t), dtype=float)) for t in ts]
    a = np.stack(vals)
    if not np.isfinite(a).all():
        raise ValueError("initial-data function produced a non-finite sample")
    return SegmentPath(r0, a)


def constant_segment(x, r0, m):
    """Segment identically equal to the point x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return SegmentPath(r0, np.tile(x, (int(m) + 1, 1)))


def sup_distance(a, b):
    """Uniform distance between two segments on the same grid.

    Maximum over grid points of the Euclidean distance between values.
    """
    if not a.same_grid(b):
        raise GridMismatchError(f"segment grids differ: {a!r} vs {b!r}")
    d = a.values - b.values
    return float(np.sqrt((d * d).sum(axis=1)).max())


def shift_append(history, new_point):
    """Roll the window one grid step: drop the oldest value, append new_point."""
    p = np.atleast_1d(np.asarray(new_point, dtype=float))
    if p.shape != (history.dim,):
        raise ValueError(f"new point has dimension {p.shape}, segment has d={history.dim}")
    if not np.isfinite(p).all():
        raise ValueError("new point must be finite")
    vals = np.concatenate([history.values[1:], p[None, :]])
    return SegmentPath(history.r0, vals)


class GridSpec:
    """Uniform time grid for a run: step h = r0/m, horizon T = n_T * h."""

    __slots__ = ("r0", "T", "m", "h", "n_T")

    def __init__(self, r0, T, m):
        r0 = float(r0)
        T = float(T)
        m = int(m)
        if r0 <= 0 or T <= 0 or m < 1:
            raise ValueError("need r0 > 0, T > 0 and integer m >= 1")
        h = r0 / m
        n_T = round(T / h)
        if n_T < 1 or abs(n_T * h - T) > 1e-12 * max(T, 1.0):
            raise ValueError(f"T={T} is not an integer multiple of h={h}")
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "n_T", n_T)

    def __setattr__(self, name, value):
        raise AttributeError("GridSpec is immutable")

    def times(self):
        return np.arange(self.n_T + 1) * self.h

    def index_of(self, t, label="time"):
        """Grid index of a time that must lie on the grid."""
        k = round(float(t) / self.h)
        if k < 0 or k > self.n_T or abs(k * self.h - t) > 1e-12 * max(abs(t), 1.0):
            raise ValueError(f"{label}={t} does not lie on the grid (h={self.h})")
        return k

    def __repr__(self):
        return f"GridSpec(r0={self.r0}, T={self.T}, m={self.m})"

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (self.r0, self.T, self.m) == (other.r0, other.T, other.m)
