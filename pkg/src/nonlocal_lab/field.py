"""Grid-sampled space-time fields with analytic exterior data."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (
    ConfigurationError,
    MollifierWidthError,
    NonFiniteValue,
    TimeOutOfRange,
    UnsupportedExterior,
)
from .geometry import as_point

SNAPSHOT_FORMAT = "nonlocal-lab-snapshot"


@dataclass(frozen=True)
class Grid:
    """Cell-centred lattice on the box ``lower + [0, cells * h]`` per axis.

    Time levels are ``t_start + k * dt`` for ``k = 0..nt``.
    """

    lower: tuple
    cells: tuple
    h: float
    dt: float
    t_start: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(lower) != len(cells) or len(cells) not in (1, 2):
            raise ConfigurationError("lower and cells must have matching length 1 or 2")
        if min(cells) < 4:
            raise ConfigurationError(f"need at least 4 cells per axis, got {cells}")
        if not (self.h > 0 and self.dt > 0):
            raise ConfigurationError("h and dt must be positive")
        if not self.t_end > self.t_start:
            raise ConfigurationError("t_end must exceed t_start")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @classmethod
    def uniform(cls, n, half_width, cells, t_end=1.0, dt=None, t_start=0.0):
        """Box ``[-half_width, half_width]^n`` with ``cells`` cells per axis."""
        h = 2.0 * half_width / cells
        return cls((-half_width,) * n, (cells,) * n, h, dt if dt is not None else h, t_start, t_end)

    @property
    def n(self):
        return len(self.cells)

    @property
    def shape(self):
        return self.cells

    @property
    def size(self):
        return int(np.prod(self.cells))

    @property
    def upper(self):
        return tuple(lo + c * self.h for lo, c in zip(self.lower, self.cells))

    @property
    def cell_volume(self):
        return self.h ** self.n

    @property
    def nt(self):
        return int(round((self.t_end - self.t_start) / self.dt))

    def axis_centers(self, k):
        return self.lower[k] + (np.arange(self.cells[k]) + 0.5) * self.h

    def points(self):
        """Cell centres, shape ``(size, n)``, in C order of the cell index."""
        axes = [self.axis_centers(k) for k in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def index_vectors(self):
        idx = np.indices(self.cells).reshape(self.n, -1).T
        return idx

    def times(self, stride=1):
        return self.t_start + self.dt * np.arange(0, self.nt + 1, stride)

    def inside(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def refined(self, factor=2):
        return Grid(self.lower, tuple(c * factor for c in self.cells), self.h / factor, self.dt / factor,
                    self.t_start, self.t_end)

    def with_time(self, dt=None, t_start=None, t_end=None):
        return Grid(self.lower, self.cells, self.h, self.dt if dt is None else dt,
                    self.t_start if t_start is None else t_start, self.t_end if t_end is None else t_end)


EXTERIOR_KINDS = ("zero", "constant", "power_decay", "periodic", "callback")


@dataclass(frozen=True)
class ExteriorData:
    """Values of the field outside the computational box.

    ``power_decay`` is ``amplitude * |y - center|^(-p)``; ``callback`` is
    ``fn(y, t)`` with a declared growth exponent: ``|fn(y)| <= C (1+|y|)^growth``.
    ``periodic`` replicates the interior slice with the box as period cell.
    """

    kind: str = "zero"
    value: float = 0.0
    p: float = 0.0
    center: tuple = ()
    fn: Callable | None = None
    growth: float | None = None

    def __post_init__(self):
        if self.kind not in EXTERIOR_KINDS:
            raise ConfigurationError(f"unknown exterior kind {self.kind!r}")
        if self.kind == "callback" and self.fn is None:
            raise ConfigurationError("callback exterior needs fn")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def power_decay(cls, amplitude, p, center=(0.0,)):
        return cls("power_decay", value=float(amplitude), p=float(p), center=tuple(center))

    @classmethod
    def periodic(cls):
        return cls("periodic")

    @classmethod
    def callback(cls, fn, growth):
        return cls("callback", fn=fn, growth=growth)

    @property
    def is_periodic(self):
        return self.kind == "periodic"

    @property
    def is_time_dependent(self):
        return self.kind == "callback"

    def certify(self, s, grid=None):
        """Check membership in the tail space; raise UnsupportedExterior otherwise."""
        if self.kind == "power_decay":
            if not self.p > -2 * s:
                raise UnsupportedExterior(f"|y|^(-p) with p = {self.p} is not integrable against the tail weight")
            if grid is not None and not bool(grid.inside(self._center(grid.n))[0]):
                raise UnsupportedExterior("power-decay centre must lie in the box")
        if self.kind == "callback" and (self.growth is None or not self.growth < 2 * s):
            raise UnsupportedExterior(
                f"callback exterior must declare a growth exponent below 2s = {2 * s}, got {self.growth}"
            )
        return True

    def _center(self, n):
        c = np.zeros(n)
        if self.center:
            c[: len(self.center)] = self.center
        return c

    def evaluate(self, y, t, grid=None, interior=None):
        """Values at points ``y`` of shape ``(M, n)``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        m = y.shape[0]
        if self.kind == "zero":
            return np.zeros(m)
        if self.kind == "constant":
            return np.full(m, self.value)
        if self.kind == "power_decay":
            r = np.linalg.norm(y - self._center(y.shape[1]), axis=-1)
            return self.value * r ** (-self.p)
        if self.kind == "callback":
            out = np.asarray(self.fn(y, t), dtype=float).reshape(m)
            if not np.all(np.isfinite(out)):
                raise NonFiniteValue("exterior callback returned a non-finite value")
            return out
        if grid is None or interior is None:
            raise ConfigurationError("periodic exterior needs the grid and interior slice")
        return _interp_slice(grid, np.asarray(interior).reshape(grid.shape), _wrap(grid, y), periodic=True)

    def describe(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "power_decay":
            return {"kind": "power_decay", "value": self.value, "p": self.p, "center": list(self.center)}
        if self.kind == "callback":
            return {"kind": "callback", "growth": self.growth}
        return {"kind": self.kind}


def _wrap(grid, y):
    lo = np.asarray(grid.lower)
    span = np.asarray(grid.cells) * grid.h
    return lo + np.mod(y - lo, span)


def _interp_slice(grid, arr, x, periodic=False):
    """Multilinear interpolation of cell-centred values; clamped at the edge cells."""
    x = np.atleast_2d(x)
    out = np.zeros(x.shape[0])
    corners = []
    for k in range(grid.n):
        c = (x[:, k] - grid.lower[k]) / grid.h - 0.5
        i0 = np.floor(c).astype(int)
        w = c - i0
        m = grid.cells[k]
        if periodic:
            i0m, i1m = np.mod(i0, m), np.mod(i0 + 1, m)
        else:
            i0m, i1m = np.clip(i0, 0, m - 1), np.clip(i0 + 1, 0, m - 1)
        corners.append(((i0m, 1.0 - w), (i1m, w)))
    for choice in np.ndindex(*(2,) * grid.n):
        idx = tuple(corners[k][choice[k]][0] for k in range(grid.n))
        wt = np.ones(x.shape[0])
        for k in range(grid.n):
            wt = wt * corners[k][choice[k]][1]
        out = out + wt * arr[idx]
    return out


class Field:
    """Space-time samples on a grid plus exterior data.

    ``values`` has shape ``(len(times), *grid.shape)`` and is read-only.
    """

    def __init__(self, grid, values, times=None, exterior=None, stride=1, s=None):
        values = np.array(values, dtype=float)
        if values.shape == tuple(grid.shape):
            values = values[None]
        if values.shape[1:] != tuple(grid.shape):
            raise ConfigurationError(f"value shape {values.shape[1:]} does not match grid {grid.shape}")
        if times is None:
            times = grid.t_start + grid.dt * stride * np.arange(values.shape[0])
        times = np.asarray(times, dtype=float)
        if times.shape != (values.shape[0],):
            raise ConfigurationError("one time per stored slice required")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ConfigurationError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise NonFiniteValue(f"non-finite field value at {tuple(bad)}", index=tuple(bad))
        values.setflags(write=False)
        times.setflags(write=False)
        self.grid = grid
        self.values = values
        self.times = times
        self.exterior = exterior if exterior is not None else ExteriorData.zero()
        self.stride = int(stride)
        self.s = s

    @classmethod
    def from_function(cls, grid, fn, times=None, exterior=None, s=None, stride=1):
        """Sample ``fn(points, t)`` at the cell centres for each time."""
        if times is None:
            times = grid.times(stride)
        pts = grid.points()
        vals = [np.asarray(fn(pts, t), dtype=float).reshape(grid.shape) * np.ones(grid.shape) for t in times]
        return cls(grid, np.stack(vals), times, exterior, stride, s)

    @classmethod
    def constant(cls, grid, c, times=None, s=None):
        return cls.from_function(grid, lambda p, t: np.full(p.shape[0], float(c)), times,
                                 ExteriorData.constant(c), s)

    @property
    def n(self):
        return self.grid.n

    @property
    def nslices(self):
        return self.values.shape[0]

    def slice(self, k):
        return self.values[k]

    def time_index(self, t, atol=1e-12):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol * max(1.0, abs(t)):
            raise TimeOutOfRange(f"t = {t} is not a stored time")
        return k

    def values_at_time(self, t):
        """Interior slice at ``t`` (linear interpolation between stored slices)."""
        t0, t1 = self.times[0], self.times[-1]
        tol = 1e-12 * max(1.0, abs(t0), abs(t1))
        if t < t0 - tol or t > t1 + tol:
            raise TimeOutOfRange(f"t = {t} outside stored range [{t0}, {t1}]")
        if self.nslices == 1:
            return self.values[0]
        near = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[near] - t) <= tol:
            return self.values[near]
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), self.nslices - 2)
        dt = self.times[k + 1] - self.times[k]
        w = min(max((t - self.times[k]) / dt, 0.0), 1.0)
        if w == 0.0:
            return self.values[k]
        if w == 1.0:
            return self.values[k + 1]
        return (1 - w) * self.values[k] + w * self.values[k + 1]

    def exterior_values(self, y, t):
        interior = self.values_at_time(t) if self.exterior.is_periodic else None
        return self.exterior.evaluate(y, t, self.grid, interior)

    def evaluate_many(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sl = self.values_at_time(t)
        inside = self.grid.inside(x)
        out = np.empty(x.shape[0])
        if np.any(inside):
            out[inside] = _interp_slice(self.grid, sl, x[inside])
        if np.any(~inside):
            out[~inside] = self.exterior.evaluate(x[~inside], t, self.grid, sl)
        return out

    def with_values(self, values, times=None, exterior=None):
        return Field(self.grid, values, self.times if times is None else times,
                     self.exterior if exterior is None else exterior, self.stride, self.s)

    def scaled(self, factor):
        ext = self.exterior
        if ext.kind in ("constant", "power_decay"):
            ext = ExteriorData(ext.kind, factor * ext.value, ext.p, ext.center)
        elif ext.kind == "callback":
            fn = ext.fn
            ext = ExteriorData.callback(lambda y, t: factor * fn(y, t), ext.growth)
        return Field(self.grid, factor * self.values, self.times, ext, self.stride, self.s)

    def __sub__(self, other):
        if self.grid != other.grid or not np.array_equal(self.times, other.times):
            raise ConfigurationError("fields live on different grids or time lattices")
        return Field(self.grid, self.values - other.values, self.times, ExteriorData.zero(), self.stride, self.s)

    # snapshot I/O

    def to_snapshot(self):
        if self.exterior.kind == "callback":
            raise ConfigurationError("callback exterior data cannot be written to a snapshot")
        g = self.grid
        header = {
            "format": SNAPSHOT_FORMAT,
            "version": 1,
            "dimension": g.n,
            "lower": " ".join(_fmt(v) for v in g.lower),
            "cells": " ".join(str(c) for c in g.cells),
            "h": _fmt(g.h),
            "dt": _fmt(g.dt),
            "t_start": _fmt(g.t_start),
            "t_end": _fmt(g.t_end),
            "stride": self.stride,
            "s": "none" if self.s is None else _fmt(self.s),
            "exterior": self.exterior.kind,
            "exterior_value": _fmt(self.exterior.value),
            "exterior_p": _fmt(self.exterior.p),
            "exterior_center": " ".join(_fmt(v) for v in self.exterior.center),
        }
        buf = io.StringIO()
        for k, v in header.items():
            buf.write(f"# {k} = {v}\n")
        for t, sl in zip(self.times, self.values):
            buf.write(",".join([_fmt(t)] + [_fmt(v) for v in sl.ravel()]))
            buf.write("\n")
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_snapshot())

    @classmethod
    def from_snapshot(cls, text):
        header, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                header[key.strip()] = val.strip()
            elif line.strip():
                rows.append([float(v) for v in line.split(",")])
        if header.get("format") != SNAPSHOT_FORMAT:
            raise ConfigurationError("not a field snapshot")
        grid = Grid(
            tuple(float(v) for v in header["lower"].split()),
            tuple(int(v) for v in header["cells"].split()),
            float(header["h"]), float(header["dt"]), float(header["t_start"]), float(header["t_end"]),
        )
        data = np.array(rows, dtype=float)
        kind = header["exterior"]
        center = tuple(float(v) for v in header.get("exterior_center", "").split())
        ext = ExteriorData(kind, float(header["exterior_value"]), float(header["exterior_p"]), center)
        s = None if header["s"] == "none" else float(header["s"])
        values = data[:, 1:].reshape((data.shape[0],) + grid.shape)
        return cls(grid, values, data[:, 0], ext, int(header["stride"]), s)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_snapshot(fh.read())


def _fmt(v):
    return format(float(v), ".17g")


def evaluate(field, z):
    """Value of ``field`` at the space-time point ``z``."""
    z = as_point(z)
    if z.n != field.n:
        raise ConfigurationError("point dimension does not match the field")
    return float(field.evaluate_many(np.asarray(z.x)[None], z.t)[0])


def _bump(sigma):
    sigma = np.asarray(sigma, dtype=float)
    out = np.zeros_like(sigma)
    inside = np.abs(sigma) < 0.5
    out[inside] = np.exp(-1.0 / (1.0 - 4.0 * sigma[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_moments():
    mass = integrate.quad(lambda x: float(_bump(x)), -0.5, 0.5, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    m2 = integrate.quad(lambda x: x * x * float(_bump(x)), -0.5, 0.5, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return mass, m2 / mass


@dataclass(frozen=True)
class TimeMollifier:
    """Even smooth bump of unit mass supported in (-1/2, 1/2), scaled by ``epsilon``."""

    epsilon: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise MollifierWidthError(f"epsilon must be positive, got {self.epsilon}")

    @staticmethod
    def profile(sigma):
        return _bump(sigma) / _bump_moments()[0]

    @staticmethod
    def second_moment():
        return _bump_moments()[1]

    def weights(self, dt):
        """Lattice weights ``w_j`` for offsets ``j * dt``, normalised to unit sum."""
        jmax = int(math.floor(0.5 * self.epsilon / dt))
        j = np.arange(-jmax, jmax + 1)
        w = self.profile(j * dt / self.epsilon)
        if w.sum() <= 0:
            raise MollifierWidthError(f"epsilon = {self.epsilon} is narrower than the time lattice ({dt})")
        return j, w / w.sum()


def mollify_in_time(field, eps, t_range=None):
    """``u^eps(t) = sum_j w_j u(t - j dt)`` on the stored time lattice.

    Returns a field on the stored times ``t`` with ``eps < t - t_first`` and
    ``eps < t_last - t`` (restricted further to ``t_range`` if given).
    """
    times = field.times
    if field.nslices < 3:
        raise MollifierWidthError("need at least three stored slices")
    dt = float(times[1] - times[0])
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=0):
        raise ConfigurationError("mollification needs an equispaced time lattice")
    t_first, t_last = times[0], times[-1]
    ok = (times - t_first > eps) & (t_last - times > eps)
    if t_range is not None:
        lo, hi = t_range
        if not (eps < lo - t_first and eps < t_last - hi):
            raise MollifierWidthError(f"eps = {eps} too large for the sub-range {t_range}")
        ok &= (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if not np.any(ok):
        raise MollifierWidthError(f"eps = {eps} leaves no admissible stored time")
    j, w = TimeMollifier(eps).weights(dt)
    idx = np.flatnonzero(ok)
    out = np.zeros((idx.size,) + field.values.shape[1:])
    for jj, ww in zip(j, w):
        out += ww * field.values[idx - jj]
    return Field(field.grid, out, times[idx], field.exterior, field.stride, field.s)
