"""Parabolic space-time geometry: points, cylinders, the parabolic metric."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def _finite_vector(x):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size not in (1, 2):
        raise ConfigurationError(f"spatial coordinate must have length 1 or 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"non-finite coordinate {arr}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", _finite_vector(self.x))
        t = float(self.t)
        if not math.isfinite(t):
            raise ConfigurationError(f"non-finite time {self.t}")
        object.__setattr__(self, "t", t)

    @property
    def n(self):
        return len(self.x)

    @property
    def xa(self):
        return np.asarray(self.x)


def as_point(z, t=None):
    """Coerce ``z`` (a SpaceTimePoint, an (x, t) pair, or x with ``t``) to a point."""
    if isinstance(z, SpaceTimePoint):
        return z
    if t is not None:
        return SpaceTimePoint(z, t)
    x, tt = z
    return SpaceTimePoint(x, tt)


@dataclass(frozen=True)
class ParabolicBoundary:
    """Bottom slice ``B_rho x {t0 - tau}`` and lateral side ``dB_rho x [t0 - tau, t0]``."""

    base: dict
    lateral: dict

    def contains(self, x, t, atol=1e-12):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.base["center"])
        r = np.linalg.norm(x - c, axis=-1)
        on_base = (np.abs(t - self.base["time"]) <= atol) & (r < self.base["radius"] + atol)
        t_lo, t_hi = self.lateral["time_interval"]
        on_side = (np.abs(r - self.lateral["radius"]) <= atol) & (t >= t_lo - atol) & (t <= t_hi + atol)
        return on_base | on_side


@dataclass(frozen=True)
class Cylinder:
    """``Q_{rho,tau}(z0) = B_rho(x0) x (t0 - tau, t0]``."""

    center: SpaceTimePoint
    rho: float
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ConfigurationError(f"cylinder radius must be positive, got {self.rho}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigurationError(f"cylinder time depth must be positive, got {self.tau}")

    @classmethod
    def standard(cls, center, rho, s):
        """The scaled cylinder ``Q_rho(z0)`` with ``tau = rho^(2s)``."""
        return cls(as_point(center), rho, rho ** (2 * s))

    @property
    def n(self):
        return self.center.n

    @property
    def t_interval(self):
        return (self.center.t - self.tau, self.center.t)

    def in_ball(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - self.center.xa, axis=-1) < self.rho

    def in_time(self, t):
        t = np.asarray(t, dtype=float)
        t0 = self.center.t
        return (t > t0 - self.tau) & (t <= t0)

    def contains(self, x, t):
        return self.in_ball(x) & self.in_time(t)

    def ball_measure(self):
        if self.n == 1:
            return 2.0 * self.rho
        return math.pi * self.rho ** 2

    def measure(self):
        return self.ball_measure() * self.tau

    def parabolic_boundary(self):
        t0 = self.center.t
        return ParabolicBoundary(
            base={"center": self.center.x, "radius": self.rho, "time": t0 - self.tau},
            lateral={"center": self.center.x, "radius": self.rho, "time_interval": (t0 - self.tau, t0)},
        )

    def scaled(self, rho=None, tau=None):
        return Cylinder(self.center, self.rho if rho is None else rho, self.tau if tau is None else tau)


def parabolic_distance(z1, z2, alpha, s):
    """``|x1 - x2|^alpha + |t1 - t2|^(alpha / 2s)``, the Hölder seminorm denominator."""
    if not (0 < alpha <= 1):
        raise ConfigurationError(f"alpha must lie in (0, 1], got {alpha}")
    if not (0 < s < 1):
        raise ConfigurationError(f"s must lie in (0, 1), got {s}")
    z1, z2 = as_point(z1), as_point(z2)
    if z1.n != z2.n:
        raise ConfigurationError("points live in different dimensions")
    dx = math.dist(z1.x, z2.x)
    dt = abs(z1.t - z2.t)
    return dx ** alpha + dt ** (alpha / (2 * s))


def parabolic_distance_array(x1, t1, x2, t2, alpha, s):
    """Vectorised form of :func:`parabolic_distance` over arrays of points."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.ndim == 1:
        x1 = x1[:, None]
        x2 = x2[:, None]
    dx = np.linalg.norm(x1 - x2, axis=-1)
    dt = np.abs(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float))
    return dx ** alpha + dt ** (alpha / (2 * s))


def dyadic_ladder(rho0=None, count=1, rho_final=None, half_limit=False):
    """Strictly decreasing radius ladder.

    With ``half_limit=True`` returns ``1/2 + 2^(-h-2)`` for ``h = 0..count-1``
    (``rho0`` is ignored). Otherwise ``rho_final + (rho0 - rho_final) 2^(-h)``
    with ``rho_final`` defaulting to ``rho0 / 2``.
    """
    if count < 1:
        raise ConfigurationError("ladder needs count >= 1")
    h = np.arange(count, dtype=float)
    if half_limit:
        return 0.5 + 2.0 ** (-h - 2)
    if rho0 is None or not rho0 > 0:
        raise ConfigurationError(f"rho0 must be positive, got {rho0}")
    if rho_final is None:
        rho_final = rho0 / 2
    if not (0 <= rho_final < rho0):
        raise ConfigurationError("rho_final must lie in [0, rho0)")
    return rho_final + (rho0 - rho_final) * 2.0 ** (-h)


def geometric_radii(rho_max, count, ratio=0.5):
    """``rho_max * ratio^h``: the dyadic radii used by decay regressions."""
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    return rho_max * ratio ** np.arange(count, dtype=float)
