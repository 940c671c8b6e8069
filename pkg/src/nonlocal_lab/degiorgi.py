"""Iteration machinery: the two-sequence recursion, the level ladder on fields,
and the exponent ladders used for Besov bootstrapping."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .errors import ConfigurationError, LevelBelowThreshold, RegionError
from .geometry import Cylinder, SpaceTimePoint, dyadic_ladder
from .model import derive_exponents
from .norms import (
    ball_mask,
    forcing_field,
    level_set_measures,
    mixed_norm,
    tail_integral,
    time_step,
    time_window,
)


# two-sequence recursion ---------------------------------------------------------

@dataclass(frozen=True)
class TLIParams:
    M: float
    b: float
    kappa: float
    delta: float

    def __post_init__(self):
        if not (self.M > 1 and self.b > 1):
            raise ConfigurationError("need M > 1 and b > 1")
        if not (self.kappa > 0 and self.delta > 0):
            raise ConfigurationError("need kappa > 0 and delta > 0")

    @property
    def sigma(self):
        return min(self.kappa, self.delta)

    @property
    def threshold(self):
        """``(2M)^(-(1+kappa)/sigma) b^(-(1+kappa)/sigma^2)``."""
        k, sg = self.kappa, self.sigma
        return (2 * self.M) ** (-(1 + k) / sg) * self.b ** (-(1 + k) / sg ** 2)


@dataclass
class TLITrajectory:
    Y: list
    Z: list
    verdict: str
    threshold: float
    overflow_index: int | None = None

    def to_csv(self, rho=None, k=None):
        buf = io.StringIO()
        buf.write("h,Y,Z,rho,k\n")
        for h, (y, z) in enumerate(zip(self.Y, self.Z)):
            r = "" if rho is None else repr(float(rho[h]))
            kk = "" if k is None else repr(float(k[h]))
            buf.write(f"{h},{y!r},{z!r},{r},{kk}\n")
        return buf.getvalue()


def tli_iterate(params, y0, z0, steps, tol=1e-6):
    """Iterate the recursion with equality (the extremal trajectory).

    ``Y_{h+1} = M b^h (Y^(1+delta) + Z^(1+kappa) Y^delta)``,
    ``Z_{h+1} = M b^h (Y + Z^(1+kappa))``.
    """
    if y0 < 0 or z0 < 0:
        raise ConfigurationError("initial values must be nonnegative")
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    M, b, k, d = params.M, params.b, params.kappa, params.delta
    Y, Z = [float(y0)], [float(z0)]
    for h in range(steps):
        y, z = Y[-1], Z[-1]
        try:
            f = M * b ** h
            zk = z ** (1 + k)
            yn = f * (y ** (1 + d) + zk * y ** d)
            zn = f * (y + zk)
        except OverflowError:
            return TLITrajectory(Y, Z, "diverged", params.threshold, h + 1)
        if not (math.isfinite(yn) and math.isfinite(zn)):
            return TLITrajectory(Y, Z, "diverged", params.threshold, h + 1)
        Y.append(yn)
        Z.append(zn)
    verdict = "converged" if Y[-1] < tol and Z[-1] < tol else "undecided"
    return TLITrajectory(Y, Z, verdict, params.threshold)


# level ladder on fields ---------------------------------------------------------------

@dataclass(frozen=True)
class LadderState:
    h: int
    rho: float
    tau: float
    k: float
    y: float
    z: float
    Lambda: float
    rho_bar: float


@dataclass
class LadderReport:
    states: list
    N: float
    floor: float
    delta: float
    kappa: float
    c_y: float
    c_z: float
    base: float
    chebyshev_ok: bool

    @property
    def y(self):
        return np.array([st.y for st in self.states])

    @property
    def z(self):
        return np.array([st.z for st in self.states])

    def decreasing(self):
        return bool(np.all(np.diff(self.y) <= 0) and np.all(np.diff(self.z) <= 0))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("h,Y,Z,rho,k,Lambda\n")
        for st in self.states:
            buf.write(f"{st.h},{st.y!r},{st.z!r},{st.rho!r},{st.k!r},{st.Lambda!r}\n")
        return buf.getvalue()


def ladder_radii(h):
    """``rho_h = 1/2 + 2^(-h-2)``."""
    return 0.5 + 2.0 ** (-np.asarray(h, dtype=float) - 2)


def ladder_levels(N, h):
    """``k_h = N + N (1 - 2^-h)``."""
    return N + N * (1.0 - 2.0 ** (-np.asarray(h, dtype=float)))


def ladder_floor(u, forcing, params):
    """``|f|_{L^{q,r}(Q_1)} + sup_t int_{|y| > 1/2} |u| / |y|^(n+2s)`` for a normalised field."""
    origin = SpaceTimePoint((0.0,) * params.n, 0.0)
    f_norm = mixed_norm(forcing_field(forcing, u), Cylinder(origin, 1.0, 1.0), forcing.q, forcing.r)
    tail_sup = 0.0
    for kk in time_window(u, 0.0, 1.0, closed=True):
        a, b = tail_integral(u, origin.x, 0.5, u.times[kk], s=params.s)
        tail_sup = max(tail_sup, a + b)
    return f_norm + tail_sup


def ladder_from_field(u, forcing, N, h_max, params, base=None):
    """Ladder quantities ``y_h, z_h, Lambda_h`` for a field normalised to ``Q_1``.

    ``c_y`` and ``c_z`` are the smallest constants for which the recursion
    ``y_{h+1} <= c base^h (y^(1+delta) + z^(1+kappa) y^delta)`` and
    ``z_{h+1} <= c base^h (y + z^(1+kappa))`` hold along the computed ladder.
    """
    n, s = params.n, params.s
    g = u.grid
    if np.any(np.asarray(g.lower) > -1 + 1e-12) or np.any(np.asarray(g.upper) < 1 - 1e-12):
        raise RegionError("the field must cover the unit ball")
    der = derive_exponents(forcing.q, forcing.r, params)
    floor = ladder_floor(u, forcing, params)
    if not N > floor:
        raise LevelBelowThreshold(f"N = {N:.6g} must exceed {floor:.6g}", floor)
    base = 2.0 ** (n + 4) if base is None else base
    delta = 2 * s / (n + 2 * s)
    h_n = g.h ** n
    dt = time_step(u)
    vals = u.values.reshape(u.nslices, -1)
    origin = (0.0,) * n
    states = []
    hs = np.arange(h_max + 2)
    rho = ladder_radii(hs)
    k = ladder_levels(N, hs)
    cheb = True
    for h in range(h_max + 1):
        tau = rho[h] ** (2 * s)
        tidx = time_window(u, 0.0, tau)
        mask = ball_mask(g, origin, rho[h])
        w = np.maximum(vals[np.ix_(tidx, np.flatnonzero(mask))] - k[h], 0.0)
        y = float(np.sum(w * w)) * h_n * dt / N ** 2
        meas = level_set_measures(u, origin, rho[h], k[h], tidx)
        z = (dt * float(np.sum(meas ** (der.r_hat / der.q_hat)))) ** (2.0 / der.r_hat)
        rho_bar = 0.5 * (rho[h] + rho[h + 1])
        t_next = time_window(u, 0.0, rho[h + 1] ** (2 * s))
        lam = dt * float(np.sum(level_set_measures(u, origin, rho_bar, k[h + 1], t_next)))
        if lam > (k[h + 1] - k[h]) ** -2 * N ** 2 * y * (1 + 1e-12) + 1e-300:
            cheb = False
        states.append(LadderState(h, float(rho[h]), float(tau), float(k[h]), y, z, lam, float(rho_bar)))
    c_y = c_z = 0.0
    kap = der.kappa
    for h in range(h_max):
        a, b = states[h], states[h + 1]
        dy = base ** h * (a.y ** (1 + delta) + a.z ** (1 + kap) * a.y ** delta)
        dz = base ** h * (a.y + a.z ** (1 + kap))
        if dy > 0:
            c_y = max(c_y, b.y / dy)
        elif b.y > 0:
            c_y = math.inf
        if dz > 0:
            c_z = max(c_z, b.z / dz)
        elif b.z > 0:
            c_z = math.inf
    return LadderReport(states, N, floor, delta, kap, c_y, c_z, base, cheb)


def smallest_collapsing_N(u, forcing, params, h_max=8, grid_factor=1.05, max_tries=200):
    """Smallest ``N`` on a geometric grid above the floor whose ladder has ``y_{h_max} = 0``."""
    floor = ladder_floor(u, forcing, params)
    N = floor * grid_factor if floor > 0 else 1e-12
    for _ in range(max_tries):
        rep = ladder_from_field(u, forcing, N, h_max, params)
        if rep.states[-1].y == 0.0:
            return N, rep
        N *= grid_factor
    return math.inf, None


def tau_gap_holds(s, h_count=60, dps=60):
    """Check ``tau_h - tau_{h+1} >= s (rho_h - rho_{h+1})`` in high-precision arithmetic."""
    with mpmath.workdps(dps):
        s_mp = mpmath.mpf(Fraction(s).numerator) / Fraction(s).denominator if isinstance(s, Fraction) \
            else mpmath.mpf(s)
        for h in range(h_count):
            r0 = mpmath.mpf(1) / 2 + mpmath.mpf(2) ** (-h - 2)
            r1 = mpmath.mpf(1) / 2 + mpmath.mpf(2) ** (-h - 3)
            if r0 ** (2 * s_mp) - r1 ** (2 * s_mp) < s_mp * (r0 - r1):
                return False
    return True


# exponent ladders ------------------------------------------------------------------------

def as_rational(s):
    """Exact rational for ``s``; floats are accepted only when their decimal form is short."""
    if isinstance(s, Fraction):
        return s
    if isinstance(s, (int, str)):
        return Fraction(s)
    if isinstance(s, float):
        text = repr(s)
        digits = text.replace("-", "").replace(".", "").lstrip("0")
        if "e" in text or len(digits) > 8:
            raise ConfigurationError(f"s = {s!r} is not a short decimal; use exact=False")
        return Fraction(text)
    raise ConfigurationError(f"cannot interpret s = {s!r} as a rational")


@dataclass
class ExponentLadder:
    s: object
    q: list
    theta: list
    exact: bool
    identity_ok: bool
    mode: str = "case1"
    i_alpha: int | None = None
    j_alpha: int | None = None
    h0: object = None
    theta_tilde: list = field(default_factory=list)

    def ratio(self, i):
        """``(1 + theta_i q_i) / q_i``."""
        return (1 + self.theta[i] * self.q[i]) / self.q[i]

    def gap(self, i):
        return 2 * self.s - self.ratio(i)


def exponent_ladder(s, count, mode="case1", alpha=None, n=1, gamma=None, exact=True):
    """Entries ``q_i = i + 2``, ``theta_i = (2s(i+1) - 1)/(i+2)`` for ``i < count``.

    ``case1`` picks the first ``i`` with ``(1 + theta_i q_i - n)/q_i > alpha``
    and ``h0 = 1/(64 i_alpha)``. ``case2`` (for ``s > 1/2``) picks the first
    ``i`` with ratio ``>= 1``, then the smallest ``j >= 1`` with
    ``alpha < gamma - n/q_{i+j}`` and ``h0 = 1/(64 (i + j))``.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    if exact:
        sv = as_rational(s)
        one = Fraction(1)
    else:
        sv = float(s)
        one = 1.0
    if not (0 < sv < 1):
        raise ConfigurationError("s must lie in (0, 1)")
    q = [i + 2 for i in range(count + 1)]
    theta = [(2 * sv * (i + 1) - one) / (i + 2) for i in range(count + 1)]

    def ratio(i):
        return (one + theta[i] * q[i]) / q[i]

    ok = True
    for i in range(count):
        lhs = (one + 2 * sv + theta[i] * q[i]) / (q[i] + 1)
        if exact:
            ok &= lhs == ratio(i + 1)
        else:
            ok &= abs(lhs - ratio(i + 1)) <= 1e-14
    lad = ExponentLadder(sv, q[:count], theta[:count], exact, bool(ok), mode)
    if mode == "case1":
        if alpha is not None:
            if not (0 < alpha < min(2 * sv, 1)):
                raise ConfigurationError("alpha must lie in (0, min(2s, 1))")
            if sv > one / 2:
                raise ConfigurationError("case 1 needs s <= 1/2")
            i = 1
            while (one + theta_at(sv, i, one) * (i + 2) - n) / (i + 2) <= alpha:
                i += 1
                if i > 10 ** 7:
                    raise ConfigurationError("no admissible index found")
            lad.i_alpha = i
            lad.h0 = one / (64 * i)
    elif mode == "case2":
        if not sv > one / 2:
            raise ConfigurationError("case 2 needs s > 1/2")
        if alpha is None or gamma is None or not (0 < alpha < gamma < 1):
            raise ConfigurationError("case 2 needs 0 < alpha < gamma < 1")
        i = 0
        while (one + theta_at(sv, i, one) * (i + 2)) / (i + 2) < 1:
            i += 1
        g = as_rational(gamma) if exact else float(gamma)
        j = 1
        while not alpha < g - one * n / (i + j + 2):
            j += 1
            if j > 10 ** 7:
                raise ConfigurationError("no admissible j found")
        lad.i_alpha, lad.j_alpha = i, j
        lad.h0 = one / (64 * (i + j))
        lad.theta_tilde = [g - one / qi for qi in lad.q]
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return lad


def theta_at(s, i, one=1):
    return (2 * s * (i + 1) - one) / (i + 2)


def case2_inequalities_hold(lad, s):
    """``gamma < (2 + theta~_i q_i)/(q_i + 1) < (1 + 2s + theta~_i q_i)/(q_i + 1)`` on every entry."""
    out = True
    for qi, th in zip(lad.q, lad.theta_tilde):
        gam = (1 + th * qi) / qi
        mid = (2 + th * qi) / (qi + 1)
        top = (1 + 2 * s + th * qi) / (qi + 1)
        out &= gam < mid < top
    return bool(out)


def geometric_ladder(rho0, count):
    return dyadic_ladder(rho0, count)
