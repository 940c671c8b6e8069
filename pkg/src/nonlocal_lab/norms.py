"""Function-space quantities evaluated on fields.

Essential suprema in time become maxima over stored slices and time
integrals become Riemann sums with the stored spacing; the stride of the
field is recorded in every report so under-sampling stays visible.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, LevelBelowThreshold, RegionError
from .field import Field
from .geometry import Cylinder, as_point, parabolic_distance_array
from .model import derive_exponents
from .operator import exterior_mass, exterior_rule, pair_weight

_TOL = 1e-12


@dataclass
class NormReport:
    name: str
    value: float
    decomposition: dict = field(default_factory=dict)
    cylinder: Cylinder | None = None
    parameters: dict = field(default_factory=dict)

    def as_dict(self):
        out = {"name": self.name, "value": self.value, "decomposition": self.decomposition,
               "parameters": self.parameters}
        if self.cylinder is not None:
            c = self.cylinder
            out["cylinder"] = {"x0": list(c.center.x), "t0": c.center.t, "rho": c.rho, "tau": c.tau}
        return out

    def to_text(self):
        return json.dumps(self.as_dict(), sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return str(v)


# selection helpers ---------------------------------------------------------

def ball_mask(grid, x0, rho):
    """Cells whose centres lie in the open ball ``B_rho(x0)``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return np.linalg.norm(grid.points() - x0, axis=1) < rho


def _check_ball(grid, x0, rho):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    if np.any(x0 - rho < lo - 1e-12) or np.any(x0 + rho > hi + 1e-12):
        raise RegionError(f"ball of radius {rho} around {x0.tolist()} leaves the box")


def time_window(fld, t0, tau, closed=False):
    """Indices of stored times in ``(t0 - tau, t0]`` (``[t0 - tau, t0]`` if ``closed``)."""
    scale = max(1.0, abs(t0), abs(tau))
    t = fld.times
    if t0 > t[-1] + _TOL * scale or t0 - tau < t[0] - _TOL * scale:
        raise RegionError(f"time window ({t0 - tau}, {t0}] exceeds stored range [{t[0]}, {t[-1]}]")
    lo = t >= t0 - tau - _TOL * scale if closed else t > t0 - tau + _TOL * scale
    return np.flatnonzero(lo & (t <= t0 + _TOL * scale))


def time_step(fld):
    if fld.nslices > 1:
        return float((fld.times[-1] - fld.times[0]) / (fld.nslices - 1))
    return fld.grid.dt * fld.stride


def cylinder_points(fld, cyl):
    """``(values, (cell_index, time_index))`` of lattice points in the cylinder."""
    _check_ball(fld.grid, cyl.center.x, cyl.rho)
    cells = np.flatnonzero(ball_mask(fld.grid, cyl.center.x, cyl.rho))
    tidx = time_window(fld, cyl.center.t, cyl.tau)
    if cells.size == 0 or tidx.size == 0:
        raise RegionError("cylinder contains no lattice points")
    vals = fld.values.reshape(fld.nslices, -1)[np.ix_(tidx, cells)]
    return vals, cells, tidx


@lru_cache(maxsize=32)
def _pair_table(grid, s_eff, order):
    offs = np.indices(grid.cells).reshape(grid.n, -1).T
    return pair_weight(offs, grid.h, s_eff, order).reshape(grid.cells)


def pair_matrix(grid, mask, s_eff, order=4):
    """Pair weights of ``|x - y|^(-n - 2 s_eff)`` between the cells in ``mask``."""
    table = _pair_table(grid, float(s_eff), order)
    idx = grid.index_vectors()[np.asarray(mask, dtype=bool).ravel()]
    delta = np.abs(idx[:, None, :] - idx[None, :, :])
    return table[tuple(delta[..., k] for k in range(grid.n))]


# tails ----------------------------------------------------------------------

def _clipped_1d(lo, hi, x0, rho, outer, s):
    """``int_{[lo,hi] cap {rho <= |y - x0| < outer}} |y - x0|^(-1-2s) dy`` per cell."""
    def prim(r):
        with np.errstate(divide="ignore"):
            return np.where(r > 0, -(r ** (-2 * s)) / (2 * s), -np.inf)

    total = np.zeros_like(lo)
    for a, b in ((lo - x0, hi - x0), (x0 - hi, x0 - lo)):
        a = np.maximum(a, rho)
        b = np.minimum(b, outer)
        ok = b > a
        if np.any(ok):
            total[ok] += prim(b[ok]) - prim(a[ok])
    return total


def interior_tail_weights(grid, x0, rho, s, outer=math.inf, subcells=8):
    """Per-cell ``int_{cell cap {rho <= |y-x0| < outer}} |y - x0|^(-n-2s) dy``.

    Exact in 1-D; in 2-D a subcell Gauss rule with points tested against the annulus.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    pts = grid.points()
    if grid.n == 1:
        lo = pts[:, 0] - 0.5 * grid.h
        return _clipped_1d(lo, lo + grid.h, x0[0], rho, outer, s)
    g2, w2 = np.polynomial.legendre.leggauss(2)
    sub = (np.arange(subcells) + 0.5) / subcells - 0.5
    loc = (sub[:, None] + g2[None, :] * 0.5 / subcells).ravel()
    wl = np.tile(w2 * 0.5 / subcells, subcells)
    ox, oy = np.meshgrid(loc * grid.h, loc * grid.h, indexing="ij")
    ww = np.outer(wl, wl).ravel() * grid.h ** 2
    y = pts[:, None, :] + np.stack([ox.ravel(), oy.ravel()], axis=-1)[None]
    r = np.linalg.norm(y - x0, axis=-1)
    inside = (r >= rho) & (r < outer)
    with np.errstate(divide="ignore"):
        vals = np.where(inside, r ** (-2.0 - 2 * s), 0.0)
    return vals @ ww


def exterior_nodes(fld, x0, rho, s, radial_order=48, angular_order=32):
    """Rule ``(values(t), weights)`` for integrals over ``{outside box, |y - x0| >= rho}``.

    Constant and zero exterior data collapse to a single node carrying the exact mass.
    """
    g = fld.grid
    ext = fld.exterior
    ext.certify(s, g)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if math.isinf(rho):
        return (lambda t: np.zeros(0)), np.zeros(0)
    if ext.kind in ("zero", "constant"):
        mass = exterior_mass(x0, g.lower, g.upper, rho, s)
        return (lambda t: np.array([ext.value])), np.array([mass])
    nodes, wts = exterior_rule(x0, g.lower, g.upper, rho, s, radial_order, angular_order)
    return (lambda t: fld.exterior_values(nodes, t)), wts


def exterior_tail(fld, t, x0, rho, s, transform=np.abs, outer=math.inf):
    """``int_{outside box, rho <= |y-x0| < outer} transform(g(y,t)) |y - x0|^(-n-2s) dy``."""
    total = 0.0
    for r0, sign in ((rho, 1.0), (outer, -1.0)):
        vals, wts = exterior_nodes(fld, x0, r0, s)
        if wts.size:
            total += sign * float(np.sum(wts * transform(vals(t))))
    return total


def tail_integral(fld, x0, rho, t, outer=math.inf, transform=np.abs, s=None):
    """Interior and exterior parts of ``int_{rho <= |y-x0| < outer} transform(u)|y-x0|^(-n-2s)``."""
    s = fld.s if s is None else s
    if s is None:
        raise ConfigurationError("field carries no fractional order; pass s")
    wts = interior_tail_weights(fld.grid, x0, rho, s, outer)
    sl = fld.values_at_time(t).ravel()
    interior = float(np.dot(wts, transform(sl)))
    exterior = exterior_tail(fld, t, x0, rho, s, transform, outer)
    return interior, exterior


def tail(fld, z0, rho, tau, s=None, transform=np.abs):
    """``sup_t rho^(2s) int_{R^n \\ B_rho} |u| / |y - x0|^(n+2s)`` over stored ``t`` in ``(t0 - tau, t0]``."""
    z0 = as_point(z0)
    s = fld.s if s is None else s
    if s is None:
        raise ConfigurationError("field carries no fractional order; pass s")
    fld.exterior.certify(s, fld.grid)
    tidx = time_window(fld, z0.t, tau)
    if tidx.size == 0:
        raise RegionError("no stored slice in the tail window")
    wts = interior_tail_weights(fld.grid, z0.x, rho, s)
    best = (-1.0, 0.0, 0.0, None)
    vals = fld.values.reshape(fld.nslices, -1)
    for k in tidx:
        t = fld.times[k]
        inner = float(np.dot(wts, transform(vals[k])))
        outer = exterior_tail(fld, t, z0.x, rho, s, transform)
        if inner + outer > best[0]:
            best = (inner + outer, inner, outer, t)
    scale = rho ** (2 * s)
    return NormReport(
        "tail", scale * best[0],
        {"interior": scale * best[1], "exterior": scale * best[2]},
        Cylinder(z0, rho, tau),
        {"s": s, "argmax_time": best[3], "stride": fld.stride, "slices": int(tidx.size)},
    )


# seminorms and mixed norms ----------------------------------------------------

def _region_mask(grid, region):
    if region is None:
        return np.ones(grid.size, dtype=bool)
    if isinstance(region, tuple) and len(region) == 2 and np.ndim(region[1]) == 0:
        center, radius = region
        _check_ball(grid, center, radius)
        return ball_mask(grid, center, radius)
    m = np.asarray(region, dtype=bool).ravel()
    if m.size != grid.size:
        raise RegionError("region mask does not match the grid")
    return m


def sobolev_seminorm(u_slice, W, region=None):
    """``(sum_{i != j in region} (u_i - u_j)^2 K_ij)^(1/2)`` using assembled weights."""
    m = _region_mask(W.grid, region)
    u = np.asarray(u_slice, dtype=float).ravel()[m]
    K = W.K[np.ix_(m, m)]
    return math.sqrt(float(np.sum((u[:, None] - u[None, :]) ** 2 * K)))


def _lp(vals, p, weight):
    if math.isinf(p):
        return float(np.max(np.abs(vals))) if vals.size else 0.0
    return float(np.sum(np.abs(vals) ** p) * weight) ** (1.0 / p)


def mixed_norm(fld, cyl, q, r):
    """``L^r`` in time of the spatial ``L^q`` norm over the cylinder."""
    if not (q >= 1 and r >= 1):
        raise ConfigurationError("q and r must be >= 1")
    vals, _, _ = cylinder_points(fld, cyl)
    h_n = fld.grid.h ** fld.grid.n
    spatial = np.array([_lp(row, q, h_n) for row in vals])
    return _lp(spatial, r, time_step(fld))


def forcing_field(forcing, like):
    """Forcing sampled on the lattice and stored times of ``like``."""
    f = forcing.f
    if isinstance(f, Field):
        return f
    pts = like.grid.points()
    vals = np.stack([forcing.sample(pts, t).reshape(like.grid.shape) for t in like.times])
    return Field(like.grid, vals, like.times, None, like.stride, like.s)


def v2s_norm(fld, cyl, order=4):
    """``(int [u]^2_{W^{s,2}(B)} dt)^(1/2) + sup_t |u|_{L^2(B)}``."""
    vals, cells, tidx = cylinder_points(fld, cyl)
    mask = np.zeros(fld.grid.size, dtype=bool)
    mask[cells] = True
    K = pair_matrix(fld.grid, mask, fld.s, order)
    h_n = fld.grid.h ** fld.grid.n
    semi = sum(float(np.sum((row[:, None] - row[None, :]) ** 2 * K)) for row in vals) * time_step(fld)
    sup = max(float(np.sum(row ** 2)) * h_n for row in vals)
    return math.sqrt(semi) + math.sqrt(sup)


# level sets -------------------------------------------------------------------

@dataclass
class LevelSetLedger:
    k: float
    times: np.ndarray
    measures: np.ndarray
    ball_measure: float
    truncation: Field

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t,measure\n")
        for t, m in zip(self.times, self.measures):
            buf.write(f"{float(t)!r},{float(m)!r}\n")
        return buf.getvalue()


def truncation(fld, k):
    """``w_+ = (u - k)_+`` as a field (the exterior is truncated the same way)."""
    ext = fld.exterior
    vals = np.maximum(fld.values - k, 0.0)
    if ext.kind in ("zero", "constant"):
        from .field import ExteriorData

        new_ext = ExteriorData.constant(max(ext.value - k, 0.0))
    elif ext.kind == "periodic":
        new_ext = ext
    else:
        from .field import ExteriorData

        base = fld.exterior_values
        new_ext = ExteriorData.callback(lambda y, t: np.maximum(base(y, t) - k, 0.0),
                                        ext.growth if ext.growth is not None else -ext.p)
    return Field(fld.grid, vals, fld.times, new_ext, fld.stride, fld.s)


def level_set_measures(fld, x0, rho, k, tidx=None):
    """``|E(t; x0, rho, k)| = |{x in B_rho : u > k}|`` per stored slice."""
    mask = ball_mask(fld.grid, x0, rho)
    vals = fld.values.reshape(fld.nslices, -1)
    if tidx is not None:
        vals = vals[tidx]
    return (vals[:, mask] > k).sum(axis=1) * fld.grid.h ** fld.grid.n


def level_set_ledger(fld, x0, rho, k):
    m = level_set_measures(fld, x0, rho, k)
    bm = ball_mask(fld.grid, x0, rho).sum() * fld.grid.h ** fld.grid.n
    return LevelSetLedger(k, fld.times.copy(), m, float(bm), truncation(fld, k))


# Besov, Campanato, Hölder -----------------------------------------------------------

def besov_quotient(u_slice, grid, beta, p, order, h_max, region):
    """``sup_h |delta_h u / |h|^beta|_{L^p(region)}`` over lattice shifts ``0 < |h| < h_max``.

    ``order=2`` uses ``u(x + 2h) - 2u(x + h) + u(x)``.
    """
    if order not in (1, 2):
        raise ConfigurationError("order must be 1 or 2")
    u = np.asarray(u_slice, dtype=float).reshape(grid.shape)
    mask = _region_mask(grid, region).reshape(grid.shape)
    reach = int(math.ceil(h_max / grid.h))
    idx = np.argwhere(mask)
    if idx.size == 0:
        raise RegionError("empty region")
    margin = 2 * reach
    if np.any(idx.min(axis=0) - margin < 0) or np.any(idx.max(axis=0) + margin >= np.asarray(grid.cells)):
        raise RegionError("region plus twice h_max leaves the box")
    h_n = grid.h ** grid.n
    axes = [np.arange(-reach, reach + 1)] * grid.n
    shifts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.n)
    best = 0.0
    for sh in shifts:
        length = float(np.linalg.norm(sh)) * grid.h
        if not (0 < length < h_max):
            continue
        a = u[tuple((idx + sh).T)]
        b = u[tuple(idx.T)]
        if order == 1:
            d = a - b
        else:
            d = u[tuple((idx + 2 * sh).T)] - 2 * a + b
        best = max(best, _lp(d, p, h_n) / length ** beta)
    return best


def campanato_excess(fld, cyl, p=2):
    """Lattice mean of ``|u - mean_Q u|^p`` over the cylinder."""
    vals, _, _ = cylinder_points(fld, cyl)
    mean = float(np.mean(vals))
    return float(np.mean(np.abs(vals - mean) ** p))


def holder_seminorm_estimate(fld, cyl, alpha, s, pair_budget=20000, seed=0):
    """Max of ``|u(z) - u(z')| / d_alpha(z, z')`` over deterministic point pairs."""
    if not (0 < alpha <= 1):
        raise ConfigurationError("alpha must lie in (0, 1]")
    vals, cells, tidx = cylinder_points(fld, cyl)
    x = fld.grid.points()[cells]
    t = fld.times[tidx]
    nc, nt = cells.size, tidx.size
    M = nc * nt
    flat = vals.ravel()
    xs = np.repeat(x[None], nt, axis=0).reshape(M, -1)
    ts = np.repeat(t, nc)
    if M * (M - 1) // 2 <= pair_budget:
        i, j = np.triu_indices(M, 1)
    else:
        pts = qmc.Sobol(d=2, scramble=False).random_base2(math.ceil(math.log2(pair_budget)))[:pair_budget]
        i = np.minimum((pts[:, 0] * M).astype(int), M - 1)
        j = np.minimum((pts[:, 1] * M).astype(int), M - 1)
        # every lattice neighbour pair, which carries the finest scale
        grid_idx = np.arange(M).reshape(nt, nc)
        i_nb = [grid_idx[:, :-1].ravel(), grid_idx[:-1, :].ravel()]
        j_nb = [grid_idx[:, 1:].ravel(), grid_idx[1:, :].ravel()]
        i = np.concatenate([i] + i_nb)
        j = np.concatenate([j] + j_nb)
        keep = i != j
        i, j = i[keep], j[keep]
    d = parabolic_distance_array(xs[i], ts[i], xs[j], ts[j], alpha, s)
    return float(np.max(np.abs(flat[i] - flat[j]) / d)) if i.size else 0.0


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    residual: float
    radii: np.ndarray
    excess: np.ndarray
    verdict: str

    @property
    def degenerate(self):
        return self.verdict.startswith("degenerate")

    def to_csv(self):
        buf = io.StringIO()
        buf.write("rho,excess,sqrt_excess\n")
        for r, e in zip(self.radii, self.excess):
            buf.write(f"{float(r)!r},{float(e)!r},{math.sqrt(e)!r}\n")
        return buf.getvalue()


def decay_exponent_fit(fld, center, radii, s=None, p=2, zero_tol=1e-28):
    """Least-squares slope of ``log excess^(1/2)`` against ``log rho`` on standard cylinders."""
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3:
        raise ConfigurationError("decay fit needs at least three radii")
    s = fld.s if s is None else s
    z0 = as_point(center)
    excess = np.array([campanato_excess(fld, Cylinder.standard(z0, r, s), p) for r in radii])
    scale = max(1.0, float(np.max(np.abs(fld.values))) ** 2)
    if np.all(excess <= zero_tol * scale):
        return ExponentFit(math.nan, math.nan, 0.0, radii, excess, "degenerate: zero excess")
    if np.any(excess <= zero_tol * scale):
        return ExponentFit(math.nan, math.nan, 0.0, radii, excess, "degenerate: zero excess at some radii")
    X = np.log(radii)
    Y = 0.5 * np.log(excess)
    A = np.stack([X, np.ones_like(X)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, Y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - Y) ** 2)))
    return ExponentFit(float(coef[0]), float(coef[1]), resid, radii, excess, "ok")


# cutoffs ---------------------------------------------------------------------------

def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class CutoffPair:
    """``psi`` = 1 on ``B_rho``, 0 outside ``B_{(rho+R)/2}``; ``eta`` = 0 before
    ``t0 - (T1+T2)/2``, 1 after ``t0 - T1``. Both are C^1 piecewise cubics."""

    x0: tuple
    t0: float
    rho: float
    R: float
    T1: float
    T2: float

    def __post_init__(self):
        if not (0 < self.rho < self.R and 0 < self.T1 < self.T2):
            raise ConfigurationError("need 0 < rho < R and 0 < T1 < T2")

    def psi(self, x):
        r = np.linalg.norm(np.atleast_2d(x) - np.asarray(self.x0), axis=-1)
        width = 0.5 * (self.R - self.rho)
        return 1.0 - smoothstep((r - self.rho) / width)

    def eta(self, t):
        width = 0.5 * (self.T2 - self.T1)
        start = self.t0 - 0.5 * (self.T1 + self.T2)
        return smoothstep((np.asarray(t, dtype=float) - start) / width)

    @property
    def grad_bound(self):
        return 3.0 / (self.R - self.rho)

    @property
    def eta_bound(self):
        return 3.0 / (self.T2 - self.T1)

    def check(self):
        return self.grad_bound <= 4.0 / (self.R - self.rho) and self.eta_bound <= 4.0 / (self.T2 - self.T1)


@dataclass
class CaccioppoliReport:
    lhs: float
    rhs: float
    ratio: float
    terms: dict
    threshold: float
    vacuous: bool


def caccioppoli_sides(fld, k, rho, R, T1, T2, z0, forcing, params, cutoffs=None, order=4):
    """Both sides of the energy estimate for ``w_+ = (u - k)_+``, each constant set to 1."""
    z0 = as_point(z0)
    s, n = params.s, params.n
    if not (0 < rho < R):
        raise ConfigurationError("need 0 < rho < R")
    if not (0 < T1 < T2):
        raise ConfigurationError("need 0 < T1 < T2")
    if T2 >= R ** (2 * s):
        raise ConfigurationError(f"need T2 < R^(2s) = {R ** (2 * s):.6g}")
    cutoffs = cutoffs or CutoffPair(z0.x, z0.t, rho, R, T1, T2)
    if not cutoffs.check():
        raise ConfigurationError("cutoff derivative bounds violated")
    der = derive_exponents(forcing.q, forcing.r, params)
    outer = Cylinder(z0, R, T2)
    f_norm = mixed_norm(forcing_field(forcing, fld), outer, forcing.q, forcing.r)
    threshold = f_norm * R ** (n * der.kappa)
    if k < threshold * (1 - 1e-12):
        raise LevelBelowThreshold(f"level k = {k:.6g} is below the threshold {threshold:.6g}", threshold)
    g = fld.grid
    h_n = g.h ** n
    dt = time_step(fld)
    w = truncation(fld, k)
    wv = w.values.reshape(w.nslices, -1)

    _check_ball(g, z0.x, R)
    inner = ball_mask(g, z0.x, rho)
    big = ball_mask(g, z0.x, R)
    K = pair_matrix(g, inner, s, order)
    t_inner_int = time_window(fld, z0.t, T1)
    t_inner_sup = time_window(fld, z0.t, T1, closed=True)
    t_outer_int = time_window(fld, z0.t, T2)
    t_outer_sup = time_window(fld, z0.t, T2, closed=True)

    semi = dt * sum(float(np.sum((row[:, None] - row[None, :]) ** 2 * K)) for row in wv[t_inner_int][:, inner])
    sup_l2 = max(float(np.sum(row ** 2)) * h_n for row in wv[t_inner_sup][:, inner])
    l2_big = dt * float(np.sum(wv[t_outer_int][:, big] ** 2)) * h_n
    l1_big = dt * float(np.sum(wv[t_outer_int][:, big])) * h_n
    rhs1 = (R ** (2 * (1 - s)) / (R - rho) ** 2 + 1.0 / (T2 - T1)) * l2_big
    tail_sup = 0.0
    for kk in t_outer_sup:
        a, b = tail_integral(w, z0.x, rho, fld.times[kk], transform=lambda v: v, s=s)
        tail_sup = max(tail_sup, a + b)
    rhs2 = (R / (R - rho)) ** (n + 2 * s) * tail_sup * l1_big
    meas = level_set_measures(fld, z0.x, R, k, t_outer_int)
    integral = dt * float(np.sum(meas ** (der.r_hat / der.q_hat)))
    rhs3 = k * k * R ** (-n * der.kappa) * integral ** (2 * (1 + der.kappa) / der.r_hat)
    lhs = semi + sup_l2
    rhs = rhs1 + rhs2 + rhs3
    vacuous = lhs == 0.0
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs == 0 else math.inf
    terms = {"lhs_seminorm": semi, "lhs_sup": sup_l2, "rhs_energy": rhs1, "rhs_tail": rhs2,
             "rhs_level": rhs3, "tail_sup": tail_sup, "l1": l1_big, "l2": l2_big, "forcing_norm": f_norm}
    return CaccioppoliReport(lhs, rhs, ratio, terms, threshold, vacuous)


def gluing_cutoff(grid, x0, rho):
    """Lattice ``psi``: constant on ``B_{rho/2}``, zero outside ``B_{3 rho/4}``, mean 1 on ``B_rho``."""
    r = np.linalg.norm(grid.points() - np.atleast_1d(np.asarray(x0, dtype=float)), axis=1)
    prof = 1.0 - smoothstep((r - 0.5 * rho) / (0.25 * rho))
    prof[r >= 0.75 * rho] = 0.0
    mask = r < rho
    mean = prof[mask].mean() if mask.any() else 0.0
    if mean <= 0:
        raise RegionError("ball too small for the lattice")
    return prof / mean


def check_gluing_cutoff(psi, grid, x0, rho, tol=1e-10):
    psi = np.asarray(psi, dtype=float).ravel()
    r = np.linalg.norm(grid.points() - np.atleast_1d(np.asarray(x0, dtype=float)), axis=1)
    mask = r < rho
    problems = []
    if np.any(psi < -tol):
        problems.append("negative values")
    if abs(psi[mask].mean() - 1.0) > tol:
        problems.append("mean over B_rho differs from 1")
    core = r < 0.5 * rho
    if core.any() and np.ptp(psi[core]) > tol:
        problems.append("not constant on B_rho/2")
    if np.any(np.abs(psi[r >= 0.75 * rho]) > tol):
        problems.append("support leaves B_3rho/4")
    if problems:
        raise ConfigurationError("cutoff violates its conditions: " + ", ".join(problems))


def gluing_sides(fld, z0, rho, theta, T0, T1, psi, s=None, order=4):
    """Drift of ``avg(u psi)`` between ``T0`` and ``T1`` against the two oscillation integrals."""
    z0 = as_point(z0)
    s = fld.s if s is None else s
    g = fld.grid
    check_gluing_cutoff(psi, g, z0.x, rho)
    if not (z0.t - theta < T0 < T1 <= z0.t + 1e-12):
        raise ConfigurationError("need t0 - theta < T0 < T1 <= t0")
    _check_ball(g, z0.x, rho)
    psi = np.asarray(psi, dtype=float).ravel()
    ball = ball_mask(g, z0.x, rho)
    inner = ball_mask(g, z0.x, 0.75 * rho)

    def avg(t):
        sl = fld.values_at_time(t).ravel()
        return float(np.mean((sl * psi)[ball]))

    lhs = abs(avg(T1) - avg(T0))
    tidx = time_window(fld, z0.t, theta)
    if tidx.size == 0:
        raise RegionError("no stored slice in the gluing window")
    K1 = pair_matrix(g, ball, s - 0.5, order)
    h_n = g.h ** g.n
    nb = ball.sum()
    wy = interior_tail_weights(g, z0.x, rho, s)
    ext_vals, ext_w = exterior_nodes(fld, z0.x, rho, s)
    term1 = term2 = 0.0
    for kk in tidx:
        t = fld.times[kk]
        sl = fld.values[kk].ravel()
        ub = sl[ball]
        term1 += float(np.sum(np.abs(ub[:, None] - ub[None, :]) * K1)) / (nb * h_n)
        ux = sl[inner]
        inside = float(np.sum(wy * np.mean(np.abs(ux[:, None] - sl[None, :]), axis=0)))
        gv = ext_vals(t)
        outside = float(np.sum(ext_w * np.mean(np.abs(ux[:, None] - gv[None, :]), axis=0)))
        term2 += inside + outside
    term1 *= theta / rho / tidx.size
    term2 *= theta / tidx.size
    rhs = term1 + term2
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return NormReport("gluing", lhs, {"lhs": lhs, "rhs_near": term1, "rhs_far": term2, "rhs": rhs, "ratio": ratio},
                      Cylinder(z0, rho, theta), {"T0": T0, "T1": T1, "s": s, "stride": fld.stride})


def poincare_sides(u_slice, grid, x0, r, psi, s, p=2, order=4):
    """``int_{B_r} |u - avg(u psi)|^p`` against ``r^(sp) |psi|_inf^p [u]^p_{W^{s,p}(B_r)}``."""
    u = np.asarray(u_slice, dtype=float).ravel()
    psi = np.asarray(psi, dtype=float).ravel()
    _check_ball(grid, x0, r)
    ball = ball_mask(grid, x0, r)
    if abs(psi[ball].mean() - 1.0) > 1e-10:
        raise ConfigurationError("psi must have mean 1 over the ball")
    h_n = grid.h ** grid.n
    ub = u[ball]
    avg = float(np.mean(ub * psi[ball]))
    lhs = float(np.sum(np.abs(ub - avg) ** p)) * h_n
    K = pair_matrix(grid, ball, s * p / 2.0, order)
    semi = float(np.sum(np.abs(ub[:, None] - ub[None, :]) ** p * K))
    rhs = r ** (s * p) * float(np.max(np.abs(psi[ball]))) ** p * semi
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return NormReport("poincare", lhs, {"lhs": lhs, "rhs": rhs, "seminorm_p": semi, "ratio": ratio},
                      None, {"r": r, "p": p, "s": s})
