"""Discrete nonlocal operator and its Dirichlet form.

Pair weights approximate ``K_ij = int_{cell_i} int_{cell_j} |x - y|^(-n-2s)``.
The pointwise operator at cell ``i`` is

    (L u)_i = h^-n sum_j Phi(u_i - u_j) A_ij K_ij
              + sum_m w_im Phi(u_i - g(y_im)) A(x_i, y_im)

where the second sum is a far-field rule for the part of space outside the
box (exterior data ``g``). With periodic exterior data the box is replicated
and the far field is folded into a circulant weight matrix instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from .errors import ConfigurationError, NonFiniteValue

QUADRATURE_ORDERS = (1, 2, 4)


def _gauss01(order):
    x, w = leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def unit_pair_integral(d, s, order):
    """``int_{[0,1]^n} int_{[0,1]^n} |d + xi - eta|^(-n-2s)`` by tensor Gauss.

    ``d`` is an integer offset of shape ``(M, n)``. For touching cells the
    integrand is singular on the shared face; the Gauss rule then returns a
    finite regularised value (the nodes avoid the face).
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    n = d.shape[1]
    x, w = _gauss01(order)
    diff = (x[:, None] - x[None, :]).ravel()
    wd = (w[:, None] * w[None, :]).ravel()
    if n == 1:
        z = np.abs(d[:, 0][:, None] + diff[None, :])
        return np.sum(wd[None, :] * z ** (-1.0 - 2 * s), axis=1)
    dx = d[:, 0][:, None, None] + diff[None, :, None]
    dy = d[:, 1][:, None, None] + diff[None, None, :]
    r2 = dx * dx + dy * dy
    return np.sum((wd[:, None] * wd[None, :])[None] * r2 ** (-(2.0 + 2 * s) / 2), axis=(1, 2))


def pair_weight(d, h, s, order):
    """Pair weights for integer offsets ``d``; zero for the diagonal offset."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    n = d.shape[1]
    dist = np.linalg.norm(d, axis=1)
    out = np.zeros(d.shape[0])
    near = (dist > 0) & (dist <= 2.0 + 1e-12)
    far = dist > 2.0 + 1e-12
    scale = h ** (n - 2 * s)
    if np.any(near):
        out[near] = scale * unit_pair_integral(d[near], s, order)
    out[far] = scale * dist[far] ** (-n - 2 * s)
    return out


# far field ---------------------------------------------------------------

def _exit_distance(x0, lower, upper, theta):
    """Distance from ``x0`` to the box boundary along direction ``theta`` (2-D)."""
    c, sn = np.cos(theta), np.sin(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(c > 0, (upper[0] - x0[0]) / c, np.where(c < 0, (lower[0] - x0[0]) / c, np.inf))
        ty = np.where(sn > 0, (upper[1] - x0[1]) / sn, np.where(sn < 0, (lower[1] - x0[1]) / sn, np.inf))
    return np.minimum(tx, ty)


def _angle_breaks(x0, lower, upper, rho):
    corners = [(lower[0], lower[1]), (upper[0], lower[1]), (upper[0], upper[1]), (lower[0], upper[1])]
    br = [math.atan2(cy - x0[1], cx - x0[0]) for cx, cy in corners]
    if rho > 0:
        # directions where the ball of radius rho meets an edge line
        for k, (lo, hi) in enumerate(zip(lower, upper)):
            for dist, base in ((hi - x0[k], 0.0), (x0[k] - lo, math.pi)):
                if 0 < dist < rho:
                    a = math.acos(dist / rho)
                    axis = base + (0.0 if k == 0 else 0.5 * math.pi)
                    br.extend([axis - a, axis + a])
    br = np.mod(np.array(br), 2 * math.pi)
    br = np.unique(np.concatenate([br, [0.0, 2 * math.pi]]))
    return br[np.diff(np.concatenate([br, [np.inf]])) > 1e-14]


def exterior_rule(x0, lower, upper, rho, s, radial_order=24, angular_order=24):
    """Nodes and weights for ``int g(y) |y - x0|^(-n-2s)`` over ``{y outside box, |y - x0| >= rho}``.

    Radially, ``w = (r0 / r)^(2s)`` maps ``[r0, inf)`` to ``(0, 1]`` and the
    weight becomes ``r0^(-2s) / (2s) dw``; the rule is exact for constant ``g``
    up to the angular quadrature. ``x0`` must lie in the closed box.
    """
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = x0.size
    wq, ww = _gauss01(radial_order)
    stretch = wq ** (-1.0 / (2 * s))
    if n == 1:
        nodes, weights = [], []
        for sign, dist in ((1.0, upper[0] - x0[0]), (-1.0, x0[0] - lower[0])):
            r0 = max(dist, rho)
            if r0 <= 0:
                raise ConfigurationError("exterior rule centre lies on the box boundary")
            nodes.append(x0[0] + sign * r0 * stretch)
            weights.append(ww * r0 ** (-2 * s) / (2 * s))
        return np.concatenate(nodes)[:, None], np.concatenate(weights)
    br = _angle_breaks(x0, lower, upper, rho)
    ta, tw = _gauss01(angular_order)
    theta = (br[:-1, None] + np.diff(br)[:, None] * ta[None, :]).ravel()
    wtheta = (np.diff(br)[:, None] * tw[None, :]).ravel()
    r0 = np.maximum(_exit_distance(x0, lower, upper, theta), rho)
    if np.any(r0 <= 0):
        raise ConfigurationError("exterior rule centre lies on the box boundary")
    r = r0[:, None] * stretch[None, :]
    pts = x0[None, None, :] + r[..., None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)[:, None, :]
    wts = (wtheta * r0 ** (-2 * s) / (2 * s))[:, None] * ww[None, :]
    return pts.reshape(-1, 2), wts.ravel()


def exterior_mass(x0, lower, upper, rho, s):
    """``int |y - x0|^(-n-2s)`` over ``{y outside box, |y - x0| >= rho}``."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if n == 1:
        r1 = max(upper[0] - x0[0], rho)
        r2 = max(x0[0] - lower[0], rho)
        return (r1 ** (-2 * s) + r2 ** (-2 * s)) / (2 * s)
    br = _angle_breaks(x0, np.asarray(lower, float), np.asarray(upper, float), rho)
    ta, tw = _gauss01(64)
    theta = (br[:-1, None] + np.diff(br)[:, None] * ta[None, :]).ravel()
    wtheta = (np.diff(br)[:, None] * tw[None, :]).ravel()
    r0 = np.maximum(_exit_distance(x0, lower, upper, theta), rho)
    return float(np.sum(wtheta * r0 ** (-2 * s)) / (2 * s))


def complement_mass(radius, n, s):
    """``int_{|y|_inf > radius} |y|^(-n-2s) dy``: mass outside a cube."""
    if n == 1:
        return 2.0 * radius ** (-2 * s) / (2 * s)
    val = integrate.quad(lambda th: math.cos(th) ** (2 * s), 0.0, 0.25 * math.pi, epsabs=0.0, epsrel=1e-13)[0]
    return 8.0 * val * radius ** (-2 * s) / (2 * s)


# weights -----------------------------------------------------------------

@dataclass
class KernelWeights:
    """Assembled pair weights and far-field data for one grid."""

    grid: object
    s: float
    order: int
    table: np.ndarray
    K: np.ndarray
    periodic: bool
    far_nodes: np.ndarray | None = None
    far_weights: np.ndarray | None = None
    far_mass: np.ndarray | None = None
    window_offsets: np.ndarray | None = None
    window_weights: np.ndarray | None = None
    window_radius: float | None = None
    remainder_mass: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self):
        return self.grid.size

    def remainder_bound(self):
        """Bound on the periodic far-field truncation, per unit oscillation of ``u``."""
        return self.remainder_mass

    def coefficient_matrix(self, A, t=0.0):
        """``A_ij K_ij`` (or the periodic folded matrix); cached for static A."""
        key = (id(A), t if A.time_dependent else None)
        hit = self._cache.get(("C",) + key)
        if hit is not None and hit[0] is A:
            return hit[1]
        if self.periodic:
            C = self._periodic_matrix(A, t)
        elif A.is_constant:
            C = A.params["value"] * self.K
        else:
            x = self.grid.points()
            C = A(x[:, None, :], x[None, :, :], t) * self.K
            C = 0.5 * (C + C.T)
        if not np.all(np.isfinite(C)):
            i = int(np.argwhere(~np.isfinite(C))[0, 0])
            raise NonFiniteValue(f"non-finite kernel coefficient in row {i}", index=i)
        if len(self._cache) > 16:
            self._cache.clear()
        self._cache[("C",) + key] = (A, C)
        return C

    def far_coefficients(self, A, t=0.0):
        """``w_im A(x_i, y_im)`` for the non-periodic far field."""
        if self.periodic:
            return None
        key = ("F", id(A), t if A.time_dependent else None)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is A:
            return hit[1]
        if A.is_constant:
            F = A.params["value"] * self.far_weights
        else:
            x = self.grid.points()
            F = A(np.broadcast_to(x[:, None, :], self.far_nodes.shape), self.far_nodes, t) * self.far_weights
        self._cache[key] = (A, F)
        return F

    def _periodic_matrix(self, A, t):
        g = self.grid
        N = g.size
        cells = np.asarray(g.cells)
        idx = g.index_vectors()
        offs = self.window_offsets
        kw = self.window_weights
        h_n = g.h ** g.n
        period = float(np.prod(cells)) * h_n
        C = np.zeros((N, N))
        if A.is_constant or A.claimed_class == "L1" and not A.time_dependent:
            # the folded row depends only on the residue of the offset
            if A.is_constant:
                vals = A.params["value"] * kw
            else:
                zero = np.zeros((1, g.n))
                vals = A(zero, offs * g.h, t) * kw
            res = np.mod(offs, cells)
            flat = np.ravel_multi_index(res.T, g.cells)
            row = np.bincount(flat, weights=vals, minlength=N)
            for i in range(N):
                target = np.ravel_multi_index(np.mod(idx[i] + idx, cells).T, g.cells)
                C[i, target] = row
        else:
            x = g.points()
            for i in range(N):
                vals = A(x[i][None, :], x[i][None, :] + offs * g.h, t) * kw
                target = np.ravel_multi_index(np.mod(idx[i] + offs, cells).T, g.cells)
                C[i] = np.bincount(target, weights=vals, minlength=N)
        np.fill_diagonal(C, 0.0)
        if self.remainder_mass > 0:
            if A.is_constant:
                arem = A.params["value"]
            else:
                x = g.points()
                arem = A(x[:, None, :], x[None, :, :], t)
            C = C + arem * self.remainder_mass * h_n * h_n / period
            np.fill_diagonal(C, 0.0)
        return 0.5 * (C + C.T)

    def row_sums(self, A=None, t=0.0):
        """Pointwise coefficient mass per cell (used for the CFL bound)."""
        if A is None:
            from .model import constant_kernel

            A = constant_kernel(1.0)
        h_n = self.grid.h ** self.grid.n
        out = self.coefficient_matrix(A, t).sum(axis=1) / h_n
        if not self.periodic:
            out = out + self.far_coefficients(A, t).sum(axis=1)
        return out


def assemble_weights(grid, params, quadrature_order=4, periodic=False, window_periods=8,
                     radial_order=24, angular_order=24):
    """Assemble pair weights, and either far-field rules or the periodic window."""
    if quadrature_order not in QUADRATURE_ORDERS:
        raise ConfigurationError(f"quadrature_order must be one of {QUADRATURE_ORDERS}")
    if grid.n != params.n:
        raise ConfigurationError("grid and model dimensions differ")
    s, n, h = params.s, grid.n, grid.h
    cells = grid.cells
    offs = np.indices(cells).reshape(n, -1).T
    table = pair_weight(offs, h, s, quadrature_order).reshape(cells)
    idx = grid.index_vectors()
    delta = np.abs(idx[:, None, :] - idx[None, :, :])
    K = table[tuple(delta[..., k] for k in range(n))]
    W = KernelWeights(grid, s, quadrature_order, table, K, periodic)
    if periodic:
        D = int(window_periods) * max(cells)
        axes = [np.arange(-D, D + 1)] * n
        woffs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        wts = pair_weight(woffs, h, s, quadrature_order)
        keep = np.any(woffs != 0, axis=1)
        W.window_offsets = woffs[keep]
        W.window_weights = wts[keep]
        W.window_radius = (D + 0.5) * h
        W.remainder_mass = complement_mass(W.window_radius, n, s)
        return W
    pts = grid.points()
    nodes, weights, mass = [], [], []
    for x in pts:
        nd, wt = exterior_rule(x, grid.lower, grid.upper, 0.0, s, radial_order, angular_order)
        m = exterior_mass(x, grid.lower, grid.upper, 0.0, s)
        # rescale so constant exterior data is integrated with the accurate mass
        wt = wt * (m / wt.sum())
        nodes.append(nd)
        weights.append(wt)
        mass.append(m)
    W.far_nodes = np.stack(nodes)
    W.far_weights = np.stack(weights)
    W.far_mass = np.array(mass)
    return W


# application -------------------------------------------------------------

def _flat(u, W):
    u = np.asarray(u, dtype=float).ravel()
    if u.size != W.size:
        raise ConfigurationError(f"slice has {u.size} entries, weights expect {W.size}")
    return u


def _check(vals, what):
    if not np.all(np.isfinite(vals)):
        i = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NonFiniteValue(f"non-finite {what} at cell {i}", index=i)
    return vals


def exterior_samples(W, ext, t):
    """Exterior values at the far-field nodes, shape ``(N, m)``."""
    if ext.kind == "zero":
        return np.zeros(W.far_weights.shape)
    if ext.kind == "constant":
        return np.full(W.far_weights.shape, ext.value)
    nodes = W.far_nodes
    return ext.evaluate(nodes.reshape(-1, nodes.shape[-1]), t).reshape(nodes.shape[:2])


def apply(u_slice, t, A, phi, W, ext):
    """Pointwise values of the discrete operator on an interior slice."""
    u = _flat(u_slice, W)
    if ext.is_periodic != W.periodic:
        raise ConfigurationError("periodic exterior requires periodic weights and vice versa")
    C = W.coefficient_matrix(A, t)
    diff = u[:, None] - u[None, :]
    out = np.sum(phi(diff) * C, axis=1) / W.grid.h ** W.grid.n
    if not W.periodic:
        F = W.far_coefficients(A, t)
        g = exterior_samples(W, ext, t)
        out = out + np.sum(phi(u[:, None] - g) * F, axis=1)
    return _check(out, "operator value").reshape(W.grid.shape)


def dirichlet_form(u_slice, v_slice, t, A, phi, W, ext):
    """``sum_{i != j} Phi(u_i - u_j)(v_i - v_j) A_ij K_ij`` plus the exterior cross terms.

    ``v`` is extended by zero outside the box, so each interior/exterior pair
    contributes ``h^n v_i [Phi(u_i - g) - Phi(g - u_i)]`` with the far-field rule.
    For periodic weights the form is the one of the torus (no exterior term).
    """
    u = _flat(u_slice, W)
    v = _flat(v_slice, W)
    C = W.coefficient_matrix(A, t)
    val = np.sum(phi(u[:, None] - u[None, :]) * (v[:, None] - v[None, :]) * C)
    if not W.periodic:
        F = W.far_coefficients(A, t)
        g = exterior_samples(W, ext, t)
        cross = np.sum((phi(u[:, None] - g) - phi(g - u[:, None])) * F, axis=1)
        val = val + W.grid.h ** W.grid.n * np.sum(v * cross)
    if not math.isfinite(val):
        raise NonFiniteValue("non-finite Dirichlet form")
    return float(val)


def seminorm_squared(u_slice, W, mask=None):
    """``sum_{i != j} (u_i - u_j)^2 K_ij`` restricted to cells in ``mask``."""
    u = _flat(u_slice, W)
    K = W.K
    if mask is not None:
        m = np.asarray(mask, dtype=bool).ravel()
        u = u[m]
        K = K[np.ix_(m, m)]
    return float(np.sum((u[:, None] - u[None, :]) ** 2 * K))


def discrete_eigenvalue(W, A=None, k=1):
    """Rayleigh quotient of the periodic operator on ``cos(k x)`` (1-D)."""
    from .model import constant_kernel, identity_nonlinearity
    from .field import ExteriorData

    if not W.periodic or W.grid.n != 1:
        raise ConfigurationError("the cosine eigenvalue needs a 1-D periodic setup")
    A = A or constant_kernel(1.0)
    x = W.grid.points()[:, 0]
    u = np.cos(k * x)
    Lu = apply(u, 0.0, A, identity_nonlinearity(), W, ExteriorData.periodic()).ravel()
    return float(np.dot(Lu, u) / np.dot(u, u))
