"""Time integration of the discrete initial/exterior-value problem."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CFLViolation,
    ConfigurationError,
    InadmissibleExponents,
    KernelClassViolation,
    NonFiniteValue,
    PicardNonConvergence,
)
from .field import ExteriorData, Field
from .model import ForcingSpec, constant_kernel, identity_nonlinearity, validate_kernel, validate_nonlinearity
from .operator import apply, assemble_weights, dirichlet_form, exterior_samples


@dataclass
class IVProblem:
    params: object
    A: object
    phi: object
    u0: np.ndarray
    exterior: ExteriorData
    forcing: ForcingSpec
    grid: object
    validate: bool = True
    validation_budget: int = 512

    def __post_init__(self):
        self.u0 = np.array(self.u0, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.u0)):
            raise NonFiniteValue("initial data is not finite")
        if self.grid.n != self.params.n:
            raise ConfigurationError("grid and model dimensions differ")
        if not self.forcing.existence_admissible(self.params):
            raise InadmissibleExponents(
                f"forcing exponents q={self.forcing.q}, r={self.forcing.r} violate n/(2qs) + 1/r <= 1 + n/(4s)",
                "n/(2qs) + 1/r <= 1 + n/(4s)",
            )
        self.exterior.certify(self.params.s, self.grid)
        if self.validate:
            dom = list(zip(self.grid.lower, self.grid.upper))
            rep = validate_kernel(self.A, self.params, self.validation_budget, domain=dom,
                                  times=(self.grid.t_start, self.grid.t_end))
            if not rep.passed:
                raise KernelClassViolation(
                    f"kernel {self.A.name!r} fails class checks: range [{rep.a_min:.4g}, {rep.a_max:.4g}], "
                    f"symmetry defect {rep.symmetry_defect:.3g}"
                )
            nrep = validate_nonlinearity(self.phi, self.params.lam, self.validation_budget)
            if not nrep.passed:
                raise ConfigurationError(f"nonlinearity {self.phi.name!r} fails its structure conditions")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "explicit"
    cfl_fraction: float = 0.9
    picard_tol: float = 1e-12
    picard_max_iters: int = 200
    quadrature_order: int = 4

    def __post_init__(self):
        if self.scheme not in ("explicit", "implicit"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not (0 < self.cfl_fraction <= 1):
            raise ConfigurationError("cfl_fraction must lie in (0, 1]")
        if not (self.picard_tol > 0 and self.picard_max_iters >= 1):
            raise ConfigurationError("Picard tolerance and iteration cap must be positive")


@dataclass
class RunReport:
    scheme: str
    dt: float
    steps: int
    cfl_number: float = 0.0
    dt_max: float = math.inf
    picard_iterations: list = field(default_factory=list)
    sup_l2_squared: float = 0.0
    dissipation: float = 0.0
    stride: int = 1

    def to_text(self):
        its = self.picard_iterations
        lines = [
            f"scheme = {self.scheme}",
            f"dt = {self.dt!r}",
            f"steps = {self.steps}",
            f"snapshot_stride = {self.stride}",
            f"cfl_number = {self.cfl_number!r}",
            f"dt_max = {self.dt_max!r}",
            f"picard_max = {max(its) if its else 0}",
            f"picard_total = {sum(its)}",
            f"energy_sup_l2_squared = {self.sup_l2_squared!r}",
            f"energy_dissipation = {self.dissipation!r}",
        ]
        return "\n".join(lines) + "\n"


def cfl_limit(problem, config, W, t=None):
    """``theta / (lambda^2 max_i rowsum_i)``: keeps the explicit update a convex combination."""
    t = problem.grid.t_start if t is None else t
    rs = W.row_sums(problem.A, t)
    return config.cfl_fraction / (problem.params.lam ** 2 * float(rs.max()))


def _forcing(problem, t):
    return problem.forcing.sample(problem.grid.points(), t)


def step(state, t, problem, config, W, dt=None, mask=None, boundary=None):
    """Advance one step from ``t``; returns ``(new_state, picard_iterations)``.

    ``mask`` selects the cells that evolve; the others take ``boundary``
    (an array of values at ``t + dt``).
    """
    g = problem.grid
    dt = g.dt if dt is None else dt
    u = np.asarray(state, dtype=float).ravel()
    active = None if mask is None else np.asarray(mask, dtype=bool).ravel()
    if config.scheme == "explicit":
        dt_max = cfl_limit(problem, config, W, t)
        if dt > dt_max * (1 + 1e-12):
            raise CFLViolation(f"dt = {dt:.6g} exceeds the explicit stability bound {dt_max:.6g}", dt, dt_max)
        Lu = apply(u, t, problem.A, problem.phi, W, problem.exterior).ravel()
        new = u - dt * Lu + dt * _forcing(problem, t)
        iters = 0
    else:
        new, iters = _implicit_step(u, t, dt, problem, config, W, active, boundary)
    if active is not None:
        new = np.where(active, new, np.asarray(boundary, dtype=float).ravel())
    if not np.all(np.isfinite(new)):
        i = int(np.flatnonzero(~np.isfinite(new))[0])
        raise NonFiniteValue(f"non-finite state at cell {i}", index=i)
    return new.reshape(g.shape), iters


def _implicit_step(u, t, dt, problem, config, W, active, boundary):
    """Solve ``w + dt L(w) = u + dt f(t + dt)`` by lagged-coefficient Picard iteration."""
    g = problem.grid
    h_n = g.h ** g.n
    t1 = t + dt
    phi = problem.phi
    C = W.coefficient_matrix(problem.A, t1) / h_n
    rhs = u + dt * _forcing(problem, t1)
    F = gext = None
    if not W.periodic:
        F = W.far_coefficients(problem.A, t1)
        gext = exterior_samples(W, problem.exterior, t1)
    w = u.copy()
    if active is not None:
        w = np.where(active, w, np.asarray(boundary, dtype=float).ravel())
    omega, prev = 1.0, math.inf
    for it in range(1, config.picard_max_iters + 1):
        S = phi.secant(w[:, None] - w[None, :]) * C
        M = -dt * S
        diag = 1.0 + dt * S.sum(axis=1)
        b = rhs.copy()
        if F is not None:
            sf = phi.secant(w[:, None] - gext) * F
            diag = diag + dt * sf.sum(axis=1)
            b = b + dt * np.sum(sf * gext, axis=1)
        M[np.diag_indices_from(M)] = diag
        if active is None:
            cand = np.linalg.solve(M, b)
        else:
            a, bnd = active, ~active
            wb = w[bnd]
            cand = w.copy()
            cand[a] = np.linalg.solve(M[np.ix_(a, a)], b[a] - M[np.ix_(a, bnd)] @ wb)
        nxt = w + omega * (cand - w)
        res = float(np.max(np.abs(nxt - w)))
        if res > prev:
            omega *= 0.5
        prev = res
        w = nxt
        if res < config.picard_tol:
            return w, it
    raise PicardNonConvergence(
        f"Picard iteration did not converge in {config.picard_max_iters} iterations (residual {prev:.3g})",
        prev, config.picard_max_iters,
    )


def solve(problem, config, t_end=None, snapshot_stride=1, W=None, mask=None, prescribed=None, t_start=None):
    """March from ``t_start`` to ``t_end``; returns a Field with a ``report`` attribute.

    ``prescribed(t)`` gives the full slice used on cells outside ``mask``.
    """
    g = problem.grid
    t_start = g.t_start if t_start is None else t_start
    t_end = g.t_end if t_end is None else t_end
    if snapshot_stride < 1:
        raise ConfigurationError("snapshot_stride must be >= 1")
    if W is None:
        W = assemble_weights(g, problem.params, config.quadrature_order, periodic=problem.exterior.is_periodic)
    if mask is not None and prescribed is None:
        raise ConfigurationError("a mask needs prescribed values")
    steps = int(round((t_end - t_start) / g.dt))
    if steps < 1:
        raise ConfigurationError("time interval shorter than one step")
    dt = g.dt
    report = RunReport(config.scheme, dt, steps, stride=snapshot_stride)
    if config.scheme == "explicit":
        report.dt_max = cfl_limit(problem, config, W, t_start)
        report.cfl_number = dt / report.dt_max * config.cfl_fraction
    u = problem.u0.copy()
    if mask is not None:
        u = np.where(np.asarray(mask).reshape(g.shape), u, prescribed(t_start).reshape(g.shape))
    ident = identity_nonlinearity()
    one = constant_kernel(1.0)
    h_n = g.h ** g.n

    def energy(sl):
        return h_n * float(np.sum(sl * sl))

    slices, times = [u.copy()], [t_start]
    report.sup_l2_squared = energy(u)
    for k in range(steps):
        t = t_start + k * dt
        bnd = None if mask is None else prescribed(t + dt)
        u, its = step(u, t, problem, config, W, dt, mask, bnd)
        if its:
            report.picard_iterations.append(its)
        report.sup_l2_squared = max(report.sup_l2_squared, energy(u))
        report.dissipation += dt * dirichlet_form(u, u, t + dt, one, ident, W, problem.exterior)
        if (k + 1) % snapshot_stride == 0:
            slices.append(u.copy())
            times.append(t_start + (k + 1) * dt)
    out = Field(g, np.stack(slices), np.array(times), problem.exterior, snapshot_stride, problem.params.s)
    out.report = report
    out.weights = W
    return out


@dataclass(frozen=True)
class EnergyReport:
    lhs: float
    sup_term: float
    dissipation_term: float
    forcing_norm_squared: float
    ratio: float


def energy_estimate(u, v, forcing_norm, W=None, params=None):
    """``sup_t |w|_2^2 + sum dt [w]^2`` for ``w = u - v`` against ``forcing_norm^2``."""
    if u.grid != v.grid or not np.array_equal(u.times, v.times):
        raise ConfigurationError("fields live on different grids or time lattices")
    if u.exterior.describe() != v.exterior.describe():
        raise ConfigurationError("fields carry different exterior data")
    if W is None:
        if params is None:
            raise ConfigurationError("need kernel weights or model parameters")
        W = assemble_weights(u.grid, params, 4, periodic=u.exterior.is_periodic)
    w = u.values - v.values
    h_n = u.grid.h ** u.grid.n
    ident = identity_nonlinearity()
    one = constant_kernel(1.0)
    zero = ExteriorData.periodic() if W.periodic else ExteriorData.zero()
    sup = max(h_n * float(np.sum(sl * sl)) for sl in w)
    diss = 0.0
    for k in range(1, w.shape[0]):
        diss += (u.times[k] - u.times[k - 1]) * dirichlet_form(w[k], w[k], u.times[k], one, ident, W, zero)
    lhs = sup + diss
    rhs = float(forcing_norm) ** 2
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs == 0 else math.inf
    return EnergyReport(lhs, sup, diss, rhs, ratio)


def stationary_solution(problem, W):
    """Direct solve of ``L u = f`` for ``Phi = id`` and static data (oracle)."""
    g = problem.grid
    h_n = g.h ** g.n
    C = W.coefficient_matrix(problem.A, g.t_start) / h_n
    M = -C.copy()
    diag = C.sum(axis=1)
    b = _forcing(problem, g.t_start).astype(float)
    if not W.periodic:
        F = W.far_coefficients(problem.A, g.t_start)
        gext = exterior_samples(W, problem.exterior, g.t_start)
        diag = diag + F.sum(axis=1)
        b = b + np.sum(F * gext, axis=1)
    M[np.diag_indices_from(M)] = diag
    return np.linalg.solve(M, b).reshape(g.shape)
