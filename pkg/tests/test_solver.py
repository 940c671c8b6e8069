import math

import numpy as np
import pytest

from nonlocal_lab.errors import (
    CFLViolation,
    ConfigurationError,
    InadmissibleExponents,
    KernelClassViolation,
    NonFiniteValue,
    PicardNonConvergence,
)
from nonlocal_lab.field import ExteriorData
from nonlocal_lab.model import (
    ForcingSpec,
    ModelParams,
    constant_kernel,
    identity_nonlinearity,
    kernel_preset,
    sine_nonlinearity,
)
from nonlocal_lab.operator import assemble_weights
from nonlocal_lab.solver import (
    IVProblem,
    StepperConfig,
    cfl_limit,
    energy_estimate,
    solve,
    stationary_solution,
    step,
)


def bump(g, width=0.5):
    return np.exp(-np.sum(g.points() ** 2, axis=1) / width ** 2)


def problem(g, params=None, u0=None, A=None, phi=None, ext=None, forcing=None, validate=True):
    params = params or ModelParams(g.n, 0.5, 1.0)
    return IVProblem(params, A or constant_kernel(1.0), phi or identity_nonlinearity(),
                     bump(g) if u0 is None else u0, ext or ExteriorData.zero(),
                     forcing or ForcingSpec(None, 4, 4), g, validate)


def test_config_rejects():
    with pytest.raises(ConfigurationError):
        StepperConfig("rk4")
    with pytest.raises(ConfigurationError):
        StepperConfig(cfl_fraction=1.5)
    with pytest.raises(ConfigurationError):
        StepperConfig(picard_tol=0.0)


def test_problem_rejects(grid_1d):
    with pytest.raises(NonFiniteValue):
        problem(grid_1d, u0=np.full(32, np.nan))
    with pytest.raises(InadmissibleExponents):
        problem(grid_1d, forcing=ForcingSpec(None, 1.0, 1.0))
    with pytest.raises(KernelClassViolation):
        problem(grid_1d, A=constant_kernel(3.0))
    with pytest.raises(ConfigurationError):
        problem(grid_1d, phi=sine_nonlinearity(0.5))
    with pytest.raises(ConfigurationError):
        problem(grid_1d, params=ModelParams(2, 0.5, 1.0))


def test_cfl_violation(grid_1d):
    p = problem(grid_1d)
    cfg = StepperConfig()
    W = assemble_weights(grid_1d, p.params)
    dt_max = cfl_limit(p, cfg, W)
    with pytest.raises(CFLViolation) as info:
        step(p.u0, 0.0, p, cfg, W, dt=2 * dt_max)
    assert info.value.dt_max == pytest.approx(dt_max)
    step(p.u0, 0.0, p, cfg, W, dt=dt_max)


def test_constant_state_is_stationary(grid_1d):
    p = problem(grid_1d, u0=np.full(32, 2.0), ext=ExteriorData.constant(2.0))
    for scheme in ("explicit", "implicit"):
        out = solve(p, StepperConfig(scheme))
        assert np.allclose(out.values, 2.0, atol=1e-12)
        assert out.report.dissipation == pytest.approx(0.0, abs=1e-12)


def test_maximum_principle_and_energy_decay(grid_1d):
    p = problem(grid_1d, A=kernel_preset("rough", lower=-2.0, cells=32), params=ModelParams(1, 0.5, 1.5))
    out = solve(p, StepperConfig())
    assert out.values.min() >= -1e-14
    assert out.values.max() <= p.u0.max() + 1e-14
    energy = np.sum(out.values.reshape(out.nslices, -1) ** 2, axis=1)
    assert np.all(np.diff(energy) <= 1e-14)
    assert out.report.sup_l2_squared == pytest.approx(energy[0] * grid_1d.h)


def test_explicit_and_implicit_agree(grid_1d):
    p = problem(grid_1d)
    a = solve(p, StepperConfig("explicit"))
    b = solve(p, StepperConfig("implicit"))
    diff = np.max(np.abs(a.values[-1] - b.values[-1]))
    assert 0 < diff < 1e-2
    p2 = problem(grid_1d.with_time(dt=grid_1d.dt / 2))
    c = solve(p2, StepperConfig("explicit"))
    d = solve(p2, StepperConfig("implicit"))
    # first order in time
    assert np.max(np.abs(c.values[-1] - d.values[-1])) == pytest.approx(diff / 2, rel=0.1)


def test_nonlinear_implicit_reports_picard(grid_1d):
    params = ModelParams(1, 0.5, 2.0)
    p = problem(grid_1d, params=params, phi=sine_nonlinearity(0.5, 2.0))
    out = solve(p, StepperConfig("implicit"), snapshot_stride=10)
    assert out.nslices == 6
    its = out.report.picard_iterations
    assert len(its) == grid_1d.nt and 1 <= max(its) <= 200
    assert "picard_total" in out.report.to_text()
    with pytest.raises(PicardNonConvergence):
        solve(p, StepperConfig("implicit", picard_tol=1e-300, picard_max_iters=2))


def test_masked_solve_keeps_prescribed_values(grid_1d):
    p = problem(grid_1d)
    x = grid_1d.points()[:, 0]
    mask = np.abs(x) < 1
    out = solve(p, StepperConfig(), mask=mask, prescribed=lambda t: np.full(32, 0.25))
    assert np.all(out.values[:, ~mask] == 0.25)
    with pytest.raises(ConfigurationError):
        solve(p, StepperConfig(), mask=mask)


def test_stationary_oracle_is_a_fixed_point(grid_1d):
    p = problem(grid_1d, forcing=ForcingSpec(1.0, 4, 4))
    W = assemble_weights(grid_1d, p.params)
    u_inf = stationary_solution(p, W)
    p2 = problem(grid_1d, u0=u_inf, forcing=ForcingSpec(1.0, 4, 4))
    out = solve(p2, StepperConfig("implicit"), W=W)
    assert np.max(np.abs(out.values[-1] - u_inf)) < 1e-10
    assert np.all(u_inf > 0)


def test_energy_estimate_bookkeeping(grid_1d):
    p = problem(grid_1d, forcing=ForcingSpec(1.0, 4, 4))
    u = solve(p, StepperConfig())
    v = solve(problem(grid_1d), StepperConfig())
    rep = energy_estimate(u, u, 1.0, W=u.weights)
    assert rep.lhs == 0.0 and rep.ratio == 0.0
    rep = energy_estimate(u, v, 0.0, W=u.weights)
    assert rep.ratio == math.inf
    rep = energy_estimate(u, v, 2.0, params=p.params)
    assert rep.lhs == pytest.approx(rep.sup_term + rep.dissipation_term)
    assert rep.ratio == pytest.approx(rep.lhs / 4.0)
    other = solve(problem(grid_1d.with_time(t_end=0.04)), StepperConfig())
    with pytest.raises(ConfigurationError):
        energy_estimate(u, other, 1.0, W=u.weights)
    with pytest.raises(ConfigurationError):
        energy_estimate(u, v, 1.0)


def test_two_dimensional_run(grid_2d):
    p = problem(grid_2d)
    out = solve(p, StepperConfig("implicit"))
    assert out.values.shape == (11, 8, 8)
    assert out.values[-1].max() < p.u0.max()
