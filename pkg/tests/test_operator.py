import math

import numpy as np
import pytest
from scipy import integrate

from nonlocal_lab.errors import ConfigurationError
from nonlocal_lab.field import ExteriorData, Grid
from nonlocal_lab.model import ModelParams, constant_kernel, identity_nonlinearity, kernel_preset, sine_nonlinearity
from nonlocal_lab.operator import (
    apply,
    assemble_weights,
    complement_mass,
    dirichlet_form,
    discrete_eigenvalue,
    exterior_mass,
    pair_weight,
    seminorm_squared,
    unit_pair_integral,
)

ONE = constant_kernel(1.0)
ID = identity_nonlinearity()


def test_pair_weights_against_exact_integrals():
    s = 0.5
    # offset 2 (Gauss): int_0^1 int_2^3 |x - y|^-2 = log(4/3)
    assert pair_weight(np.array([[2]]), 1.0, s, 4)[0] == pytest.approx(math.log(4 / 3), rel=1e-4)
    exact = integrate.dblquad(lambda y, x: abs(x - y) ** (-1 - 2 * s), 0, 1, 3, 4)[0]
    assert exact == pytest.approx(math.log(9 / 8))
    # offset 3 (midpoint): relative error of order d^-2
    far = pair_weight(np.array([[3]]), 1.0, s, 4)[0]
    assert far == pytest.approx(1 / 9)
    assert abs(far - exact) / exact < 0.06


def test_pair_weight_scaling():
    d = np.array([[3], [5]])
    w1 = pair_weight(d, 1.0, 0.3, 4)
    w2 = pair_weight(d, 0.5, 0.3, 4)
    # K scales as h^(2n) h^(-n-2s)
    assert np.allclose(w2, w1 * 0.5 ** (1 - 0.6))
    assert pair_weight(np.array([[0]]), 1.0, 0.3, 4)[0] == 0.0


def test_unit_pair_integral_two_dimensional_symmetry():
    a = unit_pair_integral(np.array([[2, 1]]), 0.4, 4)
    b = unit_pair_integral(np.array([[1, 2]]), 0.4, 4)
    assert a[0] == pytest.approx(b[0])


def test_exterior_and_complement_mass():
    # 1-D box [-1, 1], x0 = 0: 2 * int_1^inf r^(-1-2s) = 2/(2s)
    assert exterior_mass(np.array([0.0]), (-1.0,), (1.0,), 0.0, 0.5) == pytest.approx(2.0)
    assert complement_mass(1.0, 1, 0.5) == pytest.approx(2.0)
    c2 = complement_mass(2.0, 2, 0.5)
    assert 0 < c2 < 2 * math.pi * 2.0 ** -1.0


def test_constant_is_in_the_kernel():
    g = Grid.uniform(1, 2.0, 16)
    params = ModelParams(1, 0.5, 1.0)
    W = assemble_weights(g, params)
    Lu = apply(np.full(16, 3.0), 0.0, ONE, ID, W, ExteriorData.constant(3.0))
    assert np.allclose(Lu, 0.0, atol=1e-12)
    Wp = assemble_weights(g, params, periodic=True, window_periods=2)
    assert np.allclose(apply(np.full(16, 3.0), 0.0, ONE, ID, Wp, ExteriorData.periodic()), 0.0, atol=1e-12)


def test_dirichlet_form_matches_operator_pairing():
    g = Grid.uniform(1, 2.0, 16)
    W = assemble_weights(g, ModelParams(1, 0.5, 1.0))
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=16), rng.normal(size=16)
    ext = ExteriorData.zero()
    Lu = apply(u, 0.0, ONE, ID, W, ext).ravel()
    lhs = dirichlet_form(u, v, 0.0, ONE, ID, W, ext)
    assert lhs == pytest.approx(2.0 * g.h * np.dot(Lu, v), rel=1e-10)


def test_dirichlet_form_nonnegative_and_symmetric():
    g = Grid.uniform(2, 1.0, 6)
    params = ModelParams(2, 0.4, 2.0)
    W = assemble_weights(g, params, 2)
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=36), rng.normal(size=36)
    ext = ExteriorData.zero()
    A = kernel_preset("product")
    assert dirichlet_form(u, u, 0.0, A, ID, W, ext) > 0
    assert dirichlet_form(u, v, 0.0, A, ID, W, ext) == pytest.approx(dirichlet_form(v, u, 0.0, A, ID, W, ext))
    # monotone nonlinearity: the form of u against itself stays positive
    assert dirichlet_form(u, u, 0.0, A, sine_nonlinearity(0.5), W, ext) > 0


def test_seminorm_matches_form_interior_part():
    g = Grid.uniform(1, 2.0, 16)
    W = assemble_weights(g, ModelParams(1, 0.5, 1.0))
    u = np.sin(g.points()[:, 0])
    semi = seminorm_squared(u, W)
    assert semi == pytest.approx(float(np.sum((u[:, None] - u[None, :]) ** 2 * W.K)))
    mask = np.abs(g.points()[:, 0]) < 1
    assert seminorm_squared(u, W, mask) < semi


def test_periodic_mismatch_rejected():
    g = Grid.uniform(1, 2.0, 16)
    W = assemble_weights(g, ModelParams(1, 0.5, 1.0))
    with pytest.raises(ConfigurationError):
        apply(np.zeros(16), 0.0, ONE, ID, W, ExteriorData.periodic())
    with pytest.raises(ConfigurationError):
        apply(np.zeros(15), 0.0, ONE, ID, W, ExteriorData.zero())
    with pytest.raises(ConfigurationError):
        assemble_weights(g, ModelParams(1, 0.5, 1.0), quadrature_order=3)


def test_cosine_eigenvalue_converges():
    params = ModelParams(1, 0.5, 1.0)
    errs = []
    for cells in (32, 64, 128):
        g = Grid((-math.pi,), (cells,), 2 * math.pi / cells, 0.01, 0.0, 1.0)
        W = assemble_weights(g, params, 1, periodic=True)
        errs.append(abs(discrete_eigenvalue(W) - math.pi) / math.pi)
    assert errs[-1] < 0.02
    assert errs[0] > errs[-1]


def test_eigenvalue_needs_periodic_1d():
    g = Grid.uniform(1, 2.0, 16)
    with pytest.raises(ConfigurationError):
        discrete_eigenvalue(assemble_weights(g, ModelParams(1, 0.5, 1.0)))


def test_row_sums_positive():
    g = Grid.uniform(1, 2.0, 16)
    W = assemble_weights(g, ModelParams(1, 0.5, 2.0))
    rs = W.row_sums(kernel_preset("rough"))
    assert np.all(rs > 0) and np.all(np.isfinite(rs))
