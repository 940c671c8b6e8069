import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from nonlocal_lab.errors import ConfigurationError, InadmissibleExponents, NonFiniteValue
from nonlocal_lab.model import (
    ForcingSpec,
    ModelParams,
    callback_kernel,
    conjugate,
    constant_kernel,
    derive_exponents,
    identity_nonlinearity,
    kernel_preset,
    nonlinearity_preset,
    perturbed_kernel,
    rough_symmetric_table,
    sine_nonlinearity,
    tabulated_kernel,
    validate_kernel,
    validate_nonlinearity,
)


@pytest.mark.parametrize("n,s,lam", [(3, 0.5, 1.0), (1, 0.0, 1.0), (1, 1.0, 1.0), (1, 0.5, 0.5)])
def test_params_reject(n, s, lam):
    with pytest.raises(ConfigurationError):
        ModelParams(n, s, lam)


def test_constant_kernel_passes_both_classes(params_half):
    rep = validate_kernel(constant_kernel(1.0), params_half, 64)
    assert rep.passed and rep.in_L0 and rep.in_L1
    assert rep.symmetry_defect == 0.0


def test_asymmetric_kernel_fails():
    params = ModelParams(1, 0.5, 2.0)
    A = callback_kernel(lambda x, y, t: 1.0 + 0.1 * np.tanh(x[..., 0] - y[..., 0]))
    rep = validate_kernel(A, params, 128)
    assert not rep.passed and rep.symmetry_defect > 0


def test_out_of_range_kernel_fails():
    rep = validate_kernel(constant_kernel(3.0), ModelParams(1, 0.5, 2.0), 32)
    assert not rep.passed and rep.a_max == 3.0


def test_nonfinite_kernel_raises():
    A = callback_kernel(lambda x, y, t: np.full(x.shape[:-1], np.nan))
    with pytest.raises(NonFiniteValue):
        validate_kernel(A, ModelParams(1, 0.5, 2.0), 8)


def test_validation_is_deterministic():
    params = ModelParams(1, 0.5, 2.0)
    A = kernel_preset("rough", seed=3)
    assert validate_kernel(A, params, 200, domain=[(-4, 4)]) == validate_kernel(A, params, 200, domain=[(-4, 4)])


@pytest.mark.parametrize("name", ["product", "jump", "holder", "rough"])
def test_presets_in_class_with_lambda_two(name):
    params = ModelParams(1, 0.5, 2.0)
    rep = validate_kernel(kernel_preset(name), params, 256, domain=[(-4.0, 4.0)])
    assert rep.passed, rep


def test_presets_in_two_dimensions():
    params = ModelParams(2, 0.5, 2.0)
    rep = validate_kernel(kernel_preset("product"), params, 256)
    assert rep.passed


def test_tabulated_kernel_is_symmetrised():
    table = np.array([[1.0, 2.0], [0.0, 1.0]])
    A = tabulated_kernel(table, 0.0, 1.0)
    assert A(np.array([0.5]), np.array([1.5])) == pytest.approx(1.0)
    assert A(np.array([1.5]), np.array([0.5])) == pytest.approx(1.0)
    assert A(np.array([5.0]), np.array([0.5])) == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        tabulated_kernel(np.ones((2, 3)), 0.0, 1.0)


def test_rough_table_symmetric():
    t = rough_symmetric_table(9, 4)
    assert np.array_equal(t, t.T) and np.abs(t).max() <= 1


def test_perturbed_kernel_range():
    base = constant_kernel(1.0)
    A = perturbed_kernel(base, 0.2, rough_symmetric_table(8, 0), -4.0, 1.0)
    rep = validate_kernel(A, ModelParams(1, 0.5, 1.25), 256, domain=[(-4, 4)])
    assert rep.passed
    bad = perturbed_kernel(base, 0.2, rough_symmetric_table(8, 0), -4.0, 1.0)
    assert not validate_kernel(bad, ModelParams(1, 0.5, 1.0), 256, domain=[(-4, 4)]).passed


def test_nonlinearities():
    assert validate_nonlinearity(identity_nonlinearity(), 1.0, 100).passed
    phi = sine_nonlinearity(0.5, 2.0)
    rep = validate_nonlinearity(phi, 2.0, 400)
    assert rep.passed
    assert 0.5 <= rep.min_monotone_quotient and rep.max_lipschitz_quotient <= 1.5
    assert not validate_nonlinearity(sine_nonlinearity(0.5), 1.0, 100).passed
    shifted = nonlinearity_preset("identity")
    assert shifted.is_identity
    with pytest.raises(ConfigurationError):
        nonlinearity_preset("cubic")


def test_secant_at_zero():
    phi = sine_nonlinearity(0.5, 2.0)
    sec = phi.secant(np.array([0.0, 1e-9, 1.0]))
    assert sec[0] == pytest.approx(1.5, rel=1e-8)
    assert sec[1] == pytest.approx(1.5, rel=1e-8)
    assert sec[2] == pytest.approx(1.0 + 0.5 * math.sin(1.0))


def test_conjugate():
    assert conjugate(1) == math.inf
    assert conjugate(math.inf) == 1.0
    assert conjugate(4) == pytest.approx(4 / 3)


def test_derived_exponents_values():
    der = derive_exponents(4.0, 4.0, ModelParams(1, 0.5, 1.0))
    assert der.kappa == pytest.approx(0.5)
    assert der.gamma == pytest.approx(1.0)
    assert der.q_hat == pytest.approx(4.0)
    assert der.holder_cap == pytest.approx(0.5)
    assert abs(der.identity_residual) < 1e-12


def test_derived_exponents_infinite():
    der = derive_exponents(math.inf, math.inf, ModelParams(2, 0.75, 1.0))
    assert der.kappa == pytest.approx(0.75)
    assert der.q_hat == pytest.approx(3.5)
    assert der.holder_cap == 1.0


def test_inadmissible_exponents():
    with pytest.raises(InadmissibleExponents):
        derive_exponents(1.0, 2.0, ModelParams(1, 0.5, 1.0))
    with pytest.raises(InadmissibleExponents):
        derive_exponents(0.5, 4.0, ModelParams(1, 0.5, 1.0))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([1, 2]), st.floats(0.05, 0.95), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_hat_exponents_satisfy_identity(n, s, inv_q, inv_r):
    params = ModelParams(n, s, 1.0)
    q = math.inf if inv_q == 0 else 1 / inv_q
    r = math.inf if inv_r == 0 else 1 / inv_r
    idx = n / (2 * s) * inv_q + inv_r
    assume(abs(idx - 1) > 1e-9)
    if idx >= 1:
        with pytest.raises(InadmissibleExponents):
            derive_exponents(q, r, params)
        return
    der = derive_exponents(q, r, params)
    assert der.kappa > 0
    assert abs(der.identity_residual) < 1e-9


def test_forcing_spec():
    params = ModelParams(1, 0.5, 1.0)
    pts = np.array([[0.0], [1.0]])
    assert np.array_equal(ForcingSpec().sample(pts, 0.0), [0.0, 0.0])
    assert np.array_equal(ForcingSpec(2.0).sample(pts, 0.0), [2.0, 2.0])
    f = ForcingSpec(lambda p, t: p[:, 0] + t, 4, 4)
    assert np.allclose(f.scaled(3.0).sample(pts, 1.0), [3.0, 6.0])
    assert f.boundedness_admissible(params)
    assert not ForcingSpec(None, 1.0, 1.0).boundedness_admissible(params)
    assert ForcingSpec(None, 1.0, 2.0).existence_admissible(params)
    with pytest.raises(ConfigurationError):
        ForcingSpec(None, 0.5, 2.0)
