import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_lab.degiorgi import (
    TLIParams,
    as_rational,
    case2_inequalities_hold,
    exponent_ladder,
    ladder_floor,
    ladder_from_field,
    ladder_levels,
    ladder_radii,
    smallest_collapsing_N,
    tau_gap_holds,
    tli_iterate,
)
from nonlocal_lab.errors import ConfigurationError, LevelBelowThreshold, RegionError
from nonlocal_lab.field import Field, Grid
from nonlocal_lab.model import ForcingSpec, ModelParams

PARAMS = ModelParams(1, 0.5, 1.0)
ZERO = ForcingSpec(None, 4, 4)


@pytest.fixture(scope="module")
def spike():
    g = Grid((-1.5,), (24,), 0.125, 0.05, -1.0, 0.0)
    return Field.from_function(g, lambda p, t: 3.0 * np.exp(-8 * p[:, 0] ** 2) * (1 + 0.5 * t), s=0.5)


# two-sequence recursion


def test_threshold_example():
    p = TLIParams(2, 2, 1, 1)
    assert p.sigma == 1
    assert p.threshold == pytest.approx(1 / 64)


@pytest.mark.parametrize("y0,z0", [(1 / 64, 0.0), (0.0, 1 / 8), (1 / 128, math.sqrt(1 / 128))])
def test_converges_on_the_threshold(y0, z0):
    tr = tli_iterate(TLIParams(2, 2, 1, 1), y0, z0, 20)
    assert tr.Y[20] < 1e-6 and tr.Z[20] < 1e-6
    assert tr.verdict == "converged"


def test_zero_start_stays_zero():
    tr = tli_iterate(TLIParams(3, 5, 0.5, 2), 0.0, 0.0, 30)
    assert set(tr.Y) == {0.0} and set(tr.Z) == {0.0}


def test_divergence_detected():
    tr = tli_iterate(TLIParams(2, 2, 1, 1), 1.0, 1.0, 50)
    assert tr.verdict == "diverged"
    assert tr.overflow_index is not None and tr.overflow_index <= 50
    assert tr.to_csv().splitlines()[0] == "h,Y,Z,rho,k"


def test_tli_rejects():
    with pytest.raises(ConfigurationError):
        TLIParams(1.0, 2, 1, 1)
    with pytest.raises(ConfigurationError):
        TLIParams(2, 2, 0, 1)
    with pytest.raises(ConfigurationError):
        tli_iterate(TLIParams(2, 2, 1, 1), -1.0, 0.0, 5)
    with pytest.raises(ConfigurationError):
        tli_iterate(TLIParams(2, 2, 1, 1), 0.0, 0.0, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.1, 8), st.floats(1.1, 8), st.floats(0.2, 2), st.floats(0.2, 2), st.floats(0.0, 1.0))
def test_below_threshold_is_monotone_to_zero(M, b, kappa, delta, split):
    p = TLIParams(M, b, kappa, delta)
    thr = p.threshold
    y0 = split * thr
    z0 = ((1 - split) * thr) ** (1 / (1 + kappa))
    tr = tli_iterate(p, y0, z0, 40, tol=1e-6)
    assert tr.verdict != "diverged"
    assert tr.Y[-1] <= max(y0, 1e-300) and tr.Z[-1] <= max(z0, 1e-300)


# field ladder


def test_ladder_sequences():
    assert ladder_radii(0) == 0.75
    assert ladder_radii(2) == 0.5625
    r = ladder_radii(np.arange(30))
    k = ladder_levels(1.0, np.arange(30))
    assert np.all(np.diff(r) < 0) and r[-1] > 0.5
    assert np.all(np.diff(k) > 0) and k[-1] < 2.0


def test_ladder_vanishes_below_level(spike):
    N = 3.0 * 1.5
    rep = ladder_from_field(spike, ZERO, N, 6, PARAMS)
    assert np.all(rep.y == 0) and np.all(rep.z == 0)
    assert rep.decreasing() and rep.chebyshev_ok
    assert rep.c_y == 0.0 and rep.c_z == 0.0


def test_ladder_nontrivial_and_homogeneous(spike):
    N = 1.1 * ladder_floor(spike, ZERO, PARAMS)
    rep = ladder_from_field(spike, ZERO, N, 5, PARAMS)
    assert rep.y[0] > 0 and rep.chebyshev_ok
    assert rep.base == 32.0 and rep.delta == pytest.approx(0.5)
    scaled = ladder_from_field(spike.scaled(7.0), ZERO, 7.0 * N, 5, PARAMS)
    assert np.allclose(scaled.y, rep.y, rtol=1e-12, atol=0)
    assert np.allclose(scaled.z, rep.z, rtol=1e-12, atol=0)
    assert rep.to_csv().count("\n") == 7


def test_ladder_rejects(spike):
    floor = ladder_floor(spike, ZERO, PARAMS)
    with pytest.raises(LevelBelowThreshold) as info:
        ladder_from_field(spike, ZERO, 0.5 * floor, 4, PARAMS)
    assert info.value.threshold == pytest.approx(floor)
    small = Field(Grid((-0.5,), (8,), 0.125, 0.05, -1.0, 0.0), np.zeros((21, 8)), s=0.5)
    with pytest.raises(RegionError):
        ladder_from_field(small, ZERO, 1.0, 4, PARAMS)


def test_smallest_collapsing_level(spike):
    N, rep = smallest_collapsing_N(spike, ZERO, PARAMS, h_max=6)
    assert rep.states[-1].y == 0.0
    assert N > rep.floor
    # one grid step lower does not collapse (or falls below the floor)
    lower = N / 1.05
    if lower > rep.floor:
        assert ladder_from_field(spike, ZERO, lower, 6, PARAMS).states[-1].y > 0


# exponent ladders


def test_tau_gap():
    for s in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 0.9, 0.05):
        assert tau_gap_holds(s, 40)


def test_base_entry_at_one_half():
    lad = exponent_ladder(Fraction(1, 2), 3)
    assert lad.theta[0] == 0
    assert lad.ratio(0) == Fraction(1, 2)


def test_identity_exact_at_two_fifths():
    lad = exponent_ladder("2/5", 11)
    assert lad.exact and lad.identity_ok
    assert all(isinstance(t, Fraction) for t in lad.theta)
    ratios = [lad.ratio(i) for i in range(11)]
    assert all(a < b for a, b in zip(ratios, ratios[1:]))
    assert all(Fraction(2, 5) <= r < Fraction(4, 5) for r in ratios)


def test_rational_parsing():
    assert as_rational(0.3) == Fraction(3, 10)
    assert as_rational("3/5") == Fraction(3, 5)
    with pytest.raises(ConfigurationError):
        as_rational(1 / 3)
    lad = exponent_ladder(1 / 3, 5, exact=False)
    assert not lad.exact and lad.identity_ok


def test_case1_index():
    lad = exponent_ladder(Fraction(1, 2), 10, "case1", alpha=0.25)
    i = lad.i_alpha
    # (1 + theta_i q_i - 1)/q_i = (i + 1 - 1)/(i + 2) with s = 1/2
    assert Fraction(i, i + 2) > Fraction(1, 4) >= Fraction(i - 1, i + 1)
    assert lad.h0 == Fraction(1, 64 * i)
    with pytest.raises(ConfigurationError):
        exponent_ladder(Fraction(3, 4), 5, "case1", alpha=0.25)


def test_case2_indices():
    lad = exponent_ladder(Fraction(3, 4), 20, "case2", alpha=0.5, gamma=Fraction(3, 4))
    i, j = lad.i_alpha, lad.j_alpha
    assert lad.ratio(i) >= 1 and (i == 0 or lad.ratio(i - 1) < 1)
    assert j >= 1 and Fraction(1, 2) < Fraction(3, 4) - Fraction(1, i + j + 2)
    assert lad.h0 == Fraction(1, 64 * (i + j))
    assert lad.theta_tilde[0] == Fraction(3, 4) - Fraction(1, 2)
    assert case2_inequalities_hold(lad, Fraction(3, 4))
    with pytest.raises(ConfigurationError):
        exponent_ladder(Fraction(1, 2), 5, "case2", alpha=0.2, gamma=0.5)
    with pytest.raises(ConfigurationError):
        exponent_ladder(Fraction(3, 4), 5, "case3")
