import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_lab.errors import ConfigurationError
from nonlocal_lab.geometry import (
    Cylinder,
    SpaceTimePoint,
    as_point,
    dyadic_ladder,
    geometric_radii,
    parabolic_distance,
    parabolic_distance_array,
)


def test_point_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        SpaceTimePoint((0.0, 0.0, 0.0), 0.0)
    with pytest.raises(ConfigurationError):
        SpaceTimePoint((math.nan,), 0.0)
    with pytest.raises(ConfigurationError):
        SpaceTimePoint((0.0,), math.inf)


def test_as_point_forms_agree():
    p = SpaceTimePoint((1.0,), 2.0)
    assert as_point(p) is p
    assert as_point(((1.0,), 2.0)) == p
    assert as_point(1.0, 2.0) == p


def test_cylinder_membership_is_half_open_in_time():
    cyl = Cylinder(SpaceTimePoint((0.0,), 1.0), 0.5, 0.25)
    assert cyl.contains([[0.0]], 1.0)[0]
    assert not cyl.contains([[0.0]], 0.75)[0]
    assert cyl.contains([[0.0]], 0.7500001)[0]
    assert not cyl.contains([[0.5]], 1.0)[0]
    assert cyl.t_interval == (0.75, 1.0)


def test_standard_cylinder_and_measure():
    cyl = Cylinder.standard(((0.0, 0.0), 0.0), 0.5, 0.75)
    assert cyl.tau == pytest.approx(0.5 ** 1.5)
    assert cyl.measure() == pytest.approx(math.pi * 0.25 * 0.5 ** 1.5)
    one = Cylinder.standard(((0.0,), 0.0), 2.0, 0.5)
    assert one.measure() == pytest.approx(4.0 * 2.0)


@pytest.mark.parametrize("rho,tau", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (math.inf, 1.0)])
def test_cylinder_rejects_degenerate(rho, tau):
    with pytest.raises(ConfigurationError):
        Cylinder(SpaceTimePoint((0.0,), 0.0), rho, tau)


def test_parabolic_boundary():
    cyl = Cylinder(SpaceTimePoint((0.0,), 1.0), 1.0, 0.5)
    pb = cyl.parabolic_boundary()
    assert pb.contains([[0.2]], 0.5)[0]
    assert pb.contains([[1.0]], 0.8)[0]
    assert not pb.contains([[0.2]], 0.8)[0]


def test_parabolic_distance_values():
    z1 = SpaceTimePoint((0.0,), 0.0)
    z2 = SpaceTimePoint((0.25,), 0.0625)
    # alpha = 1, s = 1/2: |dx| + |dt|
    assert parabolic_distance(z1, z2, 1.0, 0.5) == pytest.approx(0.3125)
    assert parabolic_distance(z1, z2, 0.5, 0.25) == pytest.approx(0.5 + 0.0625)
    with pytest.raises(ConfigurationError):
        parabolic_distance(z1, z2, 0.0, 0.5)
    with pytest.raises(ConfigurationError):
        parabolic_distance(z1, SpaceTimePoint((0.0, 0.0), 0.0), 1.0, 0.5)


@settings(max_examples=60, deadline=None)
@given(
    st.tuples(*[st.floats(-5, 5) for _ in range(6)]),
    st.floats(0.05, 1.0),
    st.floats(0.05, 0.95),
)
def test_distance_symmetric_and_matches_array(c, alpha, s):
    z1 = SpaceTimePoint((c[0], c[1]), c[2])
    z2 = SpaceTimePoint((c[3], c[4]), c[5])
    d = parabolic_distance(z1, z2, alpha, s)
    assert d == pytest.approx(parabolic_distance(z2, z1, alpha, s))
    arr = parabolic_distance_array(np.array([z1.x]), [z1.t], np.array([z2.x]), [z2.t], alpha, s)
    assert arr[0] == pytest.approx(d)


def test_ladders():
    lad = dyadic_ladder(count=4, half_limit=True)
    assert np.allclose(lad, [0.75, 0.625, 0.5625, 0.53125])
    lad2 = dyadic_ladder(1.0, 5)
    assert np.all(np.diff(lad2) < 0) and lad2[-1] > 0.5
    assert np.allclose(geometric_radii(1.0, 3), [1.0, 0.5, 0.25])
    with pytest.raises(ConfigurationError):
        dyadic_ladder(1.0, 0)
    with pytest.raises(ConfigurationError):
        dyadic_ladder(1.0, 3, rho_final=2.0)
