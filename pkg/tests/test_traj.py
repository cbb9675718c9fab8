import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackleg import traj

val = st.floats(-3.0, 3.0, allow_nan=False)
dur = st.floats(0.1, 10.0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(val, val, val, val, val, val, dur)
def test_boundary_reproduction(q0, qf, v0, vf, a0, af, T):
    seg = traj.fit_quintic(traj.BoundaryConstraints(q0, qf, v0, vf, a0, af), T)
    np.testing.assert_allclose(seg(0.0), (q0, v0, a0), atol=1e-9)
    np.testing.assert_allclose(seg(T), (qf, vf, af), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(val, val, val, val, dur)
def test_derivatives_match_finite_differences(q0, qf, v0, vf, T):
    seg = traj.fit_quintic(traj.BoundaryConstraints(q0, qf, v0, vf), T)
    eps = 1e-6 * T
    for u in (0.2, 0.5, 0.8):
        t = u * T
        q_m, qd_m, _ = seg(t - eps)
        q_p, qd_p, _ = seg(t + eps)
        _, qd, qdd = seg(t)
        scale_v = max(abs(qd), abs(qf - q0) / T, abs(v0), abs(vf), 1.0)
        scale_a = max(abs(qdd), scale_v / T, 1.0)
        assert abs((q_p - q_m) / (2 * eps) - qd) <= 1e-6 * scale_v
        assert abs((qd_p - qd_m) / (2 * eps) - qdd) <= 1e-6 * scale_a


@settings(max_examples=200, deadline=None)
@given(val, val, dur)
def test_rest_to_rest_is_monotone(q0, qf, T):
    q, _, _ = traj.rest_to_rest(q0, qf, T)(np.linspace(0, T, 401))
    d = np.diff(q) * math.copysign(1.0, qf - q0)
    assert np.all(d >= -1e-12)
    assert min(q0, qf) - 1e-12 <= q.min() and q.max() <= max(q0, qf) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.1, 5.0))
def test_duration_for_peak_accel_hits_peak(delta, a_peak):
    T = traj.duration_for_peak_accel(delta, a_peak)
    seg = traj.rest_to_rest(0.0, delta, T)
    # the 10-15-6 profile peaks at u = 1/2 - sqrt(3)/6
    u = 0.5 - math.sqrt(3) / 6
    assert abs(abs(seg(u * T)[2]) - a_peak) <= 1e-9 * a_peak
    grid = np.abs(seg(np.linspace(0, T, 2001))[2])
    assert grid.max() <= a_peak * (1 + 1e-12)


def test_rest_to_rest_coefficients():
    # frozen oracle: q0 + d (10u^3 - 15u^4 + 6u^5) with T = 2
    c = traj.rest_to_rest(1.0, 3.0, 2.0).coeffs
    np.testing.assert_allclose(c, (1.0, 0.0, 0.0, 20 / 8, -30 / 16, 12 / 32), atol=1e-12)


def test_synchronized_duration_and_time_scaling():
    T = traj.synchronized_duration([0.1, -0.4, 0.0], 1.0)
    assert T == pytest.approx(math.sqrt(traj.PEAK_ACCEL_FACTOR * 0.4))
    assert traj.synchronized_duration([0.0, 0.0], 1.0) == traj.MIN_PHASE_DURATION
    s, sd = traj.time_scaling(2.0, np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(sd, [0.0, 30 / 16 / 2.0 * 1.0, 0.0])


def test_errors():
    with pytest.raises(traj.TrajectoryError):
        traj.rest_to_rest(0.0, 1.0, 0.0)
    with pytest.raises(traj.TrajectoryError):
        traj.BoundaryConstraints(math.nan, 0.0)
    with pytest.raises(traj.TrajectoryError):
        traj.rest_to_rest(0.0, 1.0, 1.0)(1.5)
    with pytest.raises(traj.TrajectoryError):
        traj.duration_for_peak_accel(1.0, 0.0)
