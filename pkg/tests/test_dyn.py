import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackleg import dyn
from trackleg.model import ALL_JOINTS, N_JOINTS, REAR_SUBSET

finite = st.floats(-50.0, 50.0, allow_nan=False)
arr = st.lists(finite, min_size=N_JOINTS, max_size=N_JOINTS).map(np.array)


@settings(max_examples=200, deadline=None)
@given(arr, arr, st.floats(0.05, 5.0), st.floats(0.0, 5.0))
def test_integrand_nonnegative(tau, w, K, R):
    p = dyn.integrand(tau, w, K, R)
    assert np.all(p >= 0.0)
    s = dyn.motor_power(tau, w, dyn.MotorParams(K, R))
    np.testing.assert_allclose(s.power, p, rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(arr, min_size=1, max_size=20), st.sets(st.integers(0, N_JOINTS - 1)))
def test_energy_additivity(rows, subset):
    P = np.abs(np.array(rows))
    a = sorted(subset)
    b = [j for j in ALL_JOINTS if j not in subset]
    total = dyn.integrate_energy(P, 0.002)
    assert dyn.integrate_energy(P, 0.002, a) + dyn.integrate_energy(P, 0.002, b) == pytest.approx(total, rel=1e-12,
                                                                                                   abs=1e-12)


def test_motionless_robot_accrues_heat_only():
    tau = np.array([0.0, 1.5, -2.0])
    s = dyn.motor_power(tau, np.zeros(3), dyn.MotorParams(0.5, 2.0))
    assert np.all(s.mech_power == 0.0)
    np.testing.assert_array_equal(s.heat_power > 0, tau != 0)
    np.testing.assert_allclose(s.current, tau / 0.5)


def test_energy_samples_and_arrays_agree():
    rng = np.random.default_rng(1)
    motor = (np.full(N_JOINTS, 0.5), np.full(N_JOINTS, 1.0))
    samples = [dyn.motor_power(rng.normal(size=N_JOINTS), rng.normal(size=N_JOINTS), motor) for _ in range(10)]
    P = np.array([s.power for s in samples])
    assert dyn.integrate_energy(samples, 0.01) == pytest.approx(dyn.integrate_energy(P, 0.01), rel=1e-12)
    with pytest.raises(ValueError):
        dyn.integrate_energy(P, 0.0)
    with pytest.raises(ValueError):
        dyn.MotorParams(0.0, 1.0)


def test_ledger_meters_only_when_active():
    led = dyn.EnergyLedger(0.5)
    row = np.ones(N_JOINTS)
    assert led.add(row) == (0.0, 0.0)
    assert led.E_total == pytest.approx(10.0)
    led.active = True
    dw, dr = led.add(row)
    assert (dw, dr) == pytest.approx((10.0, 0.5 * len(REAR_SUBSET)))
    assert led.E_Rr <= led.E_RW


contacts = st.lists(st.tuples(st.floats(-0.6, 0.6), st.floats(-0.4, 0.4)), min_size=3, max_size=4, unique=True)


def _area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(x @ np.roll(y, -1) - y @ np.roll(x, -1))


@settings(max_examples=300, deadline=None)
@given(contacts, st.floats(0.0, 1.0), st.floats(1.0, 500.0))
def test_support_forces_balance(pts, frac, W):
    c = np.array([[x, y, 0.0] for x, y in pts])
    hull = dyn.convex_hull(c[:, :2])
    if len(hull) < 3 or _area(hull) < 1e-3:
        return
    # COM between the centroid and a vertex keeps it inside the polygon
    com2 = c[:, :2].mean(axis=0) * (1 - 0.9 * frac) + hull[0] * 0.9 * frac
    f = dyn.support_forces(dyn.SupportState(c, np.append(com2, 0.3), W))
    assert np.all(f >= -1e-9 * W)
    assert abs(f.sum() - W) <= 1e-9 * W
    moment = f @ (c[:, :2] - com2)
    assert np.all(np.abs(moment) <= 1e-9 * W)


def test_support_forces_square_oracle():
    c = np.array([[1, 1, 0], [-1, 1, 0], [-1, -1, 0], [1, -1, 0]], dtype=float)
    np.testing.assert_allclose(dyn.support_forces(dyn.SupportState(c, [0, 0, 1], 100.0)), [25.0] * 4)
    # COM on the +x edge: min-norm solution loads the two +x corners equally
    f = dyn.support_forces(dyn.SupportState(c, [1, 0, 1], 100.0))
    np.testing.assert_allclose(f, [50, 0, 0, 50], atol=1e-9)
    with pytest.raises(dyn.TipOverError):
        dyn.support_forces(dyn.SupportState(c, [1.5, 0, 1], 100.0))
    with pytest.raises(dyn.TipOverError):
        dyn.support_forces(dyn.SupportState(c[:2], [0, 0, 1], 100.0))


def test_polygon_margin_oracle():
    sq = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
    assert dyn.polygon_margin(sq, [1.0, 1.0]) == pytest.approx(1.0)
    assert dyn.polygon_margin(sq, [0.5, 1.0]) == pytest.approx(0.5)
    assert dyn.polygon_margin(sq, [3.0, 3.0]) == pytest.approx(-math.sqrt(2))
    assert dyn.polygon_margin(sq, [2.0, 1.0]) == pytest.approx(0.0)


def _edge_oracle(phi, W_c, W_s, c_rr):
    """Linear equilibrium of the climbing axle solved for (normal, drive force)."""
    s, c = math.sin(phi), math.cos(phi)
    # x: -N s + F c + (F - c_rr W_s) = 0 ; z: N c + F s - W_c = 0
    A = np.array([[-s, c + 1.0], [c, s]])
    return np.linalg.solve(A, [c_rr * W_s, W_c])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.4), st.floats(1.0, 200.0), st.floats(1.0, 200.0), st.floats(0.0, 0.2))
def test_edge_climb_matches_equilibrium(phi, W_c, W_s, c_rr):
    N, F = _edge_oracle(phi, W_c, W_s, c_rr)
    e = dyn.edge_climb(phi, W_c, W_s, 0.8, c_rr)
    assert e.drive_force == pytest.approx(F, rel=1e-9, abs=1e-9)
    if N > 0:
        assert e.normal == pytest.approx(N, rel=1e-9, abs=1e-9)
        assert e.utilization == pytest.approx(F / (0.8 * N), rel=1e-9)
    else:
        assert not e.feasible


def test_edge_climb_flat_and_wall():
    e = dyn.edge_climb(0.0, 100.0, 200.0, 0.5, 0.05)
    assert (e.drive_force, e.normal, e.utilization) == pytest.approx((5.0, 100.0, 0.1))
    assert not dyn.edge_climb(0.5 * math.pi, 100.0, 100.0, 0.5, 0.05).feasible


def test_profile_and_slip():
    assert dyn.profile(0.1, 0.1, 0.3) == (0.1, 0.0)
    assert dyn.profile(-1.0, 0.1, 0.3) == (0.0, 0.0)
    rise, phi = dyn.profile(-0.1, 0.1, 0.3)
    assert rise == pytest.approx(0.1 - 0.3 + math.sqrt(0.09 - 0.01))
    assert phi == pytest.approx(math.asin(0.1 / 0.3))
    assert dyn.profile(-0.01, 0.4, 0.3) == (0.0, 0.5 * math.pi)
    assert dyn.edge_reach(0.3, 0.1) == pytest.approx(math.sqrt(0.09 - 0.04))
    assert dyn.slip(0.5, 0.9, 2.0) == pytest.approx(0.225)
    assert dyn.slip(1.5, 0.9, 2.0) == 1.0


def test_rolling_feasibility_is_monotone(robot):
    hs = np.linspace(0.02, 0.4, 20)
    u = [dyn.max_climb_utilization(robot, s, n=80) for s in hs]
    assert all(b >= a - 1e-12 for a, b in zip(u, u[1:]))
    feasible = [x <= 1.0 for x in u]
    # once infeasible, never feasible again
    assert feasible == sorted(feasible, reverse=True)


def test_traction_limit_between_3h_and_4h(robot, h):
    lim = dyn.traction_limit_height(robot)
    assert 3 * h < lim < 4 * h
    assert dyn.max_climb_utilization(robot, 3 * h) <= 1.0
    assert dyn.max_climb_utilization(robot, 4 * h) > 1.0


def test_rolling_state_flat_and_balanced(robot):
    m = dyn.RollingModel(robot, 0.16)
    far = m.front_contact_rear_x() - 0.5
    st = m.state(far)
    assert st.climbing is None and not st.front_contact and not st.rear_contact
    assert st.pose[2] == pytest.approx(0.0, abs=1e-12)
    assert st.forces.sum() == pytest.approx(robot.weight, rel=1e-9)
    assert st.feasible and st.path_angle == 0.0
    # flat travel: rolling resistance only, shared by the four tracks
    np.testing.assert_allclose(st.track_torque, robot.cfg.track.c_rr * st.forces * robot.tip_radius)
    done = m.state(m.rear_clear_x() + 0.3)
    assert done.pose[1] == pytest.approx(st.pose[1] + 0.16, abs=1e-9)


def test_rolling_power_nonnegative_along_climb(robot):
    m = dyn.RollingModel(robot, 0.16)
    for x in np.linspace(m.front_contact_rear_x() - 0.1, 0.1, 200):
        st = m.state(x)
        assert np.all(st.forces >= -1e-9)
        assert np.all(m.power(st, 0.1) >= 0.0)
