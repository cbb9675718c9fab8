"""Quasi-static statics of the robot and its DC-motor energy model.

Contacts carry vertical load only while walking; the distribution is the
minimum-norm non-negative solution of force and moment balance about the
centre of mass.  During rolling the track reaction at a step edge is
resolved with a planar edge-climb model (see :func:`edge_climb`).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (ALL_JOINTS, GRAVITY, N_JOINTS, N_LEG_JOINTS, N_LEGS, REAR_SUBSET, Robot,
                    joint_index, rot_pitch, track_index)


class TipOverError(ValueError):
    pass


@dataclass(frozen=True)
class MotorParams:
    K_t: float
    R_a: float

    def __post_init__(self):
        if not self.K_t > 0:
            raise ValueError("K_t must be positive")
        if not self.R_a >= 0:
            raise ValueError("R_a must be non-negative")


def motor_params(robot: Robot) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint K_t and R_a arrays (leg joints, then track drives)."""
    cfg = robot.cfg
    K = np.empty(N_JOINTS)
    R = np.empty(N_JOINTS)
    K[:N_LEG_JOINTS], R[:N_LEG_JOINTS] = cfg.leg_motor.K_t_Nm_per_A, cfg.leg_motor.R_a_ohm
    K[N_LEG_JOINTS:], R[N_LEG_JOINTS:] = cfg.track_motor.K_t_Nm_per_A, cfg.track_motor.R_a_ohm
    return K, R


@dataclass(frozen=True)
class EnergySample:
    """Per-joint electrical bookkeeping for one instant."""
    tau: np.ndarray
    theta_dot: np.ndarray
    current: np.ndarray
    mech_power: np.ndarray
    heat_power: np.ndarray

    @property
    def power(self) -> np.ndarray:
        return self.mech_power + self.heat_power


def motor_power(tau, theta_dot, motor: MotorParams | tuple) -> EnergySample:
    """Clamped mechanical power and copper loss; negative tau*theta_dot is not recovered."""
    K, R = (motor.K_t, motor.R_a) if isinstance(motor, MotorParams) else motor
    tau = np.asarray(tau, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float)
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(theta_dot))):
        raise ValueError("torque and speed must be finite")
    current = tau / K
    p = tau * theta_dot
    mech = np.where(p > 0.0, p, 0.0)
    heat = current * current * R
    return EnergySample(tau, theta_dot, current, mech, heat)


def integrand(tau, theta_dot, K, R) -> np.ndarray:
    """Summand f(tau*theta_dot) + tau^2 R / K^2 for arrays of samples (..., joints)."""
    p = tau * theta_dot
    return np.where(p > 0.0, p, 0.0) + tau * tau * (R / (K * K))


def integrate_energy(samples, dt: float, subset=ALL_JOINTS) -> float:
    """Rectangular-rule energy (J) of a sample series over a joint subset.

    ``samples`` is a sequence of EnergySample or an array of per-sample,
    per-joint powers with shape (n, joints).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    idx = list(subset)
    if isinstance(samples, np.ndarray):
        if samples.size == 0:
            return 0.0
        return float(samples[:, idx].sum() * dt)
    total = 0.0
    for s in samples:
        total += float(s.power[idx].sum())
    return total * dt


@dataclass
class EnergyLedger:
    """Running accumulators for the whole robot and the rear body."""
    dt: float
    E_RW: float = 0.0
    E_Rr: float = 0.0
    E_total: float = 0.0
    active: bool = False

    def add(self, power_row: np.ndarray) -> tuple[float, float]:
        """Accumulate one tick of per-joint power; returns the (whole, rear) increments."""
        dw = float(power_row.sum()) * self.dt
        self.E_total += dw
        if not self.active:
            return 0.0, 0.0
        dr = float(power_row[list(REAR_SUBSET)].sum()) * self.dt
        self.E_RW += dw
        self.E_Rr += dr
        return dw, dr


@dataclass(frozen=True)
class SupportState:
    contacts: np.ndarray  # (k, 3) world contact points
    com: np.ndarray       # (3,)
    weight: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.contacts, dtype=float))
        object.__setattr__(self, "contacts", c)
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float))
        if self.weight < 0:
            raise ValueError("weight must be non-negative")


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull of 2-D points (monotone chain)."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float) + 0.0)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_margin(points_xy, p) -> float:
    """Signed distance from ``p`` to the boundary of the hull of ``points_xy`` (inside > 0)."""
    hull = convex_hull(points_xy)
    if len(hull) < 3:
        raise TipOverError("support polygon is degenerate")
    p = np.asarray(p, dtype=float)[:2]
    inside_d = math.inf
    outside_d = math.inf
    inside = True
    n = len(hull)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        e = b - a
        L = math.hypot(e[0], e[1])
        if L == 0.0:
            continue  # coincident points (e.g. 0.0 and -0.0)
        signed = (e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])) / L
        inside_d = min(inside_d, signed)
        if signed < 0:
            inside = False
        u = min(max(((p - a) @ e) / (L * L), 0.0), 1.0)
        outside_d = min(outside_d, float(np.linalg.norm(p - (a + u * e))))
    return inside_d if inside else -outside_d


def _balance_matrix(contacts: np.ndarray, com: np.ndarray) -> np.ndarray:
    return np.vstack([np.ones(len(contacts)), contacts[:, 0] - com[0], contacts[:, 1] - com[1]])


def support_forces(support: SupportState, tol: float = 1e-9) -> np.ndarray:
    """Vertical contact forces (N) balancing weight and moments about the COM.

    Minimum-norm among non-negative distributions: the unconstrained
    pseudo-inverse solution when it is non-negative, otherwise the best
    solution over reduced contact sets.
    """
    c = support.contacts
    W = support.weight
    k = len(c)
    if W == 0.0:
        return np.zeros(k)
    if k < 3:
        raise TipOverError(f"{k} contacts cannot support the robot")
    margin = polygon_margin(c[:, :2], support.com)
    scale = max(1.0, float(np.max(np.abs(c[:, :2] - support.com[:2]))))
    if margin < -tol * scale:
        raise TipOverError(f"centre of mass outside support polygon (margin {margin:.4g} m)")
    A = _balance_matrix(c, support.com)
    b = np.array([W, 0.0, 0.0])
    f = np.linalg.pinv(A) @ b
    if np.all(f >= -tol * W):
        return f
    best, best_norm = None, math.inf
    for r in range(k - 1, 0, -1):
        for sub in itertools.combinations(range(k), r):
            As = A[:, sub]
            fs = np.linalg.lstsq(As, b, rcond=None)[0]
            if np.max(np.abs(As @ fs - b)) > 1e-9 * W or np.any(fs < -tol * W):
                continue
            nrm = float(fs @ fs)
            if nrm < best_norm:
                best_norm = nrm
                best = np.zeros(k)
                best[list(sub)] = fs
    if best is None:
        raise TipOverError("no non-negative force distribution exists")
    return best


def leg_torques(robot: Robot, leg: int, q, pitch: float, contact_force=None, jac=None) -> np.ndarray:
    """Holding torques of one leg: -J^T F for the tip load plus link gravity."""
    J, G = jac if jac is not None else robot.leg_jacobians(leg, q)
    Rws = rot_pitch(pitch) @ robot.mount_R[leg]
    up = Rws.T @ np.array([0.0, 0.0, GRAVITY])
    tau = G.T @ up
    if contact_force is not None:
        tau = tau - J.T @ (Rws.T @ np.asarray(contact_force, dtype=float))
    return tau


def joint_torques(robot: Robot, q_all, pose, contact_forces) -> np.ndarray:
    """Torques for all 16 leg joints.

    ``contact_forces`` maps leg index -> world force on the tip (a float is
    read as a vertical force); legs without an entry are in swing.
    """
    tau = np.zeros(N_LEG_JOINTS)
    pitch = pose[2]
    for i in range(N_LEGS):
        f = contact_forces.get(i) if contact_forces else None
        if f is not None and np.ndim(f) == 0:
            f = np.array([0.0, 0.0, float(f)])
        tau[4 * i:4 * i + 4] = leg_torques(robot, i, q_all[i], pitch, f)
    return tau


# --- rolling over a step edge -------------------------------------------------

def edge_reach(radius: float, step_height: float) -> float:
    """Horizontal distance short of the edge at which a climb profile first touches it."""
    s = min(step_height, radius)
    return math.sqrt(max(radius * radius - (radius - s) ** 2, 0.0))


def profile(x: float, step_height: float, radius: float) -> tuple[float, float]:
    """Height gain of an axle contact at x (edge at 0) and its path angle from horizontal.

    Ahead of the edge the track's leading profile, a circle of ``radius``,
    rides over the edge corner; returns (rise, phi) with phi = 0 on flat
    surfaces.
    """
    if x >= 0.0:
        return step_height, 0.0
    d = edge_reach(radius, step_height)
    if x <= -d or step_height <= 0.0:
        return 0.0, 0.0
    if step_height >= radius:
        # the edge meets the track above its climbing profile: a wall
        return 0.0, 0.5 * math.pi
    return step_height - radius + math.sqrt(radius * radius - x * x), math.asin(-x / radius)


@dataclass(frozen=True)
class EdgeClimb:
    drive_force: float   # per-axle track force, N
    normal: float        # edge normal reaction, N
    utilization: float   # drive_force / (mu * normal); > 1 is infeasible

    @property
    def feasible(self) -> bool:
        return self.utilization <= 1.0


def edge_climb(phi: float, load_climbing: float, load_support: float, mu: float, c_rr: float) -> EdgeClimb:
    """Planar quasi-static climb of one axle over an edge.

    Both axles apply the same drive force F.  Equilibrium of the climbing
    axle under its load, the edge normal N, the edge tangential force F and
    the push of the support axle (F - c_rr * W_support) gives
    F = (W_c sin(phi) + c_rr W_s cos(phi)) / (1 + cos(phi)).
    """
    s, c = math.sin(phi), math.cos(phi)
    F = (load_climbing * s + c_rr * load_support * c) / (1.0 + c)
    if c <= 1e-12:
        return EdgeClimb(F, 0.0, math.inf)
    N = (load_climbing - F * s) / c
    if N <= 0.0:
        return EdgeClimb(F, N, math.inf)
    return EdgeClimb(F, N, F / (mu * N))


def slip(utilization: float, slip_max: float, exponent: float) -> float:
    """Track slip ratio as a function of traction utilization; 1 means stalled."""
    if utilization > 1.0:
        return 1.0
    return slip_max * max(utilization, 0.0) ** exponent


@dataclass(frozen=True)
class RollingDrive:
    """Rigid rolling state of the home posture with the rear tips at ``rear_x``."""
    rear_x: float
    front_x: float
    pose: tuple               # body (x, z, pitch)
    forces: np.ndarray        # vertical tip loads, N
    track_torque: np.ndarray  # per track, N m (sign follows the travel direction)
    leg_torque: np.ndarray    # 16 holding torques, N m
    feasible: bool
    climbing: str | None      # "front", "rear" or None
    utilization: float
    slip: float
    path_angle: float
    front_contact: bool       # front track touching the step (edge or top)
    rear_contact: bool        # rear track touching the step

    @property
    def progress_rate_factor(self) -> float:
        """Horizontal advance per unit track speed."""
        return (1.0 - self.slip) * math.cos(self.path_angle)


class RollingModel:
    """Rolling over one step with all legs frozen at home.

    The body is rigid: tip pattern fixed in the body frame, front and rear
    axles riding their climb profiles.  Everything is a pure function of the
    rear tip position, which is the integration variable of the rolling loop.
    """

    def __init__(self, robot: Robot, step_height: float):
        self.robot = robot
        self.s = float(step_height)
        t = robot.cfg.track
        self.t = t
        self.r = t.sprocket_radius_m
        self.Rf = t.front_climb_radius_m
        self.Rr = t.rear_climb_radius_m
        hb = robot.home_tips_body
        self.hb = hb
        self.D = float(hb[0, 0] - hb[2, 0])
        self.dz = float(hb[0, 2] - hb[2, 2])
        self.df = edge_reach(self.Rf, self.s)
        self.dr = edge_reach(self.Rr, self.s)
        q = robot.home
        self.com_body = robot.com_world(q, (0.0, 0.0, 0.0))
        GM, JM = [], []
        for i in range(N_LEGS):
            J, G = robot.leg_jacobians(i, q[i])
            MT = robot.mount_R[i].T
            GM.append(G.T @ MT)
            JM.append(J.T @ MT)
        self.GM = np.vstack(GM)  # (16, 3)
        self.JM = np.vstack(JM)
        self.W = robot.weight
        self.K, self.Ra = motor_params(robot)

    # geometry
    def front_contact_rear_x(self) -> float:
        """Rear tip position at which the front track first touches the edge (body level)."""
        return -self.df - self.D

    def rear_clear_x(self) -> float:
        return -self.dr

    def solve_pitch(self, rear_x: float) -> tuple[float, float, float, float, float, float]:
        """Pitch with both axles on their paths: (beta, front_x, rise_f, phi_f, rise_r, phi_r)."""
        D, dz, s, Rf = self.D, self.dz, self.s, self.Rf
        zr, phi_r = profile(rear_x, s, self.Rr)

        def gap(beta):
            cb, sb = math.cos(beta), math.sin(beta)
            xf = rear_x + D * cb - dz * sb
            zf, phi_f = profile(xf, s, Rf)
            return D * sb + dz * cb - dz - (zf - zr), xf, zf, phi_f, cb, sb

        beta = 0.0
        lo, hi = -1.2, 1.2
        for _ in range(60):
            g, xf, zf, phi_f, cb, sb = gap(beta)
            if abs(g) < 1e-14:
                break
            if g > 0:
                hi = beta
            else:
                lo = beta
            # d gap / d beta with the front profile slope tan(phi_f)
            dg = D * cb - dz * sb + math.tan(phi_f) * (D * sb + dz * cb)
            nb = beta - g / dg if dg > 0 else 0.5 * (lo + hi)
            if not lo < nb < hi:
                nb = 0.5 * (lo + hi)
            if abs(nb - beta) < 1e-15:
                beta = nb
                break
            beta = nb
        g, xf, zf, phi_f, cb, sb = gap(beta)
        return beta, xf, zf, phi_f, zr, phi_r

    def state(self, rear_x: float, direction: int = 1) -> RollingDrive:
        t, W, r = self.t, self.W, self.r
        beta, xf, zf, phi_f, zr, phi_r = self.solve_pitch(rear_x)
        cb, sb = math.cos(beta), math.sin(beta)
        hb = self.hb
        # body origin from the rear tips: rear tip world = origin + R hb[2]
        ox = rear_x - (cb * hb[2, 0] - sb * hb[2, 2])
        oz = self.r + zr - (sb * hb[2, 0] + cb * hb[2, 2])
        R = np.array([[cb, 0.0, -sb], [0.0, 1.0, 0.0], [sb, 0.0, cb]])
        pts = hb @ R.T + np.array([ox, 0.0, oz])
        com = R @ self.com_body + np.array([ox, 0.0, oz])
        f = support_forces(SupportState(pts, com, W))
        Wf, Wr = float(f[0] + f[1]), float(f[2] + f[3])
        climbing, phi = None, 0.0
        if direction > 0 and phi_r > 0.0:
            climbing, phi, Wc, Ws = "rear", phi_r, Wr, Wf
        elif direction > 0 and phi_f > 0.0:
            climbing, phi, Wc, Ws = "front", phi_f, Wf, Wr
        if climbing is None:
            # flat travel (or backing off the edge): rolling resistance per track
            util = t.c_rr / t.mu
            torque = direction * t.c_rr * f * r
            feasible = True
        else:
            ec = edge_climb(phi, Wc, Ws, t.mu, t.c_rr)
            util = ec.utilization
            feasible = ec.feasible
            F = ec.drive_force if feasible else t.mu * Wc  # spinning at the traction limit
            torque = np.full(N_LEGS, 0.5 * F * r)
        sl = slip(util, t.slip_max, t.slip_exponent)
        v = np.array([sb, 0.0, cb])
        tau_leg = GRAVITY * (self.GM @ v) - np.repeat(f, 4) * (self.JM @ v)
        return RollingDrive(rear_x, xf, (float(ox), float(oz), float(beta)), f, torque, tau_leg, feasible,
                            climbing, util, sl, phi if climbing else (phi_r if phi_r > 0 else phi_f),
                            xf > -self.df, rear_x > -self.dr)

    def power(self, st: RollingDrive, speed: float) -> np.ndarray:
        """Per-joint electrical power (20,) while rolling at track speed ``speed``.

        Legs hold still, so they only pay copper loss; the tracks turn at
        speed / r even while slipping.
        """
        tau = np.concatenate([st.leg_torque, st.track_torque])
        qd = np.zeros(N_JOINTS)
        qd[N_LEG_JOINTS:] = speed / self.r
        return integrand(tau, qd, self.K, self.Ra)


def rolling_drive(robot: Robot, step_height: float, rear_x: float) -> RollingDrive:
    """Per-track drive torque and traction feasibility with the rear tips at ``rear_x``.

    Flat ground: each track overcomes c_rr times its load.  Over an edge the
    climbing axle needs the edge-climb force; feasible iff it stays within
    mu times the edge normal reaction.
    """
    return RollingModel(robot, step_height).state(rear_x)


def max_climb_utilization(robot: Robot, step_height: float, n: int = 400, mu: float | None = None) -> float:
    """Largest edge-climb utilization over both axle climbs at a given height."""
    if mu is not None:
        import copy
        cfg = copy.deepcopy(robot.cfg)
        cfg.track.mu = mu
        robot = Robot(cfg)
    m = RollingModel(robot, step_height)
    worst = 0.0
    for lo, hi in ((m.front_contact_rear_x(), -m.D), (-m.dr, 0.0)):
        if hi <= lo:
            continue
        # first contact is the steepest point; sample densely near it
        for k in range(n + 1):
            x = lo + (hi - lo) * (k / n) ** 2
            st = m.state(x + 1e-12)
            if st.climbing is not None:
                worst = max(worst, st.utilization)
    return worst


def traction_limit_height(robot: Robot, hi: float = 1.0, tol: float = 1e-6) -> float:
    """Largest step height the tracks can roll over (bisection on climb feasibility)."""
    lo = 0.0
    if max_climb_utilization(robot, hi) <= 1.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if max_climb_utilization(robot, mid) <= 1.0:
            lo = mid
        else:
            hi = mid
    return lo


def calibrate_mu(robot: Robot, limit_height: float) -> float:
    """Friction coefficient at which rolling over ``limit_height`` is exactly tight."""
    return max_climb_utilization(robot, limit_height, mu=1.0)
