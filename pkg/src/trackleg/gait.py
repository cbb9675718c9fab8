"""Planning and execution of the two climbing gaits.

The world is sagittal-planar for the terrain: ground at z = 0 for x < 0, the
upper surface at z = step height for x >= 0.  Tips are the track pulley
centres and sit one pulley radius above the surface they stand on.

A plan is an ordered list of phases.  Execution samples every phase at the
model time step.  Swing tips follow straight-line segments with 10-15-6
quintic timing, and body shifts interpolate the body pose the same way.
Stance legs are re-solved by IK at each sample, seeded with the previous one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dyn, kin, traj
from .model import (ALL_JOINTS, FRONT_LEGS, GRAVITY, N_JOINTS, N_LEG_JOINTS, N_LEGS, REAR_LEGS, Robot,
                    rot_pitch, track_index)

SHIFT_FORWARD = "body-shift-forward"
SHIFT_BACKWARD = "body-shift-backward"
SWING = "leg-swing"
SETTLE = "settle"
DRIVE = "track-drive"
PHASE_KINDS = (SHIFT_FORWARD, SHIFT_BACKWARD, SWING, SETTLE, DRIVE)

WHOLE_BODY = "whole-body"
REAR_BODY = "rear-body"

SWING_ORDER = (0, 1, 2, 3)  # FL, FR, RL, RR


class PlanningError(RuntimeError):
    def __init__(self, message: str, phase: str | None = None):
        super().__init__(f"{phase}: {message}" if phase else message)
        self.phase = phase


class ExecutionError(RuntimeError):
    def __init__(self, message: str, phase: int, tick: int):
        super().__init__(f"phase {phase}, tick {tick}: {message}")
        self.phase = phase
        self.tick = tick


@dataclass(frozen=True)
class StepScenario:
    step_height: float
    track_height_h: float = 0.08
    approach_distance: float = 0.1  # rolling distance before the front track meets the edge
    rolling_speed: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.step_height) and self.step_height > 0):
            raise ValueError("step_height must be > 0")
        if not self.track_height_h > 0:
            raise ValueError("track_height_h must be > 0")
        if not self.approach_distance >= 0:
            raise ValueError("approach_distance must be >= 0")
        if not self.rolling_speed > 0:
            raise ValueError("rolling_speed must be > 0")

    @classmethod
    def multiple(cls, k: float, robot_or_h, **kw) -> "StepScenario":
        h = robot_or_h.cfg.track.track_height_h_m if isinstance(robot_or_h, Robot) else float(robot_or_h)
        return cls(step_height=k * h, track_height_h=h, **kw)


def surface_height(x: float, step_height: float) -> float:
    return step_height if x >= 0.0 else 0.0


@dataclass(frozen=True)
class RobotState:
    pose: tuple            # (x, z, pitch) of the body frame
    q: np.ndarray          # (4, 4) joint angles per leg
    contact: tuple = (True, True, True, True)

    def __post_init__(self):
        object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))
        object.__setattr__(self, "q", np.array(self.q, dtype=float).reshape(N_LEGS, 4))
        object.__setattr__(self, "contact", tuple(bool(c) for c in self.contact))

    def tips(self, robot: Robot) -> np.ndarray:
        return np.array([robot.tip_world(i, self.q[i], self.pose) for i in range(N_LEGS)])

    def close_to(self, other: "RobotState", tol: float = 1e-9) -> bool:
        return (np.max(np.abs(np.subtract(self.pose, other.pose))) <= tol
                and np.max(np.abs(self.q - other.q)) <= tol and self.contact == other.contact)


@dataclass(frozen=True)
class GaitPhase:
    kind: str
    duration: float
    leg: int | None = None
    body_start: tuple = ()
    body_end: tuple = ()
    waypoints: tuple = ()          # swing tip path corners (world)
    segment_durations: tuple = ()  # swing: lift, transfer, descend
    drive_distance: float = 0.0
    stance_tips: np.ndarray | None = field(default=None, compare=False)  # (4, 3) world, at phase start
    q_end: np.ndarray | None = field(default=None, compare=False)
    posture: np.ndarray | None = field(default=None, compare=False)  # settle target posture

    @property
    def foothold(self) -> np.ndarray | None:
        return np.asarray(self.waypoints[-1]) if self.kind == SWING else None

    @property
    def airborne(self) -> tuple:
        return (self.leg,) if self.kind == SWING else ()


@dataclass(frozen=True)
class GaitPlan:
    kind: str
    phases: tuple
    start: RobotState
    end: RobotState
    step_height: float
    rolling_speed: float

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.phases)

    def swing_legs(self) -> list:
        return [p.leg for p in self.phases if p.kind == SWING]


# --- geometry helpers ---------------------------------------------------------

def home_configuration(robot: Robot) -> np.ndarray:
    """Rolling posture: every leg at its configured home angles, shape (4, 4)."""
    return robot.home.copy()


def _quantize(T: float, dt: float) -> float:
    return math.ceil(T / dt - 1e-9) * dt


def centered_pose(robot: Robot, tips: np.ndarray) -> tuple:
    """Level body pose whose home tip pattern is centred on the given world tips."""
    hb = robot.home_tips_body
    x = float(tips[:, 0].mean() - hb[:, 0].mean())
    z = float(tips[:, 2].mean() - hb[:, 2].mean())
    return (x, z, 0.0)


def solve_posture(robot: Robot, pose, tips: np.ndarray, seed: np.ndarray, legs=range(N_LEGS)) -> np.ndarray:
    q = np.array(seed, dtype=float)
    for i in legs:
        q[i] = robot.leg_ik(i, tips[i], pose, seed[i])
    return q


def body_path(robot: Robot, start, end, tips: np.ndarray, q0: np.ndarray, legs, u, posture=None) -> np.ndarray:
    """Stance-leg joint angles along a body move at increasing progress values ``u``.

    Each sample seeds IK with the previous one.  With a target ``posture`` the
    seed is blended towards it by the progress, so a move whose end pose is
    compatible with that posture finishes exactly in it.
    """
    a, b = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    out = np.empty((len(u), N_LEGS, 4))
    q = np.array(q0, dtype=float)
    for k, uk in enumerate(u):
        pose = tuple(a + uk * (b - a))
        seed = q.copy()
        if posture is not None:
            seed[legs] = (1.0 - uk) * q[legs] + uk * posture[legs]
        q = solve_posture(robot, pose, tips, seed, legs)
        out[k] = q
    return out


def stability_margin(robot: Robot, state: RobotState) -> float:
    """Signed distance from the COM ground projection to the support polygon edge."""
    idx = [i for i in range(N_LEGS) if state.contact[i]]
    if len(idx) < 3:
        raise dyn.TipOverError(f"{len(idx)} supporting tips; stability margin undefined")
    tips = state.tips(robot)[idx]
    return dyn.polygon_margin(tips[:, :2], robot.com_world(state.q, state.pose))


def tip_clearance(tip: np.ndarray, step_height: float) -> float:
    """Gap between a tip pulley (radius r around ``tip``) centre and the terrain solid.

    Returns the distance from the centre to the nearest point of the ground or
    step; the pulley is collision-free when this is at least the pulley radius.
    """
    x, _, z = tip
    d_ground = z
    # step block: x >= 0, z <= step_height
    dx = max(0.0 - x, 0.0)
    dz = max(z - step_height, 0.0)
    if dx == 0.0 and dz == 0.0:
        d_step = -min(x, step_height - z)
    else:
        d_step = math.hypot(dx, dz)
    return min(d_ground, d_step)


# --- planning -------------------------------------------------------------

class _Planner:
    """Accumulates phases while tracking the current robot state."""

    def __init__(self, robot: Robot, step_height: float, rolling_speed: float, state: RobotState):
        self.robot = robot
        self.s = step_height
        self.v = rolling_speed
        self.cfg = robot.cfg.gait
        self.dt = robot.cfg.dt_s
        self.r = robot.tip_radius
        self.state = state
        self.tips = state.tips(robot)
        self.phases: list[GaitPhase] = []

    def _duration(self, deltas) -> float:
        T = traj.synchronized_duration(np.ravel(deltas), self.cfg.a_peak_rad_s2, self.cfg.min_phase_s)
        return _quantize(T, self.dt)

    def _check_path(self, name: str, q_of, n: int = 12):
        """IK-feasibility probe along a phase at ``n`` interior points."""
        for k in range(1, n + 1):
            q_of(k / n)

    def body_move(self, kind: str, target: tuple, name: str, posture=None) -> None:
        robot, st = self.robot, self.state
        legs = [i for i in range(N_LEGS) if st.contact[i]]
        start = st.pose
        try:
            q_end = body_path(robot, start, target, self.tips, st.q, legs, np.arange(1, 13) / 12, posture)[-1]
        except kin.KinematicsError as e:
            raise PlanningError(f"stance leg IK infeasible ({e})", name) from None
        T = self._duration(q_end - st.q)
        self.phases.append(GaitPhase(kind, T, None, start, tuple(target), stance_tips=self.tips.copy(),
                                     q_end=q_end, posture=posture))
        self.state = RobotState(target, q_end, st.contact)
        self._require_margin(name, self.state)

    def _require_margin(self, name: str, state: RobotState, floor: float = 0.0) -> float:
        try:
            m = stability_margin(self.robot, state)
        except dyn.TipOverError as e:
            raise PlanningError(str(e), name) from None
        if m < floor:
            raise PlanningError(f"stability margin {m:.4f} m below {floor:.4f} m", name)
        return m

    def margin_if_lifted(self, leg: int, pose, q) -> float:
        contact = tuple(i != leg for i in range(N_LEGS))
        return stability_margin(self.robot, RobotState(pose, q, contact))

    def shift_for_swing(self, leg: int, name: str, extra: float = 0.0) -> None:
        """Forward shift so the COM keeps the configured margin once ``leg`` lifts."""
        robot, st = self.robot, self.state
        target_margin = self.cfg.min_margin_m + extra

        def margin_at(x):
            pose = (x, st.pose[1], st.pose[2])
            q = solve_posture(robot, pose, self.tips, st.q)
            return self.margin_if_lifted(leg, pose, q)

        x0 = st.pose[0]
        if margin_at(x0) >= target_margin:
            return
        # scan forward, then bisect the bracketing interval
        step, lo, hi = 0.005, x0, None
        try:
            for k in range(1, 81):
                if margin_at(x0 + k * step) >= target_margin:
                    hi = x0 + k * step
                    break
                lo = x0 + k * step
        except kin.KinematicsError as e:
            raise PlanningError(f"stance legs cannot follow the shift ({e})", name) from None
        if hi is None:
            raise PlanningError("no forward shift restores the stability margin", name)
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if margin_at(mid) >= target_margin:
                hi = mid
            else:
                lo = mid
        x1 = hi
        self.body_move(SHIFT_FORWARD, (x1, st.pose[1], st.pose[2]), name)

    def swing(self, leg: int, foothold: np.ndarray, name: str) -> None:
        robot, st = self.robot, self.state
        p0 = self.tips[leg].copy()
        pf = np.asarray(foothold, dtype=float)
        z_apex = max(p0[2], pf[2]) - self.r + self.cfg.clearance_m + self.r
        z_apex = max(z_apex, self.s + self.r + self.cfg.clearance_m)
        corners = (p0, np.array([p0[0], p0[1], z_apex]), np.array([pf[0], pf[1], z_apex]), pf)
        contact = tuple(i != leg for i in range(N_LEGS))
        seg_T = []
        q_leg = st.q[leg].copy()
        try:
            for a, b in zip(corners[:-1], corners[1:]):
                q_start = q_leg.copy()
                for k in range(1, 13):
                    p = a + (k / 12) * (b - a)
                    if tip_clearance(p, self.s) < self.r - 1e-9:
                        raise PlanningError("swing path collides with the step", name)
                    q_leg = robot.leg_ik(leg, p, st.pose, q_leg)
                    qq = st.q.copy()
                    qq[leg] = q_leg
                    m = self.margin_if_lifted(leg, st.pose, qq)
                    if m < 0.0:
                        raise PlanningError(f"stability margin {m:.4f} m during swing", name)
                seg_T.append(self._duration(q_leg - q_start))
        except kin.KinematicsError as e:
            raise PlanningError(f"foothold or swing path IK infeasible ({e})", name) from None
        except dyn.TipOverError as e:
            raise PlanningError(str(e), name) from None
        q_end = st.q.copy()
        q_end[leg] = q_leg
        self.phases.append(GaitPhase(SWING, float(sum(seg_T)), leg, st.pose, st.pose,
                                     tuple(c.copy() for c in corners), tuple(seg_T),
                                     stance_tips=self.tips.copy(), q_end=q_end))
        self.tips = self.tips.copy()
        self.tips[leg] = pf
        self.state = RobotState(st.pose, q_end, st.contact)

    def drive(self, distance: float, name: str) -> None:
        if distance <= 0.0:
            return
        st = self.state
        t = self.robot.cfg.track
        rate = self.v * (1.0 - dyn.slip(t.c_rr / t.mu, t.slip_max, t.slip_exponent))
        T = _quantize(distance / rate, self.dt)
        end = (st.pose[0] + distance, st.pose[1], st.pose[2])
        self.phases.append(GaitPhase(DRIVE, T, None, st.pose, end, drive_distance=distance,
                                     stance_tips=self.tips.copy(), q_end=st.q.copy()))
        self.tips = self.tips.copy()
        self.tips[:, 0] += distance
        self.state = RobotState(end, st.q, st.contact)

    def settle(self, target: tuple, name: str, posture=None) -> None:
        """Move the body onto ``target`` with all tips fixed, optionally ending in ``posture``."""
        self.body_move(SETTLE, target, name, posture)

    def plan(self, kind: str, start: RobotState) -> GaitPlan:
        return GaitPlan(kind, tuple(self.phases), start, self.state, self.s, self.v)


def standard_entry(robot: Robot, step_height: float) -> RobotState:
    """Pre-step stance: rolling posture, level, front tips ``edge_gap`` short of the edge."""
    pose = robot.home_pose(-robot.cfg.gait.edge_gap_m)
    return RobotState(pose, robot.home, (True,) * 4)


def _landing_x(robot: Robot) -> float:
    g = robot.cfg.gait
    return g.stride_m - g.edge_gap_m


def _front_foothold_x(p: "_Planner") -> float:
    """Front landing that restores the home tip spacing once the rear legs take their stride."""
    hb = p.robot.home_tips_body
    spacing = float(hb[list(FRONT_LEGS), 0].mean() - hb[list(REAR_LEGS), 0].mean())
    return float(p.tips[list(REAR_LEGS), 0].mean()) + spacing + p.cfg.stride_m


def _front_portion(p: _Planner) -> None:
    robot, g = p.robot, p.cfg
    x, z, pitch = p.state.pose
    p.body_move(SHIFT_BACKWARD, (x - g.backward_shift_m, z, pitch), "body shift backward")
    for leg in FRONT_LEGS:
        foot = p.tips[leg].copy()
        foot[0] = _front_foothold_x(p)
        foot[2] = p.s + p.r
        p.swing(leg, foot, f"swing {kin.SIDES[leg]}")
    p.body_move(SHIFT_FORWARD, centered_pose(robot, p.tips), "body shift forward")
    p.drive(-robot.cfg.gait.edge_gap_m - float(p.tips[list(REAR_LEGS), 0].max()), "track drive")


def _rear_portion(p: _Planner) -> None:
    robot = p.robot
    for leg in REAR_LEGS:
        p.shift_for_swing(leg, f"body shift before {kin.SIDES[leg]}", extra=0.005)
        foot = p.tips[leg].copy()
        foot[0] = _landing_x(robot)
        foot[2] = p.s + p.r
        p.swing(leg, foot, f"swing {kin.SIDES[leg]}")
    p.settle(robot.home_pose(p.tips[0, 0], ground_z=p.s), "settle", posture=robot.home)


def plan_whole_body_climb(scenario: StepScenario, robot: Robot, entry: RobotState | None = None) -> GaitPlan:
    """Front legs walk onto the step, the tracks carry the body forward, rear legs follow.

    ``entry`` is a rolling state with every track on the ground short of the
    standard entry; the plan then starts by driving up to it.
    """
    start = standard_entry(robot, scenario.step_height)
    if entry is None:
        p = _Planner(robot, scenario.step_height, scenario.rolling_speed, start)
    else:
        p = _Planner(robot, scenario.step_height, scenario.rolling_speed, entry)
        gap = float(start.tips(robot)[0, 0] - p.tips[0, 0])
        if (np.any(np.abs(p.tips[:, 2] - p.r) > 1e-6) or abs(entry.pose[2]) > 1e-9
                or np.max(np.abs(entry.q - robot.home)) > 1e-9 or gap < -1e-9):
            raise PlanningError("entry is not a level rolling stance behind the standard entry", "entry")
        p.drive(gap, "approach drive")
        start = entry
    _front_portion(p)
    _rear_portion(p)
    return p.plan(WHOLE_BODY, start)


def rear_entry(robot: Robot, scenario: StepScenario) -> RobotState:
    """State reached by the whole-body gait just before its rear portion."""
    start = standard_entry(robot, scenario.step_height)
    p = _Planner(robot, scenario.step_height, scenario.rolling_speed, start)
    _front_portion(p)
    return p.state


def plan_rear_body_climb(scenario: StepScenario, robot: Robot, entry: RobotState | None = None) -> GaitPlan:
    """Rear legs walk onto the step while the front already stands on it.

    Without ``entry`` the plan starts from the state the whole-body gait
    reaches before its rear portion, so both plans share that suffix.  From an
    arbitrary entry (front on the step after rolling) the front and rear
    tips are a full home spacing apart, so the body is levelled and shifted
    back, the front legs step one stride forward along the upper surface,
    and the tracks drive the rear tips up to the edge gap before the usual
    rear swings.
    """
    if entry is None:
        entry = rear_entry(robot, scenario)
        p = _Planner(robot, scenario.step_height, scenario.rolling_speed, entry)
    else:
        p = _Planner(robot, scenario.step_height, scenario.rolling_speed, entry)
        fr = p.tips[list(FRONT_LEGS)]
        if np.any(fr[:, 0] < 0.0) or np.any(np.abs(fr[:, 2] - (p.s + p.r)) > 1e-6):
            raise PlanningError("front tracks are not on the step", "entry")
        x, z, _ = centered_pose(robot, p.tips)
        p.body_move(SHIFT_BACKWARD, (x - p.cfg.backward_shift_m, z, 0.0), "level body and shift backward")
        for leg in FRONT_LEGS:
            foot = p.tips[leg].copy()
            foot[0] = _front_foothold_x(p)
            p.swing(leg, foot, f"swing {kin.SIDES[leg]}")
        p.drive(-p.cfg.edge_gap_m - float(p.tips[list(REAR_LEGS), 0].max()), "track drive")
    _rear_portion(p)
    return p.plan(REAR_BODY, entry)


# --- execution ------------------------------------------------------------

@dataclass
class GaitSeries:
    """Per-tick samples of an executed plan; tick k sits at time k * dt."""
    t: np.ndarray
    pose: np.ndarray       # (n, 3)
    q: np.ndarray          # (n, 4, 4)
    qdot: np.ndarray       # (n, 20) leg joints then track drives
    tau: np.ndarray        # (n, 20)
    power: np.ndarray      # (n, 20) energy integrand
    margin: np.ndarray     # (n,)
    airborne: np.ndarray   # (n,) swing leg or -1
    phase: np.ndarray      # (n,) phase index
    tips: np.ndarray       # (n, 4, 3)
    final: RobotState
    dt: float = 0.002

    def __len__(self) -> int:
        return len(self.t)

    def energy(self, subset=ALL_JOINTS) -> float:
        return dyn.integrate_energy(self.power, self.dt, subset)


def _phase_samples(robot: Robot, phase: GaitPhase, state: RobotState, s: float, dt: float,
                   index: int):
    """Body poses with joint angles and world tips for ticks 1..n of one phase."""
    n = int(round(phase.duration / dt))
    if n <= 0:
        return np.empty((0, 3)), np.empty((0, 4, 4)), np.empty((0, 4, 3))
    poses = np.empty((n, 3))
    Q = np.empty((n, 4, 4))
    tips = np.empty((n, 4, 3))
    base_tips = np.array(phase.stance_tips, dtype=float)
    q = state.q.copy()
    stance = [i for i in range(N_LEGS) if state.contact[i]]
    try:
        if phase.kind in (SHIFT_FORWARD, SHIFT_BACKWARD, SETTLE):
            u, _ = traj.time_scaling(phase.duration, dt * np.arange(1, n + 1))
            a, b = np.array(phase.body_start), np.array(phase.body_end)
            Q[:] = body_path(robot, phase.body_start, phase.body_end, base_tips, q, stance, u, phase.posture)
            poses[:] = a + u[:, None] * (b - a)
            tips[:] = base_tips
        elif phase.kind == DRIVE:
            t = dt * np.arange(1, n + 1)
            a, b = np.array(phase.body_start), np.array(phase.body_end)
            u = t / phase.duration
            for k in range(n):
                poses[k] = a + u[k] * (b - a)
                Q[k] = q
                tips[k] = base_tips + np.array([u[k] * phase.drive_distance, 0.0, 0.0])
        elif phase.kind == SWING:
            leg = phase.leg
            bounds = np.concatenate([[0.0], np.cumsum(phase.segment_durations)])
            corners = [np.asarray(c) for c in phase.waypoints]
            for k in range(n):
                t = (k + 1) * dt
                seg = min(int(np.searchsorted(bounds, t - 1e-12, side="left")) - 1, len(corners) - 2)
                seg = max(seg, 0)
                u, _ = traj.time_scaling(phase.segment_durations[seg], t - bounds[seg])
                p = corners[seg] + float(u) * (corners[seg + 1] - corners[seg])
                if tip_clearance(p, s) < robot.tip_radius - 1e-9:
                    raise ExecutionError("swing tip intersects the step", index, k + 1)
                q = q.copy()
                q[leg] = robot.leg_ik(leg, p, phase.body_start, q[leg])
                poses[k], Q[k] = phase.body_start, q
                tips[k] = base_tips
                tips[k, leg] = p
        else:
            raise ExecutionError(f"unknown phase kind {phase.kind!r}", index, 0)
    except kin.KinematicsError as e:
        raise ExecutionError(f"IK failure ({e})", index, k + 1) from None
    return poses, Q, tips


def support_forces_batch(contacts: np.ndarray, com: np.ndarray, weight: float) -> np.ndarray:
    """Vertical support forces for many samples: contacts (n, k, 3), com (n, 3) -> (n, k)."""
    n, k, _ = contacts.shape
    A = np.empty((n, 3, k))
    A[:, 0] = 1.0
    A[:, 1] = contacts[:, :, 0] - com[:, None, 0]
    A[:, 2] = contacts[:, :, 1] - com[:, None, 1]
    b = np.array([weight, 0.0, 0.0])
    if k == 3:
        f = np.linalg.solve(A, np.broadcast_to(b, (n, 3))[..., None])[..., 0]
    else:
        AAt = A @ A.transpose(0, 2, 1)
        f = (A.transpose(0, 2, 1) @ np.linalg.solve(AAt, np.broadcast_to(b, (n, 3))[..., None]))[..., 0]
    bad = np.any(f < -1e-9 * weight, axis=1)
    for i in np.flatnonzero(bad):
        f[i] = dyn.support_forces(dyn.SupportState(contacts[i], com[i], weight))
    return f


def margins_batch(contacts: np.ndarray, com: np.ndarray) -> np.ndarray:
    """Support-polygon margins for many samples sharing one contact topology."""
    out = np.empty(len(com))
    for i in range(len(com)):
        out[i] = dyn.polygon_margin(contacts[i, :, :2], com[i])
    return out


def evaluate_samples(robot: Robot, poses: np.ndarray, Q: np.ndarray, tips: np.ndarray, contact,
                     track_speed: float = 0.0, track_torque: float = 0.0):
    """Joint torques and stability margin for n samples.

    ``contact`` is a tuple of four flags shared by all samples.  Returns
    (tau (n, 16 + 4), margin (n,)).
    """
    n = len(poses)
    pitch = poses[:, 2]
    c, s_ = np.cos(pitch), np.sin(pitch)
    Rp = np.zeros((n, 3, 3))
    Rp[:, 0, 0], Rp[:, 0, 2], Rp[:, 1, 1], Rp[:, 2, 0], Rp[:, 2, 2] = c, -s_, 1.0, s_, c
    origin = np.stack([poses[:, 0], np.zeros(n), poses[:, 1]], axis=1)
    com_b = np.zeros((n, 3))
    kin_out = []
    for i in range(N_LEGS):
        tip, coms, J, G = robot.leg_batch(i, Q[:, i])
        Rm, pm = robot.mount_R[i], robot.mount_p[i]
        com_b += np.einsum("k,nkj->nj", robot.link_mass, coms @ Rm.T + pm)
        kin_out.append((J, G))
    com = np.einsum("nij,nj->ni", Rp, com_b / robot.total_mass) + origin
    idx = [i for i in range(N_LEGS) if contact[i]]
    pts = tips[:, idx]
    margin = margins_batch(pts, com)
    if np.any(margin < -1e-12):
        k = int(np.argmax(margin < -1e-12))
        raise dyn.TipOverError(f"centre of mass outside support polygon at sample {k} "
                               f"(margin {margin[k]:.4g} m)")
    f = support_forces_batch(pts, com, robot.weight)
    tau = np.zeros((n, N_JOINTS))
    up_w = np.array([0.0, 0.0, GRAVITY])
    for i in range(N_LEGS):
        J, G = kin_out[i]
        Rws = Rp @ robot.mount_R[i]                       # (n, 3, 3)
        up = np.einsum("nji,j->ni", Rws, up_w)             # Rws^T g
        t_leg = np.einsum("nij,ni->nj", G, up)
        if i in idx:
            fz = f[:, idx.index(i)]
            F_s = fz[:, None] * Rws[:, 2, :]               # Rws^T (0, 0, fz)
            t_leg -= np.einsum("nij,ni->nj", J, F_s)
        tau[:, 4 * i:4 * i + 4] = t_leg
    tau[:, N_LEG_JOINTS:] = track_torque
    return tau, margin


def execute_gait(plan: GaitPlan, robot: Robot, state: RobotState | None = None) -> GaitSeries:
    """Sample a plan at dt; joint rates by backward differences, torques from quasi-static support."""
    dt = robot.cfg.dt_s
    state = plan.start if state is None else state
    if not state.close_to(plan.start, 1e-9):
        raise ExecutionError("state does not match the plan's entry configuration", 0, 0)
    K, R = dyn.motor_params(robot)
    t_cfg = robot.cfg.track
    chunks = []
    q_prev = state.q.copy()
    cur = state
    t0 = 0
    for idx, ph in enumerate(plan.phases):
        poses, Q, tips = _phase_samples(robot, ph, cur, plan.step_height, dt, idx)
        n = len(poses)
        if n == 0:
            continue
        contact = tuple(i not in ph.airborne for i in range(N_LEGS))
        if ph.kind == DRIVE:
            omega = plan.rolling_speed / robot.tip_radius
            torque = 0.25 * t_cfg.c_rr * robot.weight * robot.tip_radius
        else:
            omega, torque = 0.0, 0.0
        try:
            tau, margin = evaluate_samples(robot, poses, Q, tips, contact, omega, torque)
        except dyn.TipOverError as e:
            raise ExecutionError(str(e), idx, 0) from None
        flat = Q.reshape(n, N_LEG_JOINTS)
        prev = np.vstack([q_prev.reshape(1, N_LEG_JOINTS), flat[:-1]])
        qdot = np.zeros((n, N_JOINTS))
        qdot[:, :N_LEG_JOINTS] = (flat - prev) / dt
        qdot[:, N_LEG_JOINTS:] = omega
        power = dyn.integrand(tau, qdot, K, R)
        air = np.full(n, ph.leg if ph.kind == SWING else -1)
        chunks.append((poses, Q, qdot, tau, power, margin, air, np.full(n, idx), tips))
        q_prev = Q[-1].copy()
        cur = RobotState(tuple(poses[-1]), Q[-1], (True,) * 4)
        t0 += n
    if not chunks:
        return GaitSeries(np.empty(0), np.empty((0, 3)), np.empty((0, 4, 4)), np.empty((0, N_JOINTS)),
                          np.empty((0, N_JOINTS)), np.empty((0, N_JOINTS)), np.empty(0),
                          np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty((0, 4, 3)), state, dt)
    cols = list(zip(*chunks))
    arrays = [np.concatenate(c) for c in cols]
    t = dt * np.arange(1, t0 + 1)
    final = RobotState(tuple(arrays[0][-1]), arrays[1][-1], (True,) * 4)
    return GaitSeries(t, arrays[0], arrays[1], arrays[2], arrays[3], arrays[4], arrays[5],
                      arrays[6].astype(int), arrays[7].astype(int), arrays[8], final, dt)
