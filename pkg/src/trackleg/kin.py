"""Denavit-Hartenberg model of one track-leg.

Each leg is a 4R chain: a yaw joint (link 1, twist pi/2) followed by three
parallel pitch joints.  The tip (frame 5) is the end of the track segment.
Angles are radians, lengths metres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Front-left leg, standard D-H (b, a, alpha) per link.
DH_TABLE = (
    (0.0, 0.0, math.pi / 2),
    (0.1020, 0.1330, 0.0),
    (0.0185, 0.1850, 0.0),
    (0.0285, 0.2196, 0.0),
)

SIDES = ("front-left", "front-right", "rear-left", "rear-right")


class KinematicsError(ValueError):
    pass


class JointLimitError(KinematicsError):
    def __init__(self, index: int, value: float, lo: float, hi: float):
        super().__init__(f"joint {index + 1} = {value:.6g} rad outside [{lo:.6g}, {hi:.6g}]")
        self.index = index


class IKError(KinematicsError):
    """Raised when inverse kinematics fails; carries the best residual seen."""

    def __init__(self, message: str, residual: float = math.inf, q=None):
        super().__init__(message)
        self.residual = residual
        self.q = q


@dataclass(frozen=True)
class DHLink:
    b: float
    a: float
    alpha: float
    theta_home: float = 0.0
    theta_min: float = -math.pi / 2
    theta_max: float = math.pi / 2

    def __post_init__(self):
        vals = (self.b, self.a, self.alpha, self.theta_home, self.theta_min, self.theta_max)
        if not all(math.isfinite(v) for v in vals):
            raise KinematicsError(f"non-finite D-H parameter in {self}")
        if not self.theta_min < self.theta_max:
            raise KinematicsError("theta_min must be < theta_max")
        if not self.theta_min <= self.theta_home <= self.theta_max:
            raise KinematicsError("theta_home outside joint limits")


def _mount_default() -> np.ndarray:
    return np.eye(4)


@dataclass(frozen=True)
class LegChain:
    links: tuple[DHLink, DHLink, DHLink, DHLink]
    mount: np.ndarray = field(default_factory=_mount_default, compare=False)
    side: str = "front-left"

    def __post_init__(self):
        if len(self.links) != 4:
            raise KinematicsError("a leg chain has exactly 4 links")
        if self.side not in SIDES:
            raise KinematicsError(f"unknown leg side {self.side!r}")
        m = np.asarray(self.mount, dtype=float)
        if m.shape != (4, 4):
            raise KinematicsError("mount must be a 4x4 homogeneous transform")
        check_transform(m)
        object.__setattr__(self, "mount", m)

    @property
    def home(self) -> np.ndarray:
        return np.array([lk.theta_home for lk in self.links])

    @property
    def lower(self) -> np.ndarray:
        return np.array([lk.theta_min for lk in self.links])

    @property
    def upper(self) -> np.ndarray:
        return np.array([lk.theta_max for lk in self.links])

    @property
    def lateral_offset(self) -> float:
        return sum(lk.b for lk in self.links[1:])

    @property
    def reach(self) -> float:
        return sum(lk.a for lk in self.links[1:])

    def check_limits(self, q, tol: float = 1e-12) -> None:
        for i, (v, lk) in enumerate(zip(q, self.links)):
            if not (lk.theta_min - tol <= v <= lk.theta_max + tol):
                raise JointLimitError(i, float(v), lk.theta_min, lk.theta_max)


def check_transform(T: np.ndarray, tol: float = 1e-9) -> None:
    R = T[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise KinematicsError("rotation block is not a proper rotation")
    if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
        raise KinematicsError("bottom row of a homogeneous transform must be [0, 0, 0, 1]")


def link_transform(link: DHLink, theta: float) -> np.ndarray:
    """Standard D-H factor Rz(theta) Tz(b) Tx(a) Rx(alpha)."""
    if not math.isfinite(theta):
        raise KinematicsError("joint angle must be finite")
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(link.alpha), math.sin(link.alpha)
    return np.array([
        [ct, -st * ca, st * sa, link.a * ct],
        [st, ct * ca, -ct * sa, link.a * st],
        [0.0, sa, ca, link.b],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _as_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise KinematicsError(f"expected 4 joint angles, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise KinematicsError("joint angles must be finite")
    return q


def forward_kinematics(leg: LegChain, q, check: bool = True) -> np.ndarray:
    """Shoulder-frame pose of the track tip, as the product of the four link factors."""
    q = _as_q(q)
    if check:
        leg.check_limits(q)
    T = np.eye(4)
    for lk, th in zip(leg.links, q):
        T = T @ link_transform(lk, th)
    return T


def closed_form_fk(leg: LegChain, q) -> np.ndarray:
    """Expanded tip transform for chains shaped like the reference leg.

    Valid when link 1 has b = a = 0 and alpha = pi/2, and links 2-4 have zero
    twist.  Mirrored legs only change signs of b and theta_1, so they qualify.
    """
    q = _as_q(q)
    l1, l2, l3, l4 = leg.links
    t1, t2, t3, t4 = q
    s1, c1 = math.sin(t1), math.cos(t1)
    c2, s2 = math.cos(t2), math.sin(t2)
    c23, s23 = math.cos(t2 + t3), math.sin(t2 + t3)
    c234, s234 = math.cos(t2 + t3 + t4), math.sin(t2 + t3 + t4)
    bsum = l2.b + l3.b + l4.b
    plan_x = l2.a * c2 + l3.a * c23 + l4.a * c234
    plan_y = l2.a * s2 + l3.a * s23 + l4.a * s234
    return np.array([
        [c1 * c234, -c1 * s234, s1, bsum * s1 + c1 * plan_x],
        [s1 * c234, -s1 * s234, -c1, -bsum * c1 + s1 * plan_x],
        [s234, c234, 0.0, plan_y],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _reference_shaped(leg: LegChain) -> bool:
    l1, l2, l3, l4 = leg.links
    return (l1.a == 0.0 and l1.b == 0.0 and l1.alpha == math.pi / 2
            and l2.alpha == l3.alpha == l4.alpha == 0.0)


def tip_position(leg: LegChain, q) -> np.ndarray:
    """Tip position in the shoulder frame (fast path, no limit check)."""
    l2, l3, l4 = leg.links[1:]
    t1, t2, t3, t4 = q
    if _reference_shaped(leg):
        bsum = l2.b + l3.b + l4.b
        px = l2.a * math.cos(t2) + l3.a * math.cos(t2 + t3) + l4.a * math.cos(t2 + t3 + t4)
        py = l2.a * math.sin(t2) + l3.a * math.sin(t2 + t3) + l4.a * math.sin(t2 + t3 + t4)
        s1, c1 = math.sin(t1), math.cos(t1)
        return np.array([bsum * s1 + c1 * px, -bsum * c1 + s1 * px, py])
    return forward_kinematics(leg, q, check=False)[:3, 3]


def jacobian(leg: LegChain, q) -> np.ndarray:
    """3x4 position Jacobian of the tip in the shoulder frame.

    Column j is z_j x (p_tip - o_j), with z_j, o_j the axis and origin of
    joint j (the z axis of the frame preceding link j).
    """
    q = _as_q(q)
    T = np.eye(4)
    axes, origins = [], []
    for lk, th in zip(leg.links, q):
        axes.append(T[:3, 2].copy())
        origins.append(T[:3, 3].copy())
        T = T @ link_transform(lk, th)
    p = T[:3, 3]
    J = np.empty((3, 4))
    for j in range(4):
        J[:, j] = np.cross(axes[j], p - origins[j])
    return J


def _reference_jacobian(leg: LegChain, q) -> np.ndarray:
    """Closed-form Jacobian for reference-shaped chains (used inside IK)."""
    l2, l3, l4 = leg.links[1:]
    t1, t2, t3, t4 = q
    s1, c1 = math.sin(t1), math.cos(t1)
    c2, s2 = math.cos(t2), math.sin(t2)
    c23, s23 = math.cos(t2 + t3), math.sin(t2 + t3)
    c234, s234 = math.cos(t2 + t3 + t4), math.sin(t2 + t3 + t4)
    bsum = l2.b + l3.b + l4.b
    x4, y4 = l4.a * c234, l4.a * s234
    x3, y3 = x4 + l3.a * c23, y4 + l3.a * s23
    x2, y2 = x3 + l2.a * c2, y3 + l2.a * s2
    return np.array([
        [bsum * c1 - s1 * x2, -c1 * y2, -c1 * y3, -c1 * y4],
        [bsum * s1 + c1 * x2, -s1 * y2, -s1 * y3, -s1 * y4],
        [0.0, x2, x3, x4],
    ])


def frame_origins(leg: LegChain, q) -> np.ndarray:
    """Origins of frames 1..5 in the shoulder frame, shape (5, 3)."""
    q = _as_q(q)
    T = np.eye(4)
    out = [T[:3, 3].copy()]
    for lk, th in zip(leg.links, q):
        T = T @ link_transform(lk, th)
        out.append(T[:3, 3].copy())
    return np.array(out)


_I3 = np.eye(3)


def reachable(leg: LegChain, target, tol: float = 1e-9) -> bool:
    """Workspace test ignoring joint limits: annulus of the planar sub-chain."""
    x, y, z = target
    off = leg.lateral_offset
    rho2 = x * x + y * y
    planar2 = rho2 - off * off + z * z
    if rho2 < off * off - tol:
        return False
    return planar2 <= leg.reach ** 2 + tol


def inverse_kinematics(leg: LegChain, target, seed, *, damping: float = 1e-3,
                       max_iter: int = 200, tol: float = 1e-8,
                       max_step: float = 0.3) -> np.ndarray:
    """Damped least squares position IK, joint limits enforced by clamping.

    Starts from ``seed`` and returns the first iterate whose tip lies within
    ``tol`` of ``target``.  Raises IKError when the target is outside the
    chain's workspace or the iteration does not converge.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (3,) or not np.all(np.isfinite(target)):
        raise IKError("target must be a finite 3-vector")
    if not reachable(leg, target):
        raise IKError(f"target {target.tolist()} is outside the leg workspace")
    q = np.clip(_as_q(seed), leg.lower, leg.upper)
    lo, hi = leg.lower, leg.upper
    lam2 = damping * damping
    if _reference_shaped(leg):
        return _dls_reference(leg, target, q, lam2, max_iter, tol, max_step)
    jac = jacobian
    best_err, best_q = math.inf, q.copy()
    for _ in range(max_iter + 1):
        err = target - tip_position(leg, q)
        n = math.sqrt(err @ err)
        if n < best_err:
            best_err, best_q = n, q.copy()
        if n <= tol:
            return q
        J = jac(leg, q)
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * _I3, err)
        # joints pinned at a limit and pushed outward drop out of the step
        pinned = ((q <= lo) & (dq < 0)) | ((q >= hi) & (dq > 0))
        if pinned.any() and not pinned.all():
            Jf = J * ~pinned
            dq = Jf.T @ np.linalg.solve(Jf @ Jf.T + lam2 * _I3, err)
        step = np.max(np.abs(dq))
        if step > max_step:
            dq *= max_step / step
        q = np.clip(q + dq, lo, hi)
    raise IKError(f"IK did not converge (best residual {best_err:.3e} m)", best_err, best_q)


def _solve3(A, b):
    """Cramer's rule for a symmetric positive definite 3x3 system given as nested lists."""
    (a, bb, c), (_, e, f), (_, _, i) = A
    d0 = e * i - f * f
    d1 = bb * i - c * f
    d2 = bb * f - c * e
    det = a * d0 - bb * d1 + c * d2
    x0 = (b[0] * d0 - bb * (b[1] * i - f * b[2]) + c * (b[1] * f - e * b[2])) / det
    x1 = (a * (b[1] * i - f * b[2]) - b[0] * d1 + c * (bb * b[2] - b[1] * c)) / det
    x2 = (a * (e * b[2] - b[1] * f) - bb * (bb * b[2] - b[1] * c) + b[0] * d2) / det
    return x0, x1, x2


def _dls_reference(leg: LegChain, target: np.ndarray, q0: np.ndarray, lam2: float, max_iter: int,
                   tol: float, max_step: float) -> np.ndarray:
    """Scalar implementation of the damped iteration for reference-shaped chains."""
    l2, l3, l4 = leg.links[1:]
    a2, a3, a4 = l2.a, l3.a, l4.a
    bsum = l2.b + l3.b + l4.b
    lo = [lk.theta_min for lk in leg.links]
    hi = [lk.theta_max for lk in leg.links]
    tx, ty, tz = (float(v) for v in target)
    q = [float(v) for v in q0]
    best_err, best_q = math.inf, list(q)
    cos, sin = math.cos, math.sin
    for _ in range(max_iter + 1):
        t1, t2, t3, t4 = q
        s1, c1 = sin(t1), cos(t1)
        c2, s2 = cos(t2), sin(t2)
        c23, s23 = cos(t2 + t3), sin(t2 + t3)
        c234, s234 = cos(t2 + t3 + t4), sin(t2 + t3 + t4)
        x4, y4 = a4 * c234, a4 * s234
        x3, y3 = x4 + a3 * c23, y4 + a3 * s23
        x2, y2 = x3 + a2 * c2, y3 + a2 * s2
        ex = tx - (bsum * s1 + c1 * x2)
        ey = ty - (-bsum * c1 + s1 * x2)
        ez = tz - y2
        n = math.sqrt(ex * ex + ey * ey + ez * ez)
        if n < best_err:
            best_err, best_q = n, list(q)
        if n <= tol:
            return np.array(q)
        cols = [(bsum * c1 - s1 * x2, bsum * s1 + c1 * x2, 0.0),
                (-c1 * y2, -s1 * y2, x2), (-c1 * y3, -s1 * y3, x3), (-c1 * y4, -s1 * y4, x4)]
        active = [True] * 4
        for attempt in range(2):
            A = [[lam2, 0.0, 0.0], [0.0, lam2, 0.0], [0.0, 0.0, lam2]]
            for j in range(4):
                if active[j]:
                    u = cols[j]
                    for r in range(3):
                        for c in range(r, 3):
                            A[r][c] += u[r] * u[c]
            w = _solve3(A, (ex, ey, ez))
            dq = [(cols[j][0] * w[0] + cols[j][1] * w[1] + cols[j][2] * w[2]) if active[j] else 0.0
                  for j in range(4)]
            if attempt:
                break
            # joints pinned at a limit and pushed outward drop out of the step
            pinned = [(q[j] <= lo[j] and dq[j] < 0) or (q[j] >= hi[j] and dq[j] > 0) for j in range(4)]
            if not any(pinned) or all(pinned):
                break
            active = [not p for p in pinned]
        step = max(abs(v) for v in dq)
        k = max_step / step if step > max_step else 1.0
        q = [min(max(q[j] + k * dq[j], lo[j]), hi[j]) for j in range(4)]
    raise IKError(f"IK did not converge (best residual {best_err:.3e} m)", best_err, np.array(best_q))


def _yaw_candidates(leg: LegChain, target) -> list:
    """Yaw angles that point the planar sub-chain at ``target`` (reference-shaped chains)."""
    x, y, _ = target
    off = leg.lateral_offset
    rho2 = x * x + y * y
    if rho2 <= off * off:
        return []
    px = math.sqrt(rho2 - off * off)
    out = []
    for p in (px, -px):
        t1 = math.atan2(y, x) - math.atan2(-off, p)
        t1 = (t1 + math.pi) % (2 * math.pi) - math.pi
        if leg.links[0].theta_min <= t1 <= leg.links[0].theta_max:
            out.append(t1)
    return out


def solve_ik(leg: LegChain, target, seed, restarts: int = 10, **kw) -> np.ndarray:
    """IK from ``seed``; on failure retries the same iteration from fallback seeds.

    Fallbacks are the home and mid-range postures, then the same postures and a
    coarse grid over the pitch joints with the yaw joint pre-aimed at the target.
    Finally the iteration is restarted from its best iterate up to ``restarts``
    times while the residual keeps improving.
    """
    try:
        return inverse_kinematics(leg, target, seed, **kw)
    except IKError as first:
        if not reachable(leg, target):
            raise
        best = first
        mid = 0.5 * (leg.lower + leg.upper)
        postures = [leg.home, mid, 0.5 * (leg.home + leg.lower), 0.5 * (leg.home + leg.upper)]
        seeds = list(postures)
        if _reference_shaped(leg):
            # last resort: a coarse grid over the pitch joints
            fr = (0.2, 0.5, 0.8)
            grid = [leg.lower + np.array([0.5, f2, f3, f4]) * (leg.upper - leg.lower)
                    for f2 in fr for f3 in fr for f4 in fr]
            for t1 in _yaw_candidates(leg, target):
                for pst in postures + grid:
                    alt = pst.copy()
                    alt[0] = t1
                    seeds.append(alt)
        for alt in seeds:
            try:
                return inverse_kinematics(leg, target, alt, **kw)
            except IKError as e:
                if e.residual < best.residual:
                    best = e
        # slow convergence near singular postures: restart from the best iterate
        for _ in range(restarts):
            if best.q is None:
                break
            try:
                return inverse_kinematics(leg, target, best.q, **kw)
            except IKError as e:
                if not e.residual < best.residual:
                    break
                best = e
        raise best


def _flip_link(lk: DHLink, flip_theta: bool, flip_b: bool) -> DHLink:
    b = -lk.b if flip_b else lk.b
    if flip_theta:
        return replace(lk, b=b, theta_home=-lk.theta_home,
                       theta_min=-lk.theta_max, theta_max=-lk.theta_min)
    return replace(lk, b=b)


# Mount rotations (body <- shoulder).  Front legs: x1 forward, z1 down.
# Rear legs: x1 backward, z1 down.
_R_FRONT = np.diag([1.0, -1.0, -1.0])
_R_REAR = np.diag([-1.0, 1.0, -1.0])


def mount_transform(side: str, shoulder_xyz) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = _R_FRONT if side.startswith("front") else _R_REAR
    T[:3, 3] = shoulder_xyz
    return T


def make_front_left(theta_home=(0.0, 0.0, 0.0, 0.0), half_range: float = math.pi / 2,
                    shoulder=(0.0, 0.0, 0.0), table=DH_TABLE) -> LegChain:
    links = tuple(
        DHLink(b=b, a=a, alpha=al, theta_home=th, theta_min=th - half_range, theta_max=th + half_range)
        for (b, a, al), th in zip(table, theta_home)
    )
    return LegChain(links=links, mount=mount_transform("front-left", shoulder), side="front-left")


def mirror_leg(front_left: LegChain, side: str) -> LegChain:
    """Derive another leg from the canonical front-left chain.

    Left/right mirroring flips the sign of the lateral offsets b_i and of the
    yaw joint; front/rear mirroring turns the shoulder frame about the
    vertical axis.  Shoulder position is reflected accordingly.
    """
    if side not in SIDES:
        raise KinematicsError(f"unknown leg side {side!r}")
    if front_left.side != "front-left":
        raise KinematicsError("mirror_leg expects the front-left chain")
    if side == "front-left":
        return front_left
    sx, sy, sz = front_left.mount[:3, 3]
    front = side.startswith("front")
    left = side.endswith("left")
    # rear-right keeps the canonical signs under the rear mount; front-right and rear-left flip
    flip = front != left
    links = tuple(
        _flip_link(lk, flip_theta=(i == 0 and flip), flip_b=flip)
        for i, lk in enumerate(front_left.links)
    )
    shoulder = (sx if front else -sx, sy if left else -sy, sz)
    return LegChain(links=links, mount=mount_transform(side, shoulder), side=side)


def mirror_angles(q, side: str) -> np.ndarray:
    """Joint vector for ``side`` that mirrors front-left posture ``q``."""
    q = np.array(q, dtype=float)
    if side in ("front-right", "rear-left"):
        q[0] = -q[0]
    return q
