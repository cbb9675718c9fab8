"""Robot model configuration and the assembled four-leg robot.

Configuration is JSON with units spelled out in key names.  The world frame
has x forward, y left, z up; the step edge sits at x = 0 with the upper
surface at z = step height for x >= 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from . import kin

GRAVITY = 9.81
N_LEGS = 4
N_LEG_JOINTS = 16
N_JOINTS = 20  # 16 leg joints + 4 track drives
LEG_NAMES = kin.SIDES
FRONT_LEGS = (0, 1)
REAR_LEGS = (2, 3)


class ConfigError(ValueError):
    """Invalid configuration; the message names the field and the violated constraint."""


def joint_index(leg: int, joint: int) -> int:
    return 4 * leg + joint


def track_index(leg: int) -> int:
    return N_LEG_JOINTS + leg


REAR_SUBSET = tuple(joint_index(l, j) for l in REAR_LEGS for j in range(4)) + tuple(track_index(l) for l in REAR_LEGS)
ALL_JOINTS = tuple(range(N_JOINTS))


@dataclass
class MotorConfig:
    K_t_Nm_per_A: float = 0.5
    R_a_ohm: float = 1.0


@dataclass
class GeometryConfig:
    dh_b_m: list = field(default_factory=lambda: [r[0] for r in kin.DH_TABLE])
    dh_a_m: list = field(default_factory=lambda: [r[1] for r in kin.DH_TABLE])
    dh_alpha_rad: list = field(default_factory=lambda: [r[2] for r in kin.DH_TABLE])
    theta_home_rad: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    joint_half_range_rad: list = field(default_factory=lambda: [math.pi / 2] * 4)
    shoulder_x_m: float = 0.25
    shoulder_y_m: float = 0.15
    shoulder_z_m: float = 0.0


@dataclass
class MassConfig:
    total_mass_kg: float = 20.0
    leg_mass_fraction: float = 0.4


@dataclass
class TrackConfig:
    track_height_h_m: float = 0.08
    sprocket_radius_m: float = 0.04
    front_climb_radius_m: float = 1.2
    rear_climb_radius_m: float = 0.3
    mu: float = 0.6
    c_rr: float = 0.05
    slip_max: float = 0.97
    slip_exponent: float = 2.0


@dataclass
class GaitConfig:
    clearance_m: float = 0.02
    backward_shift_m: float = 0.05
    min_margin_m: float = 0.01
    stride_m: float = 0.10
    edge_gap_m: float = 0.05
    a_peak_rad_s2: float = 1.0
    min_phase_s: float = 0.1
    preparation_distance_m: float = 0.05
    finish_margin_m: float = 0.1


@dataclass
class ModelConfig:
    name: str = "reference"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mass: MassConfig = field(default_factory=MassConfig)
    leg_motor: MotorConfig = field(default_factory=MotorConfig)
    track_motor: MotorConfig = field(default_factory=MotorConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    gait: GaitConfig = field(default_factory=GaitConfig)
    dt_s: float = 0.002

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        sections = {"geometry": GeometryConfig, "mass": MassConfig, "leg_motor": MotorConfig,
                    "track_motor": MotorConfig, "track": TrackConfig, "gait": GaitConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        kw = {}
        for name, value in data.items():
            if name in sections:
                sub = sections[name]
                sub_known = {f.name for f in fields(sub)}
                bad = set(value) - sub_known
                if bad:
                    raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
                kw[name] = sub(**value)
            else:
                kw[name] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, where, what):
            if not cond:
                raise ConfigError(f"{where}: {what}")

        g = self.geometry
        for key in ("dh_b_m", "dh_a_m", "dh_alpha_rad", "theta_home_rad", "joint_half_range_rad"):
            v = getattr(g, key)
            need(isinstance(v, list) and len(v) == 4, f"geometry.{key}", "must be a list of 4 numbers")
            need(all(isinstance(x, (int, float)) and math.isfinite(x) for x in v),
                 f"geometry.{key}", "entries must be finite")
        need(all(h > 0 for h in g.joint_half_range_rad), "geometry.joint_half_range_rad", "must be > 0")
        need(g.shoulder_x_m > 0, "geometry.shoulder_x_m", "must be > 0")
        need(g.shoulder_y_m >= 0, "geometry.shoulder_y_m", "must be >= 0")
        m = self.mass
        need(m.total_mass_kg > 0, "mass.total_mass_kg", "must be > 0")
        need(0 <= m.leg_mass_fraction < 1, "mass.leg_mass_fraction", "must be in [0, 1)")
        for nm in ("leg_motor", "track_motor"):
            mc = getattr(self, nm)
            need(mc.K_t_Nm_per_A > 0, f"{nm}.K_t_Nm_per_A", "must be > 0")
            need(mc.R_a_ohm >= 0, f"{nm}.R_a_ohm", "must be >= 0")
        t = self.track
        need(t.track_height_h_m > 0, "track.track_height_h_m", "must be > 0")
        need(t.sprocket_radius_m > 0, "track.sprocket_radius_m", "must be > 0")
        need(t.front_climb_radius_m > 0, "track.front_climb_radius_m", "must be > 0")
        need(t.rear_climb_radius_m > 0, "track.rear_climb_radius_m", "must be > 0")
        need(t.mu > 0, "track.mu", "must be > 0")
        need(t.c_rr >= 0, "track.c_rr", "must be >= 0")
        need(0 <= t.slip_max < 1, "track.slip_max", "must be in [0, 1)")
        need(t.slip_exponent > 0, "track.slip_exponent", "must be > 0")
        ga = self.gait
        need(ga.clearance_m >= 0, "gait.clearance_m", "must be >= 0")
        need(ga.backward_shift_m >= 0, "gait.backward_shift_m", "must be >= 0")
        need(ga.min_margin_m >= 0, "gait.min_margin_m", "must be >= 0")
        need(ga.stride_m > ga.edge_gap_m, "gait.stride_m", "must exceed gait.edge_gap_m")
        need(ga.edge_gap_m >= t.sprocket_radius_m, "gait.edge_gap_m", "must be >= track.sprocket_radius_m")
        need(ga.a_peak_rad_s2 > 0, "gait.a_peak_rad_s2", "must be > 0")
        need(ga.min_phase_s > 0, "gait.min_phase_s", "must be > 0")
        need(ga.preparation_distance_m >= 0, "gait.preparation_distance_m", "must be >= 0")
        need(ga.finish_margin_m >= 0, "gait.finish_margin_m", "must be >= 0")
        need(self.dt_s > 0, "dt_s", "must be > 0")
        # link-level invariants (limits contain home, etc.)
        try:
            Robot(self)
        except kin.KinematicsError as e:
            raise ConfigError(f"geometry: {e}") from None


def load_model(path) -> ModelConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    return ModelConfig.from_dict(data)


def save_model(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


def reference_model_path() -> Path:
    return Path(str(resources.files("trackleg") / "data" / "reference_model.json"))


def reference_model() -> ModelConfig:
    return load_model(reference_model_path())


def rot_pitch(pitch: float) -> np.ndarray:
    """Body rotation for a nose-up pitch angle (rotation about world y by -pitch)."""
    c, s = math.cos(pitch), math.sin(pitch)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


class Robot:
    """Legs and mass distribution built from a ModelConfig."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        g = cfg.geometry
        links = tuple(
            kin.DHLink(b=b, a=a, alpha=al, theta_home=th, theta_min=th - hr, theta_max=th + hr)
            for b, a, al, th, hr in zip(g.dh_b_m, g.dh_a_m, g.dh_alpha_rad, g.theta_home_rad,
                                        g.joint_half_range_rad)
        )
        fl = kin.LegChain(links=links, mount=kin.mount_transform(
            "front-left", (g.shoulder_x_m, g.shoulder_y_m, g.shoulder_z_m)), side="front-left")
        self.legs = tuple(kin.mirror_leg(fl, side) for side in kin.SIDES)
        m = cfg.mass
        lengths = np.array([abs(lk.a) for lk in links])
        leg_mass = m.total_mass_kg * m.leg_mass_fraction / N_LEGS
        self.link_mass = leg_mass * lengths / lengths.sum() if lengths.sum() > 0 else np.zeros(4)
        self.body_mass = m.total_mass_kg - N_LEGS * self.link_mass.sum()
        self.total_mass = m.total_mass_kg
        self.weight = self.total_mass * GRAVITY
        self.mount_R = [leg.mount[:3, :3] for leg in self.legs]
        self.mount_p = [leg.mount[:3, 3] for leg in self.legs]

    @cached_property
    def home(self) -> np.ndarray:
        """Home joint vectors, shape (4, 4)."""
        return np.array([leg.home for leg in self.legs])

    @cached_property
    def home_tips_body(self) -> np.ndarray:
        """Tip positions in the body frame at home, shape (4, 3)."""
        return np.array([self.tip_body(i, self.home[i]) for i in range(N_LEGS)])

    @property
    def stance_height(self) -> float:
        """Body height above the tips' support plane at home."""
        return float(-self.home_tips_body[:, 2].mean() + self.cfg.track.sprocket_radius_m)

    @property
    def tip_radius(self) -> float:
        return self.cfg.track.sprocket_radius_m

    def tip_body(self, leg: int, q) -> np.ndarray:
        return self.mount_R[leg] @ kin.tip_position(self.legs[leg], q) + self.mount_p[leg]

    def tip_world(self, leg: int, q, pose) -> np.ndarray:
        x, z, pitch = pose
        return rot_pitch(pitch) @ self.tip_body(leg, q) + np.array([x, 0.0, z])

    def world_to_shoulder(self, leg: int, p_world, pose) -> np.ndarray:
        x, z, pitch = pose
        p_body = rot_pitch(pitch).T @ (np.asarray(p_world, dtype=float) - np.array([x, 0.0, z]))
        return self.mount_R[leg].T @ (p_body - self.mount_p[leg])

    def world_R_shoulder(self, leg: int, pitch: float) -> np.ndarray:
        return rot_pitch(pitch) @ self.mount_R[leg]

    def leg_ik(self, leg: int, p_world, pose, seed) -> np.ndarray:
        return kin.solve_ik(self.legs[leg], self.world_to_shoulder(leg, p_world, pose), seed)

    def link_coms_shoulder(self, leg: int, q) -> np.ndarray:
        """Link centres of mass (midpoints of consecutive frame origins), shape (4, 3)."""
        o = kin.frame_origins(self.legs[leg], q)
        return 0.5 * (o[:-1] + o[1:])

    def com_world(self, q_all, pose) -> np.ndarray:
        x, z, pitch = pose
        R = rot_pitch(pitch)
        acc = np.zeros(3)
        for i in range(N_LEGS):
            c = self.link_coms_shoulder(i, q_all[i])
            acc += self.link_mass @ (self.mount_R[i] @ c.T + self.mount_p[i][:, None]).T
        com_body = acc / self.total_mass  # body mass sits at the body origin
        return R @ com_body + np.array([x, 0.0, z])

    def leg_jacobians(self, leg: int, q):
        """Tip Jacobian and mass-weighted link COM Jacobian, both in the shoulder frame."""
        chain = self.legs[leg]
        T = np.eye(4)
        axes, origins = [], []
        for lk, th in zip(chain.links, q):
            axes.append(T[:3, 2].copy())
            origins.append(T[:3, 3].copy())
            T = T @ kin.link_transform(lk, th)
        origins.append(T[:3, 3].copy())
        tip = origins[-1]
        J = np.empty((3, 4))
        G = np.zeros((3, 4))
        for j in range(4):
            J[:, j] = np.cross(axes[j], tip - origins[j])
        for k in range(4):
            if self.link_mass[k] == 0.0:
                continue
            c = 0.5 * (origins[k] + origins[k + 1])
            for j in range(k + 1):
                G[:, j] += self.link_mass[k] * np.cross(axes[j], c - origins[j])
        return J, G

    def leg_batch(self, leg: int, Q: np.ndarray):
        """Vectorized kinematics for joint samples ``Q`` of shape (n, 4).

        Returns tips (n, 3), link COMs (n, 4, 3), tip Jacobian J (n, 3, 4) and
        mass-weighted COM Jacobian G (n, 3, 4), all in the shoulder frame.
        """
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = len(Q)
        T = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
        axes = np.empty((n, 4, 3))
        origins = np.empty((n, 5, 3))
        for j, lk in enumerate(self.legs[leg].links):
            axes[:, j] = T[:, :3, 2]
            origins[:, j] = T[:, :3, 3]
            ct, st = np.cos(Q[:, j]), np.sin(Q[:, j])
            ca, sa = math.cos(lk.alpha), math.sin(lk.alpha)
            A = np.zeros((n, 4, 4))
            A[:, 0, 0], A[:, 0, 1], A[:, 0, 2], A[:, 0, 3] = ct, -st * ca, st * sa, lk.a * ct
            A[:, 1, 0], A[:, 1, 1], A[:, 1, 2], A[:, 1, 3] = st, ct * ca, -ct * sa, lk.a * st
            A[:, 2, 1], A[:, 2, 2], A[:, 2, 3] = sa, ca, lk.b
            A[:, 3, 3] = 1.0
            T = T @ A
        origins[:, 4] = T[:, :3, 3]
        tip = origins[:, 4]
        coms = 0.5 * (origins[:, :-1] + origins[:, 1:])
        J = np.empty((n, 3, 4))
        G = np.zeros((n, 3, 4))
        for j in range(4):
            J[:, :, j] = np.cross(axes[:, j], tip - origins[:, j])
            for k in range(j, 4):
                if self.link_mass[k]:
                    G[:, :, j] += self.link_mass[k] * np.cross(axes[:, j], coms[:, k] - origins[:, j])
        return tip, coms, J, G

    def home_pose(self, front_tip_x: float, ground_z: float = 0.0) -> tuple:
        """Level body pose at home posture with the front tips at ``front_tip_x``."""
        tips = self.home_tips_body
        x = front_tip_x - tips[0, 0]
        z = ground_z + self.tip_radius - tips[:, 2].mean()
        return (x, z, 0.0)
