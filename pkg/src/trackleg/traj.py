"""Fifth-order joint trajectories from position/velocity/acceleration boundary values."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_PHASE_DURATION = 0.1
# peak |q''| of the 10-15-6 profile is PEAK_ACCEL_FACTOR * |delta| / T**2
PEAK_ACCEL_FACTOR = 10.0 / math.sqrt(3.0)


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryConstraints:
    q0: float
    qf: float
    v0: float = 0.0
    vf: float = 0.0
    a0: float = 0.0
    af: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.q0, self.qf, self.v0, self.vf, self.a0, self.af)):
            raise TrajectoryError("boundary values must be finite")


@dataclass(frozen=True)
class QuinticSegment:
    coeffs: tuple[float, float, float, float, float, float]
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise TrajectoryError("segment duration must be positive")

    def __call__(self, t):
        return sample(self, t)


def fit_quintic(bc: BoundaryConstraints, T: float) -> QuinticSegment:
    """Solve the 6x6 boundary system for c0..c5."""
    if not (math.isfinite(T) and T > 0):
        raise TrajectoryError(f"duration must be > 0, got {T}")
    c0, c1, c2 = bc.q0, bc.v0, bc.a0 / 2.0
    T2, T3 = T * T, T ** 3
    A = np.array([
        [T3, T3 * T, T3 * T2],
        [3 * T2, 4 * T3, 5 * T3 * T],
        [6 * T, 12 * T2, 20 * T3],
    ])
    rhs = np.array([
        bc.qf - (c0 + c1 * T + c2 * T2),
        bc.vf - (c1 + 2 * c2 * T),
        bc.af - 2 * c2,
    ])
    c3, c4, c5 = np.linalg.solve(A, rhs)
    return QuinticSegment((float(c0), float(c1), float(c2), float(c3), float(c4), float(c5)), float(T))


def rest_to_rest(q0: float, qf: float, T: float) -> QuinticSegment:
    return fit_quintic(BoundaryConstraints(q0, qf), T)


def sample(seg: QuinticSegment, t):
    """(q, qd, qdd) at time ``t``, scalar or array."""
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0.0) or np.any(ta > seg.T * (1 + 1e-12)):
        raise TrajectoryError(f"t outside [0, {seg.T}]")
    c0, c1, c2, c3, c4, c5 = seg.coeffs
    q = c0 + ta * (c1 + ta * (c2 + ta * (c3 + ta * (c4 + ta * c5))))
    qd = c1 + ta * (2 * c2 + ta * (3 * c3 + ta * (4 * c4 + ta * 5 * c5)))
    qdd = 2 * c2 + ta * (6 * c3 + ta * (12 * c4 + ta * 20 * c5))
    if ta.ndim == 0:
        return float(q), float(qd), float(qdd)
    return q, qd, qdd


def duration_for_peak_accel(delta: float, a_peak: float, min_duration: float = MIN_PHASE_DURATION) -> float:
    """Duration of a rest-to-rest quintic over ``delta`` whose peak |q''| is ``a_peak``."""
    if not a_peak > 0:
        raise TrajectoryError("a_peak must be positive")
    if delta == 0:
        return min_duration
    return math.sqrt(PEAK_ACCEL_FACTOR * abs(delta) / a_peak)


def synchronized_duration(deltas, a_peak: float, min_duration: float = MIN_PHASE_DURATION) -> float:
    """Slowest joint's duration, never shorter than ``min_duration``."""
    T = max((duration_for_peak_accel(d, a_peak, min_duration) for d in deltas), default=min_duration)
    return max(T, min_duration)


def time_scaling(T: float, t):
    """Normalized 10-15-6 progress s(t) in [0, 1] and its rate."""
    u = np.clip(np.asarray(t, dtype=float) / T, 0.0, 1.0)
    s = u ** 3 * (10 - 15 * u + 6 * u * u)
    sd = 30 * u ** 2 * (1 - u) ** 2 / T
    return s, sd
