"""Energy-threshold mode switching between rolling and walking over a single step.

The controller rolls in the home posture while metering two energy ledgers
from the moment the front tracks touch the step: the whole robot (E_RW) and
the rear legs plus rear tracks (E_Rr).  Each tick the ledgers are compared
with thresholds taken from a pre-studied table of climbing-gait energies.
A crossing triggers a short backward roll followed by one full climbing
gait, after which the robot rolls on until the rear tracks are on top.
"""
from __future__ import annotations

import bisect
import enum
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dyn, gait
from .gait import REAR_BODY, WHOLE_BODY, RobotState, StepScenario
from .model import REAR_LEGS, REAR_SUBSET, Robot

log = logging.getLogger(__name__)

TABLE_HEADER = ("height_m", "E_Cw_J", "E_Cr_J")
MAX_SIM_TIME_S = 600.0
_REAR = np.array(REAR_SUBSET)


class ControllerError(RuntimeError):
    pass


class TableRangeError(LookupError):
    """Requested step height is not covered by the threshold table."""


class TableFormatError(ValueError):
    pass


# --- thresholds ---------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    T_wb: float
    T_rb: float
    step_height: float = math.nan

    def __post_init__(self):
        if not (self.T_wb > 0 and self.T_rb > 0):
            raise ValueError("thresholds must be positive")
        if not self.T_rb <= self.T_wb:
            raise ValueError(f"T_rb ({self.T_rb}) exceeds T_wb ({self.T_wb})")

    @classmethod
    def infinite(cls, step_height: float = math.nan) -> "Thresholds":
        """Rolling-only baseline: no ledger ever crosses."""
        return cls(math.inf, math.inf, step_height)


@dataclass(frozen=True)
class ThresholdTable:
    """Pre-studied (height, E_Cw, E_Cr) rows, linearly interpolated, never extrapolated."""
    heights: tuple
    E_Cw: tuple
    E_Cr: tuple

    def __post_init__(self):
        n = len(self.heights)
        if n == 0 or len(self.E_Cw) != n or len(self.E_Cr) != n:
            raise TableFormatError("table needs at least one row and equal column lengths")
        for a, b in zip(self.heights, self.heights[1:]):
            if not b > a:
                raise TableFormatError("heights must be strictly increasing")
        for h, w, r in zip(self.heights, self.E_Cw, self.E_Cr):
            if not (math.isfinite(h) and h > 0):
                raise TableFormatError(f"bad height {h!r}")
            if not (math.isfinite(w) and math.isfinite(r) and 0 < r <= w):
                raise TableFormatError(f"row {h}: need 0 < E_Cr <= E_Cw, got {r}, {w}")

    @classmethod
    def from_rows(cls, rows) -> "ThresholdTable":
        rows = sorted((float(h), float(w), float(r)) for h, w, r in rows)
        if not rows:
            raise TableFormatError("table needs at least one row")
        return cls(*(tuple(c) for c in zip(*rows)))

    @property
    def rows(self) -> list:
        return list(zip(self.heights, self.E_Cw, self.E_Cr))

    @property
    def range(self) -> tuple:
        return self.heights[0], self.heights[-1]

    def to_text(self) -> str:
        lines = [",".join(TABLE_HEADER)]
        lines += [f"{h!r},{w!r},{r!r}" for h, w, r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ThresholdTable":
        lines = [ln for ln in text.split("\n") if ln.strip()]
        if not lines or tuple(c.strip() for c in lines[0].split(",")) != TABLE_HEADER:
            raise TableFormatError(f"header must be {','.join(TABLE_HEADER)}")
        rows = []
        for k, ln in enumerate(lines[1:], start=2):
            cells = ln.split(",")
            if len(cells) != 3:
                raise TableFormatError(f"line {k}: expected 3 fields")
            try:
                rows.append(tuple(float(c) for c in cells))
            except ValueError:
                raise TableFormatError(f"line {k}: non-numeric field") from None
        if not rows:
            raise TableFormatError("table has no rows")
        heights = [r[0] for r in rows]
        if any(b <= a for a, b in zip(heights, heights[1:])):
            raise TableFormatError("heights must be strictly increasing")
        return cls(*(tuple(c) for c in zip(*rows)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def lookup_thresholds(table: ThresholdTable, step_height: float, tol: float = 1e-9) -> Thresholds:
    """Thresholds at a step height: exact row at a key, linear in between."""
    H = table.heights
    lo, hi = H[0], H[-1]
    if not (lo - tol <= step_height <= hi + tol):
        raise TableRangeError(f"step height {step_height:.4g} m outside table range [{lo:.4g}, {hi:.4g}] m")
    k = bisect.bisect_left(H, step_height - tol)
    if k < len(H) and abs(H[k] - step_height) <= tol:
        return Thresholds(table.E_Cw[k], table.E_Cr[k], step_height)
    a, b = k - 1, k
    u = (step_height - H[a]) / (H[b] - H[a])
    w = table.E_Cw[a] + u * (table.E_Cw[b] - table.E_Cw[a])
    r = table.E_Cr[a] + u * (table.E_Cr[b] - table.E_Cr[a])
    return Thresholds(w, min(r, w), step_height)


# --- controller state -----------------------------------------------------------

class Mode(enum.Enum):
    ROLLING = "rolling"
    PREPARING = "preparing-transition"
    WALKING = "walking-cycle"
    RESUMED = "rolling-resumed"
    COMPLETED = "completed"
    FAILED = "failed"


_EDGES = {
    Mode.ROLLING: {Mode.PREPARING, Mode.COMPLETED, Mode.FAILED},
    Mode.PREPARING: {Mode.WALKING, Mode.FAILED},
    Mode.WALKING: {Mode.RESUMED, Mode.FAILED},
    Mode.RESUMED: {Mode.COMPLETED, Mode.FAILED},
    Mode.COMPLETED: set(),
    Mode.FAILED: set(),
}


def allowed(a: Mode, b: Mode) -> bool:
    return a == b or b in _EDGES[a]


@dataclass(frozen=True)
class ControllerState:
    mode: Mode
    ledger: dyn.EnergyLedger
    gait_kind: str | None = None
    reason: str = ""

    @property
    def label(self) -> str:
        if self.mode in (Mode.PREPARING, Mode.WALKING):
            return f"{self.mode.value}({self.gait_kind})"
        if self.mode is Mode.FAILED:
            return f"failed({self.reason})"
        return self.mode.value

    def to(self, mode: Mode, **kw) -> "ControllerState":
        if not allowed(self.mode, mode):
            raise ControllerError(f"illegal transition {self.mode.value} -> {mode.value}")
        return replace(self, mode=mode, **kw)


def initial_state(dt: float) -> ControllerState:
    return ControllerState(Mode.ROLLING, dyn.EnergyLedger(dt))


def accumulate(ledger: dyn.EnergyLedger, sample) -> dyn.EnergyLedger:
    """New ledger with one tick's (whole, rear) energy increments added."""
    dw, dr = sample
    if not ledger.active:
        return replace(ledger, E_total=ledger.E_total + dw)
    return replace(ledger, E_RW=ledger.E_RW + dw, E_Rr=ledger.E_Rr + dr, E_total=ledger.E_total + dw)


def decision_step(state: ControllerState, thresholds: Thresholds, sample) -> ControllerState:
    """Meter one tick of rolling and apply the threshold rule.

    ``sample`` is the tick's (whole-robot, rear-body) energy increment in J.
    Whole-body wins a same-tick double crossing.  Thresholds are armed only
    in the first rolling segment.
    """
    if state.mode not in (Mode.ROLLING, Mode.RESUMED):
        raise ControllerError(f"decision_step called in mode {state.mode.value}")
    led = accumulate(state.ledger, sample)
    st = replace(state, ledger=led)
    if state.mode is Mode.RESUMED or not led.active:
        return st
    if led.E_RW > thresholds.T_wb:
        return st.to(Mode.PREPARING, gait_kind=WHOLE_BODY)
    if led.E_Rr > thresholds.T_rb:
        return st.to(Mode.PREPARING, gait_kind=REAR_BODY)
    return st


def first_crossing(dw, dr, T_wb: float, T_rb: float):
    """Brute-force reference: (tick, kind) of the first threshold crossing, or None."""
    E_w = E_r = 0.0
    for k, (a, b) in enumerate(zip(dw, dr)):
        E_w += a
        E_r += b
        if E_w > T_wb:
            return k, WHOLE_BODY
        if E_r > T_rb:
            return k, REAR_BODY
    return None


# --- recording ------------------------------------------------------------------

@dataclass
class _Recorder:
    dt: float
    thresholds: Thresholds
    tick: int = 0
    t: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    E_RW: list = field(default_factory=list)
    E_Rr: list = field(default_factory=list)
    E_total: list = field(default_factory=list)
    power: list = field(default_factory=list)
    pose: list = field(default_factory=list)
    rear_x: list = field(default_factory=list)

    def row(self, state: ControllerState, power: float, pose, rear_x: float) -> None:
        self.tick += 1
        self.t.append(self.tick * self.dt)
        self.mode.append(state.label)
        led = state.ledger
        self.E_RW.append(led.E_RW)
        self.E_Rr.append(led.E_Rr)
        self.E_total.append(led.E_total)
        self.power.append(power)
        self.pose.append(tuple(pose))
        self.rear_x.append(rear_x)


@dataclass(frozen=True)
class NegotiationResult:
    outcome: str                # completed-rolling | completed-hybrid | failed
    reason: str
    step_height: float
    thresholds: Thresholds
    timeline: tuple             # (label, first tick, last tick), ticks 1-based
    t: np.ndarray
    mode: tuple
    E_RW: np.ndarray
    E_Rr: np.ndarray
    E_total: np.ndarray
    power: np.ndarray
    pose: np.ndarray            # (n, 3)
    rear_x: np.ndarray
    transition_tick: int | None
    gait_kind: str | None
    dt: float

    @property
    def total_energy(self) -> float:
        return float(self.E_total[-1]) if len(self.E_total) else 0.0

    @property
    def total_time(self) -> float:
        return float(self.t[-1]) if len(self.t) else 0.0

    @property
    def transitions(self) -> int:
        return int(self.transition_tick is not None)

    @property
    def completed(self) -> bool:
        return self.outcome != "failed"

    def summary(self) -> str:
        tr = (f"transition at tick {self.transition_tick} (t={self.transition_tick * self.dt:.3f} s, "
              f"{self.gait_kind})" if self.transition_tick is not None else "no transition")
        head = self.outcome if self.outcome != "failed" else f"failed({self.reason})"
        return (f"{head}, {tr}, total energy {self.total_energy:.6g} J, "
                f"total time {self.total_time:.3f} s")


def _timeline(labels) -> tuple:
    out = []
    for k, lab in enumerate(labels, start=1):
        if out and out[-1][0] == lab:
            out[-1][2] = k
        else:
            out.append([lab, k, k])
    return tuple(tuple(x) for x in out)


# --- motion segments ------------------------------------------------------------

def _tick_energy(power_row: np.ndarray, dt: float) -> tuple[float, float]:
    return float(power_row.sum()) * dt, float(power_row[_REAR].sum()) * dt


@dataclass(frozen=True)
class PreparationPlan:
    """Backward roll before a gait: rear tip positions per tick and the entry state."""
    start_x: float
    end_x: float
    xs: np.ndarray
    gait_kind: str
    entry: RobotState

    @property
    def displacement(self) -> float:
        return self.end_x - self.start_x


def preparation_target(model: dyn.RollingModel, rear_x: float, kind: str, distance: float) -> float:
    """Rear tip position at the end of the backward roll.

    At least ``distance`` back, and further if needed so the tracks that the
    gait will lift are clear of the step: the rear tracks for the rear-body
    gait, the front tracks for the whole-body gait.
    """
    x = rear_x - distance
    x = min(x, model.rear_clear_x())
    if kind == WHOLE_BODY:
        x = min(x, model.front_contact_rear_x())
    return x


def preparation_phase(model: dyn.RollingModel, rear_x: float, kind: str, speed: float,
                      distance: float, limit_x: float = -math.inf) -> PreparationPlan:
    """Plan the backward roll from ``rear_x``; raises ControllerError if blocked."""
    end = preparation_target(model, rear_x, kind, distance)
    if end < limit_x - 1e-12:
        raise ControllerError(f"backward roll to {end:.4f} m blocked (ground ends at {limit_x:.4f} m)")
    dt = model.robot.cfg.dt_s
    xs = []
    x = rear_x
    while x > end:
        st = model.state(x, direction=-1)
        x = max(x - speed * dt * st.progress_rate_factor, end)
        xs.append(x)
    st = model.state(end, direction=-1)
    entry = RobotState(st.pose, model.robot.home, (True,) * 4)
    return PreparationPlan(rear_x, end, np.array(xs), kind, entry)


# --- negotiation ------------------------------------------------------------------

def run_negotiation(scenario: StepScenario, robot: Robot, table: ThresholdTable | None = None,
                    baseline: bool = False, max_time: float = MAX_SIM_TIME_S) -> NegotiationResult:
    """Simulate one step negotiation at the model time step.

    With ``baseline`` (or no table) both thresholds are infinite: rolling
    only.  Otherwise the table must cover the step height.
    """
    s = scenario.step_height
    if baseline or table is None:
        thr = Thresholds.infinite(s)
    else:
        thr = lookup_thresholds(table, s)
    dt = robot.cfg.dt_s
    g = robot.cfg.gait
    v = scenario.rolling_speed
    model = dyn.RollingModel(robot, s)
    rec = _Recorder(dt, thr)
    state = initial_state(dt)
    x0 = model.front_contact_rear_x() - scenario.approach_distance
    x = x0
    finish = g.finish_margin_m
    max_ticks = int(math.ceil(max_time / dt))
    transition_tick = None

    def fail(st, reason):
        return st.to(Mode.FAILED, reason=reason)

    def roll(st, x):
        """Roll forward until the step is done or the state leaves rolling."""
        while True:
            if x >= finish:
                return st.to(Mode.COMPLETED), x
            if rec.tick >= max_ticks:
                return fail(st, "timeout"), x
            rs = model.state(x)
            if not rs.feasible and (st.mode is Mode.RESUMED or math.isinf(thr.T_rb) and math.isinf(thr.T_wb)):
                return fail(st, "rolling-infeasible"), x
            if rs.front_contact and not st.ledger.active:
                st = replace(st, ledger=replace(st.ledger, active=True))
            p = model.power(rs, v)
            st = decision_step(st, thr, _tick_energy(p, dt))
            rec.row(st, float(p.sum()), rs.pose, x)
            x = x + v * dt * rs.progress_rate_factor
            if st.mode is Mode.PREPARING:
                return st, x

    state, x = roll(state, x)
    if state.mode is Mode.PREPARING:
        transition_tick = rec.tick
        kind = state.gait_kind
        if kind == REAR_BODY:
            # the rear-body gait needs the front tracks on the upper surface
            probe = model.state(preparation_target(model, x, kind, g.preparation_distance_m), direction=-1)
            if probe.front_x < 0.0:
                kind = WHOLE_BODY
                state = replace(state, gait_kind=kind)
        try:
            prep = preparation_phase(model, x, kind, v, g.preparation_distance_m, limit_x=x0)
        except ControllerError as e:
            state = fail(state, f"preparation-blocked: {e}")
            prep = None
        if prep is not None:
            for xk in prep.xs:
                rs = model.state(xk, direction=-1)
                p = model.power(rs, -v)
                state = replace(state, ledger=accumulate(state.ledger, _tick_energy(p, dt)))
                rec.row(state, float(p.sum()), rs.pose, xk)
            x = prep.end_x
            try:
                if kind == REAR_BODY:
                    plan = gait.plan_rear_body_climb(scenario, robot, entry=prep.entry)
                else:
                    plan = gait.plan_whole_body_climb(scenario, robot, entry=prep.entry)
                series = gait.execute_gait(plan, robot, prep.entry)
            except (gait.PlanningError, gait.ExecutionError) as e:
                state = fail(state, f"gait: {e}")
                series = None
            if series is not None and np.max(np.abs(series.final.q - robot.home)) > 1e-6:
                state = fail(state, "gait: cycle does not end in the rolling posture")
                series = None
            if series is not None:
                state = state.to(Mode.WALKING)
                for k in range(len(series)):
                    state = replace(state, ledger=accumulate(state.ledger, _tick_energy(series.power[k], dt)))
                    rx = float(series.tips[k, list(REAR_LEGS), 0].mean())
                    rec.row(state, float(series.power[k].sum()), series.pose[k], rx)
                x = float(series.final.tips(robot)[list(REAR_LEGS), 0].mean())
                state = state.to(Mode.RESUMED)
                state, x = roll(state, x)
    if state.mode is Mode.COMPLETED:
        outcome = "completed-hybrid" if transition_tick is not None else "completed-rolling"
    else:
        outcome = "failed"
        log.info("negotiation at %.4g m failed: %s", s, state.reason)
    return NegotiationResult(
        outcome, state.reason, s, thr, _timeline(rec.mode), np.array(rec.t), tuple(rec.mode),
        np.array(rec.E_RW), np.array(rec.E_Rr), np.array(rec.E_total), np.array(rec.power),
        np.array(rec.pose, dtype=float).reshape(-1, 3), np.array(rec.rear_x), transition_tick,
        state.gait_kind if transition_tick is not None else None, dt)


# --- prestudy ---------------------------------------------------------------------

@dataclass(frozen=True)
class PrestudyRow:
    step_height: float
    E_Cw: float
    E_Cr: float
    T_whole: float
    T_rear: float


def prestudy_row(robot: Robot, scenario: StepScenario) -> PrestudyRow:
    """Execute both gaits from the standard pre-step stance and meter them."""
    whole = gait.plan_whole_body_climb(scenario, robot)
    rear = gait.plan_rear_body_climb(scenario, robot)
    E_w = gait.execute_gait(whole, robot).energy()
    E_r = gait.execute_gait(rear, robot).energy()
    return PrestudyRow(scenario.step_height, E_w, E_r, whole.duration, rear.duration)


def prestudy(robot: Robot, heights, rolling_speed: float = 0.1, details: list | None = None) -> ThresholdTable:
    """Threshold table over ``heights``; unplannable heights are dropped with a warning."""
    hs = sorted({float(h) for h in heights})
    if not hs:
        raise ValueError("heights list is empty")
    rows = []
    for h in hs:
        sc = StepScenario(h, robot.cfg.track.track_height_h_m, rolling_speed=rolling_speed)
        try:
            row = prestudy_row(robot, sc)
        except (gait.PlanningError, gait.ExecutionError) as e:
            msg = f"step height {h:.4g} m omitted from the table: {e}"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            log.warning(msg)
            continue
        rows.append((h, row.E_Cw, row.E_Cr))
        if details is not None:
            details.append(row)
    if not rows:
        raise ValueError("no plannable height in the prestudy")
    return ThresholdTable.from_rows(rows)
