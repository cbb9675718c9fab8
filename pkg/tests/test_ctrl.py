import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackleg import ctrl, dyn, gait
from trackleg.ctrl import Mode


def _mode(label: str) -> Mode:
    return Mode(label.split("(")[0])


def _active(dt=0.002):
    s = ctrl.initial_state(dt)
    return replace(s, ledger=replace(s.ledger, active=True))


# --- thresholds and table -------------------------------------------------------

def test_threshold_invariants():
    with pytest.raises(ValueError):
        ctrl.Thresholds(0.0, 0.0)
    with pytest.raises(ValueError):
        ctrl.Thresholds(1.0, 2.0)
    inf = ctrl.Thresholds.infinite(0.1)
    assert math.isinf(inf.T_wb) and math.isinf(inf.T_rb)


TABLE = ctrl.ThresholdTable.from_rows([(0.16, 20.0, 8.0), (0.08, 10.0, 4.0), (0.24, 40.0, 9.0)])


def test_table_lookup_exact_and_interpolated():
    assert TABLE.heights == (0.08, 0.16, 0.24)
    t = ctrl.lookup_thresholds(TABLE, 0.16)
    assert (t.T_wb, t.T_rb) == (20.0, 8.0)
    t = ctrl.lookup_thresholds(TABLE, 0.12)
    assert (t.T_wb, t.T_rb) == pytest.approx((15.0, 6.0))
    t = ctrl.lookup_thresholds(TABLE, 0.2)
    assert (t.T_wb, t.T_rb) == pytest.approx((30.0, 8.5))
    for s in (0.079, 0.241, 0.32):
        with pytest.raises(ctrl.TableRangeError):
            ctrl.lookup_thresholds(TABLE, s)


rows = st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(1.0, 1e4), st.floats(0.01, 1.0)),
                min_size=1, max_size=8, unique_by=lambda r: r[0])


@settings(max_examples=100, deadline=None)
@given(rows)
def test_table_text_round_trip(rs):
    table = ctrl.ThresholdTable.from_rows([(h, w, w * f) for h, w, f in rs])
    again = ctrl.ThresholdTable.from_text(table.to_text())
    assert again == table
    assert again.to_text() == table.to_text()


@settings(max_examples=100, deadline=None)
@given(st.floats(0.08, 0.24))
def test_lookup_stays_between_neighbours(s):
    t = ctrl.lookup_thresholds(TABLE, s)
    assert 10.0 <= t.T_wb <= 40.0
    assert 0 < t.T_rb <= t.T_wb


def test_table_format_errors(tmp_path):
    for text in ("", "h,w,r\n0.1,2,1\n", "height_m,E_Cw_J,E_Cr_J\n", "height_m,E_Cw_J,E_Cr_J\n0.1,2\n",
                 "height_m,E_Cw_J,E_Cr_J\n0.1,x,1\n", "height_m,E_Cw_J,E_Cr_J\n0.2,2,1\n0.1,2,1\n",
                 "height_m,E_Cw_J,E_Cr_J\n0.1,1,2\n"):
        with pytest.raises(ctrl.TableFormatError):
            ctrl.ThresholdTable.from_text(text)
    p = tmp_path / "t.csv"
    TABLE.save(p)
    assert b"\r" not in p.read_bytes()
    assert ctrl.ThresholdTable.load(p) == TABLE


# --- decision rule ----------------------------------------------------------------

def test_tie_goes_to_whole_body():
    st_ = ctrl.decision_step(_active(), ctrl.Thresholds(1.0, 0.5), (2.0, 1.0))
    assert st_.mode is Mode.PREPARING and st_.gait_kind == gait.WHOLE_BODY


def test_crossing_is_strict():
    thr = ctrl.Thresholds(1.0, 0.5)
    st_ = ctrl.decision_step(_active(), thr, (1.0, 0.5))
    assert st_.mode is Mode.ROLLING
    st_ = ctrl.decision_step(st_, thr, (0.0, 1e-12))
    assert st_.mode is Mode.PREPARING and st_.gait_kind == gait.REAR_BODY


def test_inactive_ledger_and_resumed_never_trigger():
    thr = ctrl.Thresholds(1.0, 0.5)
    st_ = ctrl.decision_step(ctrl.initial_state(0.002), thr, (5.0, 5.0))
    assert st_.mode is Mode.ROLLING and st_.ledger.E_RW == 0.0 and st_.ledger.E_total == 5.0
    resumed = replace(_active(), mode=Mode.RESUMED)
    st_ = ctrl.decision_step(resumed, thr, (5.0, 5.0))
    assert st_.mode is Mode.RESUMED and st_.ledger.E_RW == 5.0


def test_decision_step_precondition_and_graph():
    with pytest.raises(ctrl.ControllerError):
        ctrl.decision_step(replace(_active(), mode=Mode.WALKING), ctrl.Thresholds(1.0, 1.0), (0.0, 0.0))
    with pytest.raises(ctrl.ControllerError):
        _active().to(Mode.WALKING)
    assert ctrl.allowed(Mode.RESUMED, Mode.COMPLETED)
    assert not ctrl.allowed(Mode.RESUMED, Mode.PREPARING)
    assert all(ctrl.allowed(m, Mode.FAILED) for m in Mode if m not in (Mode.COMPLETED, Mode.FAILED))


traces = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60)


@settings(max_examples=500, deadline=None)
@given(traces, st.integers(1, 80), st.integers(1, 80))
def test_decision_matches_first_crossing(incs, a, b):
    dr = [r / 4 for r, _ in incs]
    dw = [r / 4 + w / 4 for r, w in incs]
    T_wb, T_rb = max(a, b) / 4, min(a, b) / 4
    thr = ctrl.Thresholds(T_wb, T_rb)
    s = _active()
    got = None
    for k, sample in enumerate(zip(dw, dr)):
        s = ctrl.decision_step(s, thr, sample)
        if s.mode is Mode.PREPARING:
            got = (k, s.gait_kind)
            break
    assert got == ctrl.first_crossing(dw, dr, T_wb, T_rb)


# --- negotiation runs -------------------------------------------------------------

def test_timelines_are_paths_in_the_mode_graph(sweep):
    for res, base in sweep[0].values():
        for r in (res, base):
            if r is None:
                continue
            modes = [_mode(lab) for lab, _, _ in r.timeline]
            assert modes[0] is Mode.ROLLING
            assert all(ctrl.allowed(a, b) for a, b in zip(modes, modes[1:]))
            walks = [lab for lab in modes if lab is Mode.WALKING]
            assert len(walks) == r.transitions
            # the first and last tick of consecutive segments are adjacent
            assert all(s1[2] + 1 == s2[1] for s1, s2 in zip(r.timeline, r.timeline[1:]))
            if r.transitions:
                assert modes[-1] is Mode.RESUMED and Mode.WALKING in modes


def test_transition_iff_threshold_exceeded(sweep):
    for res, _ in sweep[0].values():
        if res is None:
            continue
        thr = res.thresholds
        crossed = (res.E_RW > thr.T_wb) | (res.E_Rr > thr.T_rb)
        if res.transition_tick is None:
            assert not crossed.any()
        else:
            k = res.transition_tick - 1
            assert crossed[k] and not crossed[:k].any()


def test_rolling_rows_advance_by_dt(sweep, robot):
    res, _ = sweep[0][2]
    np.testing.assert_allclose(np.diff(res.t), robot.cfg.dt_s, rtol=1e-9)
    assert res.completed and res.total_time == pytest.approx(len(res.t) * res.dt)


def test_ledgers_start_at_front_contact(sweep, robot, h):
    res, _ = sweep[0][1]
    model = dyn.RollingModel(robot, h)
    first = int(np.argmax(res.E_RW > 0))
    assert res.rear_x[first] >= model.front_contact_rear_x() - 1e-12
    assert np.all(res.rear_x[:first] < model.front_contact_rear_x())
    assert res.E_total[first - 1] > 0.0


def test_run_is_deterministic(robot, h):
    sc = gait.StepScenario.multiple(1, robot)
    a = ctrl.run_negotiation(sc, robot, baseline=True)
    b = ctrl.run_negotiation(sc, robot, baseline=True)
    for name in ("E_RW", "E_Rr", "E_total", "power", "pose", "rear_x", "t"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.timeline == b.timeline and a.summary() == b.summary()


def test_uncovered_height_is_a_range_error(robot, table):
    with pytest.raises(ctrl.TableRangeError):
        ctrl.run_negotiation(gait.StepScenario.multiple(4, robot), robot, table)


def test_preparation_target(robot, h):
    m = dyn.RollingModel(robot, 2 * h)
    assert ctrl.preparation_target(m, 0.0, gait.REAR_BODY, 0.05) == pytest.approx(min(-0.05, m.rear_clear_x()))
    assert ctrl.preparation_target(m, 0.0, gait.WHOLE_BODY, 0.05) <= m.front_contact_rear_x()
    prep = ctrl.preparation_phase(m, m.rear_clear_x() + 0.05, gait.REAR_BODY, 0.1, 0.05)
    assert prep.displacement < 0 and np.all(np.diff(prep.xs) < 0)
    st_ = m.state(prep.end_x, direction=-1)
    assert not st_.rear_contact
    with pytest.raises(ctrl.ControllerError):
        ctrl.preparation_phase(m, -1.0, gait.WHOLE_BODY, 0.1, 0.05, limit_x=-1.0)


def test_prestudy_omits_unplannable_heights(robot, h):
    with pytest.raises(ValueError):
        ctrl.prestudy(robot, [])
    with pytest.warns(RuntimeWarning, match="omitted"):
        table = ctrl.prestudy(robot, [h, 6 * h])
    assert table.heights == (h,)
