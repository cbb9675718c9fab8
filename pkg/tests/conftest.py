import time

import numpy as np
import pytest

from trackleg import ctrl, gait, model
from trackleg.model import Robot

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}
ACCEPTANCE_TITLES = {
    1: "kinematics exactness",
    2: "IK round-trip",
    3: "Jacobian vs finite differences",
    4: "quintic properties",
    5: "energy model",
    6: "statics",
    7: "decision-oracle equivalence",
    8: "case-study outcomes",
    9: "prestudy ordering",
    10: "gait safety",
    11: "determinism",
}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        ok, detail = ACCEPTANCE.get(n, (False, "not run or errored"))
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def robot() -> Robot:
    return Robot(model.reference_model())


@pytest.fixture(scope="session")
def h(robot) -> float:
    return robot.cfg.track.track_height_h_m


@pytest.fixture(scope="session")
def prestudy_run(robot, h):
    details = []
    t0 = time.perf_counter()
    table = ctrl.prestudy(robot, [h, 2 * h, 3 * h], details=details)
    return table, details, time.perf_counter() - t0


@pytest.fixture(scope="session")
def table(prestudy_run) -> ctrl.ThresholdTable:
    return prestudy_run[0]


@pytest.fixture(scope="session")
def sweep(robot, h, table):
    """Hybrid and rolling-only runs at h..4h plus the wall time of the whole sweep."""
    t0 = time.perf_counter()
    out = {}
    for k in (1, 2, 3, 4):
        sc = gait.StepScenario.multiple(k, robot)
        base = ctrl.run_negotiation(sc, robot, baseline=True)
        try:
            res = ctrl.run_negotiation(sc, robot, table)
        except ctrl.TableRangeError:
            res = None
        out[k] = (res, base)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def standard_gaits(robot):
    """Executed standard-entry plans of both gaits at the three table heights."""
    out = {}
    for k in (1, 2, 3):
        sc = gait.StepScenario.multiple(k, robot)
        for kind, planner in ((gait.WHOLE_BODY, gait.plan_whole_body_climb),
                              (gait.REAR_BODY, gait.plan_rear_body_climb)):
            plan = planner(sc, robot)
            out[k, kind] = (plan, gait.execute_gait(plan, robot))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
