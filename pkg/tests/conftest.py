import functools
import time

import numpy as np
import pytest

from avoidmpc import LinearModel, OcpTemplate, Polytope
from avoidmpc.scenarios import build_scenario, run
from avoidmpc.terminal import invariant_set_ingredients, terminal_equality_ingredients


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", help="run the long closed-loop tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def double_integrator() -> LinearModel:
    return LinearModel([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]], [[1.0, 0.0]])


def di_box() -> Polytope:
    return Polytope.box([-5, -5, -1], [5, 5, 1])


def di_template(N=5, mode="invariant_set", kappa=10.0) -> OcpTemplate:
    m = double_integrator()
    Z = di_box()
    Q, R = np.eye(2), np.eye(1)
    if mode == "invariant_set":
        term = invariant_set_ingredients(m, Q, R, Z, 0.99)
    else:
        term = terminal_equality_ingredients(m, Z, 0.99, N, Q, R)
    return OcpTemplate(m, N, Q, R, term, Z, np.array([[kappa]]))


@functools.lru_cache(maxsize=None)
def cached_run(name):
    """Closed-loop run of a shipped scenario and its wall time, shared between tests."""
    t0 = time.perf_counter()
    res = run(build_scenario(name))
    return res, time.perf_counter() - t0


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """``acceptance(k, ok, detail)`` records the verdict line for criterion ``k``."""
    def record(k, ok, detail):
        ACCEPTANCE_LINES[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[k])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def di_tpl():
    return di_template()
