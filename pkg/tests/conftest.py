import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aptrepair.control import ControlProblem  # noqa: E402
from aptrepair.epidemic import ExpectedState, NodeParams, make_grid  # noqa: E402
from aptrepair.impact import CostFunctions  # noqa: E402
from aptrepair.scenario import Scenario  # noqa: E402
from aptrepair.topology import TopologySchedule, generate_small_world  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_problem(n=10, T=2.0, seed=3, step=0.01, U_n=800.0, n_segments=1):
    """Seeded small-world fixture with random impact coefficients."""
    rng = np.random.default_rng(seed)
    bounds = np.linspace(0.0, T, n_segments + 1)
    mats = [generate_small_world(n, 4, 0.1, seed + k) for k in range(n_segments)]
    sched = TopologySchedule.from_intervals(list(zip(bounds[:-1], bounds[1:])), mats)
    p = NodeParams.uniform(n, alpha=0.1, beta=0.1, delta=(0.1, 0.4), lam=(0.1, 0.6), gamma=(0.1, 0.5),
                           a1=1 - rng.random(n), a2=1 - rng.random(n), b=1 - rng.random(n))
    u = 1 - rng.random(n)
    u = u / u.sum() * 1000.0
    E0 = ExpectedState.uniform(n, 0.8, 0.1, 0.1)
    return ControlProblem(sched, p, CostFunctions(), E0, u, U_n, make_grid(sched, step))


@pytest.fixture
def n10_problem():
    return small_problem()


def small_scenario(n=10, T=2.0, seed=3, step=0.02, U_n=800.0, n_segments=2, **params):
    """The small fixture wrapped as a multi-slot scenario."""
    prob = small_problem(n, T, seed, step, U_n, n_segments)
    p = prob.params.with_(**params) if params else prob.params
    return Scenario("small", prob.schedule, p, prob.costs, prob.E0, prob.weights, U_n, grid_step=step, seed=seed)


_COMPARISONS: dict = {}


def preset_comparison(name, seed=7):
    """Seeded preset comparison, computed once per session with its wall time."""
    import time

    from aptrepair.config import ScenarioConfig, resolve
    from aptrepair.harness import compare

    key = (name, seed)
    if key not in _COMPARISONS:
        start = time.perf_counter()
        cmp = compare(resolve(ScenarioConfig.preset(name).with_overrides(seed=seed)))
        _COMPARISONS[key] = (cmp, time.perf_counter() - start)
    return _COMPARISONS[key]
