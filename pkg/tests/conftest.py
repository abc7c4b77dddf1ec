import math

import pytest
from hypothesis import HealthCheck, settings

from momentstein.measures import make_measure
from momentstein.moment_map import closed_form_map, solve_1d

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

SQRT3 = math.sqrt(3.0)

SPECS = {
    "gauss1": {"family": "gaussian", "dim": 1, "params": {"variance": 1.0}},
    "gauss025": {"family": "gaussian", "dim": 1, "params": {"variance": 0.25}},
    "gauss4": {"family": "gaussian", "dim": 1, "params": {"variance": 4.0}},
    "gauss144": {"family": "gaussian", "dim": 1, "params": {"variance": 1.44}},
    "unif": {"family": "uniform_box", "dim": 1, "params": {"lo": -1.0, "hi": 1.0}},
    "unif3": {"family": "uniform_box", "dim": 1, "params": {"lo": -SQRT3, "hi": SQRT3}},
    "expo": {"family": "exponential_centered", "dim": 1, "params": {}},
    "quartic": {"family": "quartic", "dim": 1, "params": {"alpha": 0.25}},
    "quartic12": {"family": "quartic", "dim": 1, "params": {"alpha": 1.0 / 12.0}},
}

# families with a known closed-form map
CLOSED = ("gauss1", "gauss025", "gauss4", "unif", "unif3", "expo")


@pytest.fixture(scope="session")
def measures():
    return {k: make_measure(v) for k, v in SPECS.items()}


class _Solved(dict):
    def __init__(self, measures):
        super().__init__()
        self._m = measures

    def __missing__(self, key):
        self[key] = solve_1d(self._m[key])
        return self[key]


@pytest.fixture(scope="session")
def grid_maps(measures):
    """Solver output per family, computed lazily once per session."""
    return _Solved(measures)


@pytest.fixture(scope="session")
def closed_maps(measures):
    return {k: closed_form_map(measures[k]) for k in CLOSED}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
