import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from biflab import family as fam

settings.register_profile(
    "biflab", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("biflab")


@pytest.fixture
def quad():
    return fam.quadratic()


@pytest.fixture
def skew():
    return fam.skew_quadratic()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


def record(criterion, ok, detail):
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
