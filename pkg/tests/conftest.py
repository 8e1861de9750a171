"""Shared fixtures: default benchmark problems and small fast variants."""

import pytest

from splitsgd.core import RngStream
from splitsgd.objectives import build_problem, make_default_spec

# One-line verdicts collected by the acceptance tests (see
# test_acceptance.py) and replayed at the end of the pytest run so they are
# visible even for passing tests.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def linear_problem():
    return build_problem(make_default_spec("linear"))


@pytest.fixture(scope="session")
def logistic_problem():
    return build_problem(make_default_spec("logistic"))


@pytest.fixture(scope="session")
def small_linear_problem():
    # 60 samples in 4 dims: big enough to be noisy, small enough that
    # multi-epoch runs cost microseconds.
    return build_problem(make_default_spec("linear", RngStream(11), n=60, d=4))


@pytest.fixture(scope="session")
def small_logistic_problem():
    return build_problem(make_default_spec("logistic", RngStream(12), n=60, d=4))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
