import numpy as np
import pytest

from jacsketch.problem import FiniteSumProblem


def random_ridge(n, d, lam=0.1, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, n))
    y = rng.standard_normal(n)
    return FiniteSumProblem(A, y, lam, "ridge")


def random_logistic(n, d, lam=0.1, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, n))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return FiniteSumProblem(A, y, lam, "logistic")


@pytest.fixture
def ridge_small():
    return random_ridge(6, 3, lam=0.2, seed=11)


@pytest.fixture
def logistic_small():
    return random_logistic(8, 3, lam=0.05, seed=5)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
