import numpy as np
import pytest

from sheetforce.costs import ObjectiveSpec
from sheetforce.currents import CurrentPotential
from sheetforce.geometry import circular_torus, evaluate_grid
from sheetforce.problems import bundled_problem

R0, A0 = 1.0, 0.3


@pytest.fixture(scope="session")
def torus():
    return circular_torus(R0, A0)


@pytest.fixture(scope="session")
def torus16(torus):
    return evaluate_grid(torus, 16, 16)


@pytest.fixture(scope="session")
def torus32(torus):
    return evaluate_grid(torus, 32, 32)


@pytest.fixture(scope="session")
def torus64(torus):
    return evaluate_grid(torus, 64, 64)


@pytest.fixture(scope="session")
def problem():
    return bundled_problem()


@pytest.fixture(scope="session")
def small_problem():
    return bundled_problem(16, 16, N=2)


def random_potential(N, G=1e6, I=2e5, scale=2e4, seed=0):
    rng = np.random.default_rng(seed)
    pot = CurrentPotential.zeros(N, G, I)
    return pot.with_coefficients(scale * rng.normal(size=pot.n_dof))


REFERENCE_SPECS = {
    "case1": ObjectiveSpec(lambda1=1.5e-16),
    "case2": ObjectiveSpec(gamma=1e-17, force_metric="L2"),
    "case3": ObjectiveSpec(gamma=1e-16, force_metric="Ce"),
    "case4": ObjectiveSpec(lambda1=1e-19, lambda2=1e-19, gamma=1e-16, force_metric="Ce"),
}


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record (and print) one pass/fail line for an acceptance criterion."""

    def emit(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
