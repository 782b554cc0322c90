import numpy as np
import pytest

from pssmp.levy import JumpSpec, LevyTriplet, NegExponential, bessel_triplet


@pytest.fixture
def besq1():
    return bessel_triplet(1.0)


@pytest.fixture
def jumpy():
    """sigma = 1, exponential(2) jumps at rate 1, killed at rate 0.3."""
    return LevyTriplet(0.0, 1.0, JumpSpec(((1.0, NegExponential(2.0)),)), 0.3, 1.0)


@pytest.fixture
def descent():
    return LevyTriplet(-1.0, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion."""
    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
