import numpy as np
import pytest
from hypothesis import settings

from fastghz.optimizer import optimize_full

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

_OPTIMA = {}
_CRITERIA = []


@pytest.fixture(scope="session")
def optimum():
    """Memoized ``optimize_full(N, theta)`` shared by all test modules."""
    def get(n, theta):
        key = (n, float(theta))
        if key not in _OPTIMA:
            _OPTIMA[key] = optimize_full(n, theta)
        return _OPTIMA[key]
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record and print one pass/fail line for an acceptance criterion."""
    def report(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
