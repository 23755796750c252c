import numpy as np
import pytest

from panelpomp import build_panel_gompertz


@pytest.fixture(scope="session")
def small_panel():
    return build_panel_gompertz(U=3, N=20, seed=11)


@pytest.fixture(scope="session")
def desk_panel():
    return build_panel_gompertz(U=10, N=50, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion and echo it."""
    def report(number, title, passed, detail=""):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
