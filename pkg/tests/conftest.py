import numpy as np
import pytest

from ramanchd import ModeSpace, SystemParams, build_liouvillian, steady_state


@pytest.fixture
def small_params():
    """Moderate pump at a detuning where every moment is well away from zero."""
    return SystemParams(delta=0.03, omega_pump=0.1)


@pytest.fixture
def small_system(small_params):
    space = ModeSpace.for_system(5, 4)
    L = build_liouvillian(small_params, space)
    return small_params, L, steady_state(L)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
