import pytest

from singbsde import Domain, TimeGrid, brownian, simulate_paths

# pass/fail lines collected by the acceptance module, echoed at session end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def interval_bundle():
    """Small exit bundle on (0, 2) from x0 = 1."""
    return simulate_paths(brownian(1), [1.0], TimeGrid(4.0, 200), 4000, 3,
                          Domain.interval(0.0, 2.0), bridge_correction=True)


@pytest.fixture(scope="session")
def horizon_bundle():
    """Whole-space bundle: every path runs to t_max = 1."""
    return simulate_paths(brownian(1), [0.0], TimeGrid(1.0, 100), 500, 5, Domain.whole_space(1))
