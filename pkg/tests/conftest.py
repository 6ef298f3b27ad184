import numpy as np
import pytest

from safexplore.sim import load_scenario


@pytest.fixture(scope="session")
def car():
    return load_scenario("car_partially_unknown")


@pytest.fixture(scope="session")
def toy():
    return load_scenario("counterexample.toy")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance tests append "criterion N: PASS|FAIL ..." lines here
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
