import pytest

from dgff_extremes.green import default_table
from dgff_extremes.rng import RngSpec

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def table():
    return default_table(3)


@pytest.fixture
def rng():
    return RngSpec(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
