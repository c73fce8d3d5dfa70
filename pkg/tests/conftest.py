import pytest

from sidebandsim.presets import paper_defaults

ACCEPTANCE_LINES = []


@pytest.fixture
def reference():
    return paper_defaults()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
