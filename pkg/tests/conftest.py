import logging

import pytest

import acceptance_log

logging.getLogger("unitcell_dg").setLevel(logging.ERROR)


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def record():
    return acceptance_log.record
