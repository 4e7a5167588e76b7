import logging

import pytest

from emorsi import RunConfig, run, write_trace

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def short_trace(tmp_path_factory):
    """A 400-step default-config trace shared by the fast tests."""
    logger = logging.getLogger("emorsi")
    level = logger.level
    logger.setLevel(logging.ERROR)
    res = run(RunConfig(steps=400))
    logger.setLevel(level)
    path = tmp_path_factory.mktemp("short") / "trace.csv"
    write_trace(res, path)
    return res, path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
