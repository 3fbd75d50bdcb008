import pathlib

import pytest

SCRIPTS = pathlib.Path(__file__).parent / "scripts"


@pytest.fixture
def scripts_dir():
    return SCRIPTS


def pytest_terminal_summary(terminalreporter):
    import oracles

    if oracles.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in oracles.ACCEPTANCE:
            terminalreporter.write_line(line)
