import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Shared sink for acceptance verdict lines, echoed after the run."""
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
