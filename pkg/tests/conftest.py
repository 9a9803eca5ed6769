"""Shared pytest setup: collects the acceptance verdicts for the terminal summary."""
import pytest

VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)``; printed once per criterion at the end."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        VERDICTS[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
