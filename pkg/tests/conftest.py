"""Shared test plumbing: the acceptance-verdict recorder.

The acceptance tests in test_acceptance.py each measure a margin and record a
one-line verdict.  Printing from inside a test gets swallowed by capture, so
the lines are replayed in the terminal summary where they are always visible.
"""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record a pass/fail line for one acceptance criterion, then assert it."""

    def record(num: int, passed: bool, detail: str) -> None:
        line = f"criterion {num:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
