"""Shared pytest plumbing.

The acceptance tests record one summary line per criterion; the terminal
summary hook reprints them after the run so the pass/fail table is visible
even when pytest captures stdout.
"""

_ACCEPTANCE_LINES = []


def record_acceptance_line(line: str):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
