"""Shared pytest plumbing: the acceptance suite registers one summary
line per criterion and the lines are echoed after the run, uncaptured."""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance summary")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
