"""Shared pytest plumbing: collects acceptance-criterion result lines and
reprints them after the run so they are visible without -s."""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
