def pytest_terminal_summary(terminalreporter, config):
    from test_acceptance import REPORT_KEY

    lines = config.stash.get(REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
