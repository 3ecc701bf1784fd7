import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.CRITERIA_LOG:
        terminalreporter.section("acceptance criteria")
        for line in helpers.CRITERIA_LOG:
            terminalreporter.write_line(line)
