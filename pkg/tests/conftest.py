"""Shared pytest hooks: collect acceptance-criterion outcomes for the summary."""

ACCEPTANCE_RESULTS = []


def record_criterion(number, name, passed=True):
    ACCEPTANCE_RESULTS.append((number, name, passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, name, passed in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} [{status}] {name}")
