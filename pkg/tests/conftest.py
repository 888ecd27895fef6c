"""Collects the acceptance verdict lines and prints them after the run."""

_LINES = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    lines = [v for k, v in report.user_properties if k == "acceptance"]
    if lines:
        _LINES[report.nodeid] = lines[-1]
    elif report.failed and report.nodeid not in _LINES:
        _LINES[report.nodeid] = f"FAIL  {report.nodeid} (error before a verdict was reached)"


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES.values()):
        terminalreporter.write_line(line)
