"""Collects acceptance verdicts recorded with ``record_property`` and prints them at the end of the run."""

_VERDICTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "acceptance":
            _VERDICTS.append((report.nodeid, value))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS, key=lambda v: int(v[1].split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
