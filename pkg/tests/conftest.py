"""Shared pytest hooks: print one verdict line per acceptance criterion."""
import re

_verdicts = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m is None:
        return
    num = int(m.group(1))
    if report.when == "call" or report.outcome == "failed":
        _verdicts[num] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_verdicts):
        word = {"passed": "PASS", "failed": "FAIL"}.get(_verdicts[num], _verdicts[num].upper())
        terminalreporter.write_line(f"[criterion {num:02d}] {word}")
