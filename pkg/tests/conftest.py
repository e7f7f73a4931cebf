"""Terminal summary: one PASS/FAIL line per acceptance criterion."""

from __future__ import annotations

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_(criterion_\d+)_(\w+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1).split("_")[1])
    title = match.group(2).replace("_", " ")
    if report.when == "call":
        _outcomes[number] = (report.outcome.upper(), title)
    elif report.failed:  # setup/teardown error
        _outcomes[number] = ("FAILED", title)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_outcomes):
        outcome, title = _outcomes[number]
        word = {"PASSED": "PASS", "FAILED": "FAIL"}.get(outcome, outcome)
        terminalreporter.write_line(f"criterion {number}: {word} - {title}")
