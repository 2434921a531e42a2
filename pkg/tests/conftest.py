"""Collects the one-line verdicts of the acceptance suite and repeats them at the end of the run."""

import re

import pytest

_CRITERION = re.compile(r"test_criterion_(\d+)")
_details = {}
_outcomes = {}


@pytest.fixture
def verdict(request):
    """``verdict(text)`` attaches a measurement summary to the running criterion."""
    n = int(_CRITERION.search(request.node.name).group(1))

    def record(text):
        _details[n] = text
        print("criterion %d: %s" % (n, text))

    return record


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if match and (report.when == "call" or report.failed):
        _outcomes[int(match.group(1))] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, _outcomes[n], _details.get(n, "")))
