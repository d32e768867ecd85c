"""Collects one PASS/FAIL/SKIP line per acceptance criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and label")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.skipped:
        status = "SKIP"
    elif rep.failed:
        status = "FAIL"
    elif rep.when == "call":
        status = "PASS"
    else:
        return
    if _RESULTS.get(n, ("PASS",))[0] == "PASS" or status == "FAIL":
        _RESULTS[n] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, text = _RESULTS[n]
        terminalreporter.write_line(f"{status} criterion {n}: {text}")
