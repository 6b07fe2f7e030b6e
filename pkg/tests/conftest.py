"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

import pytest

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _RESULTS.append((number, "PASS" if rep.passed else "FAIL", title, detail, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail, secs in sorted(_RESULTS, key=lambda r: r[0]):
        line = f"{status} criterion {number}: {title} ({secs:.1f}s)"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
