"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary.

Tests tagged ``@pytest.mark.criterion(n)`` contribute to criterion n; a
criterion passes only if every contributing test passes.  Tests may add
measured values with ``record_property("detail", text)``.
"""

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    entry = _RESULTS.setdefault(mark.args[0], {"ok": True, "details": [], "failed": []})
    if rep.failed:
        entry["ok"] = False
        entry["failed"].append(item.name)
    if rep.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        line = f"criterion {n:2d}: {'PASS' if e['ok'] else 'FAIL'}"
        if e["details"]:
            line += "  " + "; ".join(e["details"])
        if e["failed"]:
            line += "  [failed: " + ", ".join(e["failed"]) + "]"
        terminalreporter.write_line(line)
