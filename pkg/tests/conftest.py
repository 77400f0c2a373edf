"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

from __future__ import annotations

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = mark.args
    entry = _RESULTS.setdefault(number, {"title": title, "status": "PASS", "details": []})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"
    for key, value in item.user_properties:
        if key == "detail":
            entry["details"].append(str(value))
    if rep.failed and not any(k == "detail" for k, _ in item.user_properties):
        entry["details"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"[{entry['status']}] criterion {number}: {entry['title']} ({detail})")


@pytest.fixture
def detail(record_property):
    """Attach a short measured summary to the acceptance line."""

    def _record(text: str) -> None:
        record_property("detail", text)

    return _record
