from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[str, dict] = {}


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    entry = _CRITERIA.setdefault(marker[0], {"title": marker[1], "ok": True, "seen": False})
    if report.when == "call" or report.outcome != "passed":
        entry["seen"] = True
        entry["ok"] = entry["ok"] and report.outcome == "passed"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item: pytest.Item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter) -> None:
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c.lstrip("AC"))):
        e = _CRITERIA[cid]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"{status} {cid}: {e['title']}")
