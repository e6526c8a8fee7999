import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (summary, worst status so far, detail lines)
_CRITERIA: dict[int, list] = {}
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, summary): acceptance criterion verified by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.outcome != "passed"):
        return
    number, summary = mark.args
    status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
    entry = _CRITERIA.setdefault(number, [summary, "PASS", []])
    if _RANK[status] > _RANK[entry[1]]:
        entry[1] = status
    entry[2].extend(str(v) for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        summary, status, details = _CRITERIA[number]
        suffix = f"  [{'; '.join(details)}]" if details else ""
        terminalreporter.write_line(f"{status} criterion {number}: {summary}{suffix}")
