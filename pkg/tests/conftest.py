import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed = report.failed
    finished = report.when == "call" or (report.when == "setup" and report.outcome != "passed")
    if not finished:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "SKIP" if report.skipped else ("FAIL" if failed else "PASS")
    _RESULTS.append((number, title, status, detail, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail, duration in sorted(_RESULTS, key=lambda r: (r[0], r[1])):
        line = f"[{status}] criterion {number:>2}: {title} ({duration:.1f}s)"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)
