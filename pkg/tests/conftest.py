import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number, title = marker.args
    measured = "; ".join(v for k, v in item.user_properties if k == "measured")
    _CRITERIA[number] = {"title": title, "passed": report.outcome == "passed", "measured": measured}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        c = _CRITERIA[number]
        status = "PASS" if c["passed"] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {c['title']} | {c['measured']}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
