import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion reported in the summary")


_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    _criteria.append((marker.args[0], marker.args[1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, outcome, detail in sorted(_criteria):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number:>2} {name}: {status}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
