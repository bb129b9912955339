import json
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    item_marker = getattr(report, "criterion", None)
    if item_marker is None:
        return
    num, title = item_marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _criteria.get(num, (title, "PASS"))[1]
        outcome = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        _criteria[num] = (title, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, outcome = _criteria[num]
        terminalreporter.write_line(f"criterion {num:2d}: {outcome}  {title}")


@pytest.fixture(scope="session")
def oracle():
    return json.loads((DATA / "oracle_thresholds.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
