import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.get_closest_marker("acceptance"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _acceptance.append((doc, rep.outcome, rep.duration))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: exit criterion, reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for doc, outcome, duration in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {doc}  ({duration:.1f}s)")
