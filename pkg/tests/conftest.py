import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stopdeck.market import MarketParams  # noqa: E402

CRITERIA = {}


@pytest.fixture
def table1_gbm():
    return MarketParams(s0=120.0, strike=100.0, maturity=3.0, rate=0.05, dividend=0.1, sigma=0.1, steps=50)


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = CRITERIA.get(crit, (True, ""))[0]
        CRITERIA[crit] = (prev and report.outcome == "passed", report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(CRITERIA):
        ok, node = CRITERIA[crit]
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  ({node.split('::')[-1]})")
