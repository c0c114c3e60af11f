import pytest

from corridor_hedge.market import Corridor, MarketParams

# outcome of every acceptance criterion, filled by tests/test_acceptance.py
CRITERIA = {}
# measured quantities worth showing next to the verdicts
NOTES = []


@pytest.fixture(scope="session")
def params():
    return MarketParams(0.03, 0.30, 100.0)


@pytest.fixture(scope="session")
def wide(params):
    """Corridor of the figures: a at the exercise boundary, b = 150."""
    return Corridor(40.0, 150.0)


@pytest.fixture(scope="session")
def narrow():
    """Corridor of the simulation experiments."""
    return Corridor(90.0, 110.0)


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" in report.nodeid and name.startswith("test_criterion_"):
        num = int(name.split("_")[2])
        if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
            prev = CRITERIA.get(num, "PASS")
            CRITERIA[num] = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {num}: {CRITERIA[num]}")
    for note in NOTES:
        terminalreporter.write_line(note)
