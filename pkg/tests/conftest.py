import sys

import pytest

from skysim.pricing import PricingTable, break_even, two_region


@pytest.fixture
def pricing2():
    return two_region()


@pytest.fixture
def teven2(pricing2):
    return break_even(pricing2, "A", "B")


@pytest.fixture
def pricing3():
    """A, B, C with asymmetric egress into C."""
    regions = ("A", "B", "C")
    net = {(s, d): 0.02 for s in regions for d in regions if s != d}
    net[("A", "C")] = 0.05
    return PricingTable(regions, {"A": 0.026, "B": 0.026, "C": 0.023}, net)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
