"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import pytest

from bceid.model import SupportGrid
from bceid.sharp import BidDistribution

ACCEPTANCE: dict = {}


@pytest.fixture
def tiny_grid():
    # V = {0, 1, 2}, B = {0, 1}, two bidders
    return SupportGrid.integer(2, 2, bid_max=1)


@pytest.fixture
def tiny_phi(tiny_grid):
    return BidDistribution.from_bids(tiny_grid, {(1, 1): 1.0})


@pytest.fixture
def acceptance_record():
    def record(k: int, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[k] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
