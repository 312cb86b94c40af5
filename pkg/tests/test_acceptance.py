"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every criterion also prints a PASS/FAIL line in the terminal summary.
"""

import os

import pytest

from dissipative_wqed.validation import CRITERIA, Context, run_criterion

RESULTS = []


@pytest.fixture(scope="module")
def ctx():
    return Context(jobs=os.cpu_count() or 1)


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA], ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, ctx):
    res = run_criterion(number, ctx)
    RESULTS.append(res)
    assert res.passed, res.line()
