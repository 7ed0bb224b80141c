"""Acceptance criteria at their stated tolerances, one pass/fail line each."""

import pytest

from mvtreat import verify


@pytest.mark.parametrize("number", sorted(verify.CRITERIA))
def test_criterion(number, capsys):
    res = verify.run_criterion(number, seed=0)
    with capsys.disabled():
        print("\n" + res.line())
        for c in res.checks:
            print("    " + c.describe())
    assert res.passed, "; ".join(c.describe() for c in res.checks if not c.passed) or "over time budget"
