"""Acceptance criteria 1-11.

Each criterion prints one ``[PASS]`` / ``[FAIL]`` line; the lines are also
collected into an "acceptance criteria" section of the terminal summary.
"""
import pytest

from conftest import ACCEPTANCE_LINES
from lsrsgd.verification import CRITERIA, run_criterion


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    res = run_criterion(number)
    ACCEPTANCE_LINES[number] = res.line()
    print(res.line())
    assert res.passed, res.line()
