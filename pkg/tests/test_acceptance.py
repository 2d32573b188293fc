"""Acceptance criteria at their stated tolerances, one test per criterion.

Each test prints a single PASS/FAIL line with the measured quantities
(visible with ``pytest -s`` or in the captured output of a failure).
"""

import pytest

from bpresim.validate import CHECKS, PARALLEL

SLOW = {2, 4, 5, 6}


def _params():
    for k in sorted(CHECKS):
        marks = [pytest.mark.slow] if k in SLOW else []
        yield pytest.param(k, id=f"criterion_{k:02d}_{CHECKS[k].__name__[6:]}", marks=marks)


@pytest.mark.parametrize("number", list(_params()))
def test_criterion(number):
    fn = CHECKS[number]
    result = fn(seed=1, workers=1) if number in PARALLEL else fn(seed=1)
    print(result.line())
    assert result.passed, result.line()
