"""End-to-end acceptance checks.

Each test runs one criterion of the built-in property suite and prints a
single pass/fail line with the measured quantities before asserting.
"""
import json

import pytest

from qoc import verify


def _run(fn):
    rep = fn(seed=0)
    status = "PASS" if rep["passed"] else "FAIL"
    print(f"[{status}] criterion {rep['id']} {rep['name']}: "
          f"{json.dumps(rep['measured'], default=repr)}")
    assert rep["passed"], rep


@pytest.mark.parametrize("fn", verify.CRITERIA,
                         ids=[verify._NAMES[f] for f in verify.CRITERIA])
def test_criterion(fn):
    _run(fn)
