"""Acceptance gate: every release criterion at full strength.

Each criterion runs as its own test so the -v output gives one
pass/fail line per criterion.  These are the slow, binding runs
(minutes, not seconds); `atomlink verify --profile desk` covers the
same ground at reduced trajectory counts for day-to-day work.
"""

import pytest

from atomlink import acceptance


@pytest.mark.parametrize("name", acceptance.check_names())
def test_criterion(name):
    result = acceptance.run_check(name, profile="full")
    line = (f"[{'PASS' if result.ok else 'FAIL'}] {result.name} "
            f"({result.elapsed_s:.1f}s): {result.detail}")
    print(line)
    assert result.ok, line
