"""Batch statistics against independent references.

The success law is pinned at points evaluated separately in extended
precision, and the Wilson interval is cross-checked against scipy's
implementation, so the module under test never grades itself.
"""

import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binomtest

from atomlink.analytics import (
    BatchStats,
    aggregate,
    compare,
    p_success_analytic,
    wilson_interval,
)
from atomlink.protocol import (
    FAILURE_NONE,
    FAILURE_REASONS,
    FAILURE_TIMEOUT,
    FAILURE_TWO_PHOTONS,
    ProtocolOutcome,
)


def success(fid, eps=1):
    return ProtocolOutcome(True, FAILURE_NONE, eps, fid, (3.0,), 20.0)


def failure(reason=FAILURE_TIMEOUT):
    clicks = (1.0, 2.0) if reason == FAILURE_TWO_PHOTONS else ()
    return ProtocolOutcome(False, reason, None, None, clicks, 20.0)


class TestSuccessLaw:
    def test_limits(self):
        assert p_success_analytic(0.0) == 1.0
        assert p_success_analytic(50.0) < 1e-60
        with pytest.raises(ValueError, match="non-negative"):
            p_success_analytic(-1e-12)

    def test_pinned_points(self):
        # reference values evaluated at 30 significant digits
        for alpha, want in [
            (0.01, 0.98417564939810002),
            (0.024, 0.96168449184459066),
            (0.04764, 0.92307490160362467),
            (0.047640466551956382, 0.92307413413050611),
            (0.2, 0.67731504480685971),
        ]:
            assert p_success_analytic(alpha) == pytest.approx(want, rel=1e-14)

    def test_strictly_decreasing(self):
        grid = np.linspace(0.0, 1.5, 401)
        vals = [p_success_analytic(a) for a in grid]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert all(0.0 < v <= 1.0 for v in vals)


class TestWilson:
    def test_matches_scipy(self):
        for k, n in [(0, 10), (10, 10), (940, 1000), (1, 7), (123, 456),
                     (1999, 2000)]:
            lo, hi = wilson_interval(k, n)
            ref = binomtest(k, n).proportion_ci(method="wilson")
            assert lo == pytest.approx(ref.low, rel=1e-12, abs=1e-15)
            assert hi == pytest.approx(ref.high, rel=1e-12)

    def test_pinned_values(self):
        lo, hi = wilson_interval(940, 1000)
        assert lo == pytest.approx(0.9235289252086434, rel=1e-12)
        assert hi == pytest.approx(0.9531035273240680, rel=1e-12)
        lo, hi = wilson_interval(100, 100)
        assert lo == pytest.approx(0.9630065017930143, rel=1e-12)
        assert hi == pytest.approx(1.0, abs=1e-12)

    def test_contains_the_point_estimate(self):
        for k, n in [(0, 5), (3, 11), (50, 50), (999, 1000)]:
            lo, hi = wilson_interval(k, n)
            assert lo <= k / n <= hi + 1e-15
            assert -1e-15 <= lo and hi <= 1.0 + 1e-15

    def test_guards(self):
        with pytest.raises(ValueError, match="positive"):
            wilson_interval(0, 0)
        with pytest.raises(ValueError, match="lie in"):
            wilson_interval(5, 4)
        with pytest.raises(ValueError, match="lie in"):
            wilson_interval(-1, 4)


class TestAggregate:
    def test_counts_and_interval(self):
        runs = [success(0.99), success(0.97), failure(),
                failure(FAILURE_TWO_PHOTONS), success(0.98)]
        b = aggregate(runs)
        assert b.n_trajectories == 5
        assert b.n_success == 3
        assert b.p_success == pytest.approx(0.6)
        assert b.ci_low <= b.p_success <= b.ci_high
        assert (b.ci_low, b.ci_high) == wilson_interval(3, 5)
        assert b.mean_fidelity == pytest.approx(0.98)
        want_se = statistics.stdev([0.97, 0.98, 0.99]) / math.sqrt(3)
        assert b.fidelity_stderr == pytest.approx(want_se, rel=1e-12)
        assert sum(b.failure_breakdown.values()) == 5
        assert b.failure_breakdown[FAILURE_NONE] == 3
        assert b.failure_breakdown[FAILURE_TWO_PHOTONS] == 1
        assert set(b.failure_breakdown) == set(FAILURE_REASONS)

    def test_no_successes(self):
        b = aggregate([failure(), failure()])
        assert b.p_success == 0.0
        assert b.mean_fidelity is None
        assert b.fidelity_stderr is None

    def test_single_success_has_no_stderr(self):
        b = aggregate([success(0.95)])
        assert b.mean_fidelity == pytest.approx(0.95)
        assert b.fidelity_stderr is None

    def test_empty_batch_is_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            aggregate([])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(
        st.one_of(
            st.floats(0.0, 1.0).map(success),
            st.sampled_from([r for r in FAILURE_REASONS
                             if r != FAILURE_NONE]).map(failure)),
        min_size=1, max_size=30),
        st.randoms(use_true_random=False))
    def test_permutation_invariant(self, runs, rnd):
        base = aggregate(runs)
        shuffled = list(runs)
        rnd.shuffle(shuffled)
        assert aggregate(shuffled) == base


class TestCompare:
    def test_rows_and_gap(self):
        batches = [aggregate([success(0.99)] * 96 + [failure()] * 4),
                   aggregate([success(0.98)] * 68 + [failure()] * 32)]
        rows = compare([0.024, 0.2], batches)
        assert len(rows) == 2
        for alpha, row, b in zip([0.024, 0.2], rows, batches):
            assert row.alpha == alpha
            assert row.p_analytic == p_success_analytic(alpha)
            assert row.p_numeric == b.p_success
            assert (row.ci_low, row.ci_high) == (b.ci_low, b.ci_high)
            assert row.abs_gap == pytest.approx(
                abs(row.p_analytic - row.p_numeric), abs=1e-15)

    def test_analytic_column_decreases_on_an_increasing_grid(self):
        grid = [0.02, 0.1, 0.2]
        rows = compare(grid, [aggregate([success(0.99)])] * 3)
        pa = [r.p_analytic for r in rows]
        assert pa[0] > pa[1] > pa[2]

    def test_empty_grid_gives_empty_table(self):
        assert compare([], []) == []

    def test_length_mismatch_is_rejected(self):
        with pytest.raises(ValueError, match="length"):
            compare([0.1], [])
