"""Closed-form success law and batch statistics.

In the lossless strong-driving limit the chance that a run ends with
exactly one detector click depends only on alpha = kappa / z3, the
cavity loss accumulated per mapping angle.  Trajectory batches are
summarized against that law with Wilson score intervals, which stay
well behaved when nearly every run succeeds.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from typing import Iterable, NamedTuple

from .protocol import FAILURE_REASONS, ProtocolOutcome

# two-sided 95%
_Z95 = statistics.NormalDist().inv_cdf(0.975)


def p_success_analytic(alpha: float) -> float:
    """Analytic single-click probability exp(-a*pi) * (2 - exp(-a*pi/2)).

    Decreases strictly from 1 at alpha = 0 toward 0; valid for the
    effective model without spontaneous emission.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")
    return math.exp(-alpha * math.pi) \
        * (2.0 - math.exp(-alpha * math.pi / 2.0))


def wilson_interval(n_success: int, n_total: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n_total <= 0:
        raise ValueError("n_total must be positive")
    if not 0 <= n_success <= n_total:
        raise ValueError("n_success must lie in [0, n_total]")
    z2 = _Z95 * _Z95
    p = n_success / n_total
    denom = 1.0 + z2 / n_total
    center = (p + z2 / (2.0 * n_total)) / denom
    half = _Z95 / denom * math.sqrt(
        p * (1.0 - p) / n_total + z2 / (4.0 * n_total * n_total))
    return center - half, center + half


class BatchStats(NamedTuple):
    """Summary of one batch of protocol outcomes."""

    n_trajectories: int
    n_success: int
    p_success: float
    ci_low: float
    ci_high: float
    mean_fidelity: float | None
    fidelity_stderr: float | None
    failure_breakdown: dict[str, int]


def aggregate(outcomes: Iterable[ProtocolOutcome]) -> BatchStats:
    """Summarize a batch; order of the outcomes does not matter."""
    runs = list(outcomes)
    if not runs:
        raise ValueError("cannot aggregate an empty batch")
    n = len(runs)
    n_success = sum(1 for o in runs if o.success)
    ci_low, ci_high = wilson_interval(n_success, n)
    # sorted so the floating-point reductions are permutation invariant
    fids = sorted(o.fidelity for o in runs if o.success)
    mean_f = sum(fids) / n_success if n_success else None
    stderr = (statistics.stdev(fids) / math.sqrt(n_success)
              if n_success >= 2 else None)
    seen = Counter(o.failure_reason for o in runs)
    breakdown = {reason: seen.get(reason, 0) for reason in FAILURE_REASONS}
    return BatchStats(n, n_success, n_success / n, ci_low, ci_high,
                      mean_f, stderr, breakdown)


class ComparisonRow(NamedTuple):
    alpha: float
    p_analytic: float
    p_numeric: float
    ci_low: float
    ci_high: float
    abs_gap: float


def compare(alpha_grid: Iterable[float],
            batches: Iterable[BatchStats]) -> list[ComparisonRow]:
    """Pair each alpha with its batch and the analytic prediction."""
    grid = list(alpha_grid)
    stats = list(batches)
    if len(grid) != len(stats):
        raise ValueError("alpha grid and batch list differ in length")
    rows = []
    for alpha, b in zip(grid, stats):
        pa = p_success_analytic(alpha)
        rows.append(ComparisonRow(alpha, pa, b.p_success, b.ci_low,
                                  b.ci_high, abs(pa - b.p_success)))
    return rows
