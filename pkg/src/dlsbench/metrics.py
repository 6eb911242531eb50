"""Load-imbalance metrics over PE finishing times.

Both metrics are unitless: the coefficient of variation (population standard
deviation over mean) grows from 0 with imbalance, while mean/max shrinks
from 1.  Percent improvement is signed relative to a baseline time, negative
when a measurement is slower.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ImbalanceReport",
    "cov",
    "imbalance_report",
    "mean_max",
    "percent_improvement",
]


def _validated(finish_times) -> list[float]:
    times = [float(t) for t in finish_times]
    if not times:
        raise ValueError("finish times must be non-empty")
    if any(t < 0 for t in times):
        raise ValueError("finish times must be >= 0")
    return times


def cov(finish_times) -> float:
    """Population standard deviation of finishing times over their mean."""
    times = _validated(finish_times)
    mean = sum(times) / len(times)
    if mean <= 0.0:
        raise ValueError("cov undefined for zero mean finishing time")
    var = sum((t - mean) ** 2 for t in times) / len(times)
    return math.sqrt(var) / mean


def mean_max(finish_times) -> float:
    """Mean finishing time over the maximum finishing time."""
    times = _validated(finish_times)
    peak = max(times)
    if peak <= 0.0:
        raise ValueError("mean/max undefined for zero maximum finishing time")
    return (sum(times) / len(times)) / peak


def percent_improvement(baseline: float, measured: float) -> float:
    """100 * (baseline - measured) / baseline; negative means degradation."""
    if baseline <= 0.0:
        raise ValueError("baseline must be positive")
    return 100.0 * (baseline - measured) / baseline


@dataclass(frozen=True)
class ImbalanceReport:
    cov: float
    mean_max: float
    max_finish: float
    finish_times: tuple[float, ...]

    def severe(self, cov_threshold: float = 0.1) -> bool:
        return self.cov > cov_threshold


def imbalance_report(finish_times) -> ImbalanceReport:
    times = _validated(finish_times)
    return ImbalanceReport(
        cov=cov(times),
        mean_max=mean_max(times),
        max_finish=max(times),
        finish_times=tuple(times),
    )
