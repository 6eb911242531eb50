"""Metric identities, scale invariance, and wait decomposition."""

import numpy as np
import pytest

from dlsbench.metrics import cov, imbalance_report, mean_max, percent_improvement
from dlsbench.trace import TraceError, TraceEvent, wait_decomposition


class TestCov:
    def test_no_variation(self):
        assert cov([5, 5, 5, 5]) == 0.0

    def test_two_point_value(self):
        assert cov([2, 4]) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_severe_flag(self):
        assert imbalance_report([1, 1, 1, 9]).severe()
        assert not imbalance_report([1, 1, 1, 1.01]).severe()

    def test_zero_mean_rejected(self):
        with pytest.raises(ValueError):
            cov([0.0, 0.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cov([])


class TestMeanMax:
    def test_balanced_is_one(self):
        assert mean_max([5, 5, 5, 5]) == 1.0

    def test_two_point_value(self):
        assert mean_max([2, 4]) == pytest.approx(0.75, abs=1e-12)

    def test_zero_max_rejected(self):
        with pytest.raises(ValueError):
            mean_max([0.0, 0.0])


class TestPercentImprovement:
    def test_improvement(self):
        assert percent_improvement(100, 79) == pytest.approx(21.0)

    def test_identity(self):
        assert percent_improvement(100, 100) == 0.0

    def test_degradation_is_negative(self):
        assert percent_improvement(100, 115) == pytest.approx(-15.0)

    def test_exact_inverse_identity(self):
        for b in (0.5, 3.0, 1e6):
            for x in (-40.0, 0.0, 12.5, 99.0):
                assert percent_improvement(b, b * (1 - x / 100)) == pytest.approx(x, abs=1e-9)

    def test_zero_baseline_rejected(self):
        with pytest.raises(ValueError):
            percent_improvement(0.0, 1.0)


def test_scale_invariance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        times = rng.uniform(0.1, 10.0, size=rng.integers(2, 20))
        c0, m0 = cov(times), mean_max(times)
        for lam in (1e-6, 1.0, 1e6):
            assert cov(times * lam) == pytest.approx(c0, rel=1e-9)
            assert mean_max(times * lam) == pytest.approx(m0, rel=1e-9)


def test_balance_equivalence():
    # mean/max == 1 iff all equal iff cov == 0
    assert cov([3, 3, 3]) == 0.0 and mean_max([3, 3, 3]) == 1.0
    times = [3, 3, 4]
    assert cov(times) > 0.0 and mean_max(times) < 1.0


def span(level, rank, thread, t0, t1, start=0, size=1):
    return [
        TraceEvent(level, rank, thread, "chunk_start", t0, start, size),
        TraceEvent(level, rank, thread, "chunk_end", t1, start, size),
    ]


class TestWaitDecomposition:
    def test_simultaneous_threads_idle_zero(self):
        events = span("thread", 0, 0, 0.0, 2.0) + span("thread", 0, 1, 0.1, 2.0)
        rep = wait_decomposition(sorted(events, key=lambda e: e.t))
        assert rep.thread_idle[(0, 0)] == pytest.approx(0.0)
        assert rep.thread_idle[(0, 1)] == pytest.approx(0.0)

    def test_rank_idle_against_global_max(self):
        events = span("process", 0, None, 0.0, 3.0) + span("process", 1, None, 0.0, 4.0)
        rep = wait_decomposition(sorted(events, key=lambda e: e.t))
        assert rep.rank_idle[0] == pytest.approx(1.0)
        assert rep.rank_idle[1] == pytest.approx(0.0)

    def test_slowest_pe_has_zero_idle(self):
        events = (
            span("thread", 0, 0, 0.0, 1.0)
            + span("thread", 0, 1, 0.0, 2.5)
            + span("process", 0, None, 0.0, 2.5)
            + span("process", 1, None, 0.0, 1.5)
        )
        rep = wait_decomposition(sorted(events, key=lambda e: e.t))
        assert rep.thread_idle[(0, 1)] == 0.0
        assert rep.thread_idle[(0, 0)] == pytest.approx(1.5)
        assert min(rep.rank_idle.values()) == 0.0
        assert all(v >= 0 for v in rep.thread_idle.values())

    def test_malformed_trace_reports_index(self):
        events = [TraceEvent("thread", 0, 0, "chunk_end", 1.0, 0, 1)]
        with pytest.raises(TraceError) as err:
            wait_decomposition(events)
        assert err.value.index == 0

    def test_out_of_order_rejected(self):
        events = [
            TraceEvent("thread", 0, 0, "chunk_start", 2.0, 0, 1),
            TraceEvent("thread", 0, 0, "chunk_end", 1.0, 0, 1),
        ]
        with pytest.raises(TraceError):
            wait_decomposition(events)
