"""Shared test fixtures: kernels that record exactly what they executed."""

import threading

import numpy as np

from dlsbench.kernels import Kernel


class RecordingKernel(Kernel):
    """Records every executed range; prices ranges for virtual-time runs."""

    supports_virtual = True

    def __init__(self, n, costs=None, rank_multipliers=None, fail_at=None):
        self.tasks = n
        self._costs = None if costs is None else np.asarray(costs, dtype=float)
        self._mults = rank_multipliers
        self._fail_at = fail_at
        self._lock = threading.Lock()
        self.ranges: list[tuple[int, int, int, int]] = []

    def _record(self, start, stop, ctx):
        if self._fail_at is not None and start <= self._fail_at < stop:
            raise RuntimeError(f"injected failure at task {self._fail_at}")
        with self._lock:
            self.ranges.append((ctx.rank, ctx.thread, start, stop))

    def execute(self, start, stop, ctx):
        self._record(start, stop, ctx)

    def nominal_cost(self, start, stop, ctx):
        self._record(start, stop, ctx)
        if self._costs is None:
            cost = (stop - start) * 1e-6
        else:
            cost = float(self._costs[start:stop].sum())
        if self._mults is not None:
            cost *= self._mults[ctx.rank]
        return cost

    def execution_counts(self) -> np.ndarray:
        counts = np.zeros(self.tasks, dtype=np.int64)
        with self._lock:
            for _, _, start, stop in self.ranges:
                counts[start:stop] += 1
        return counts
