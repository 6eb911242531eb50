"""Shared sub-chunk dispenser for the threads of one rank.

One dispenser is bound to a single process-level chunk: it re-runs the
configured technique over that range with the rank's thread count as the PE
count, handing out absolute sub-ranges under a lock so issuance is
linearizable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from ..scheduling import (
    ChunkAssignment,
    FscParams,
    create_scheduler,
    next_chunk,
    report_completion,
)
from ..techniques import TechniqueKind

__all__ = ["SubChunk", "ThreadDispenser"]


@dataclass(frozen=True)
class SubChunk:
    """Absolute iteration range plus the relative assignment behind it."""

    start: int
    size: int
    inner: ChunkAssignment

    @property
    def stop(self) -> int:
        return self.start + self.size


class ThreadDispenser:
    def __init__(
        self,
        technique: TechniqueKind,
        start: int,
        size: int,
        threads: int,
        min_chunk: int = 1,
        seed: int = 0,
        fsc_params: FscParams | None = None,
    ):
        self._base = start
        self._lock = threading.Lock()
        self._state = create_scheduler(
            technique,
            size,
            threads,
            min_chunk=min_chunk,
            seed=seed,
            fsc_params=fsc_params,
        )

    def next(self, thread_id: int) -> SubChunk | None:
        with self._lock:
            inner = next_chunk(self._state, thread_id)
        if inner is None:
            return None
        return SubChunk(start=self._base + inner.start, size=inner.size, inner=inner)

    def report(self, sub: SubChunk, exec_time: float, sched_time: float = 0.0) -> None:
        with self._lock:
            report_completion(self._state, sub.inner, exec_time, sched_time)

    @property
    def issued(self) -> int:
        with self._lock:
            return self._state.round
