"""Chunk-size rules and adaptive weight bookkeeping for loop self-scheduling.

This module is pure state-machine code: no threads, no clocks, no transport.
A scheduler owns one loop of ``N`` iterations shared by ``P`` processing
elements (PEs).  Free PEs call :func:`next_chunk` to pull the next contiguous
iteration range; execution machinery reports measured times back through
:func:`report_completion`, which feeds the adaptive techniques.

Chunk sizing per technique (R = remaining iterations):

==========  ============================================================
STATIC      one block of ceil(N/P) per PE, placed by PE id
SS          1 iteration per request
FSC         fixed size from scheduling overhead h and task-time sigma
mFSC        fixed size giving roughly as many chunks as FAC
GSS         ceil(R/P)
TSS         linearly decreasing from ceil(N/(2P)) down to 1
FAC         batches of ceil(R/2), split into P equal chunks
WF          FAC batch share scaled by a fixed per-PE weight
RAND        uniform integer in [N/(100P), N/(2P)]
AWF         WF with weights learned from per-time-step performance
AWF-B/C/D/E WF with weights relearned per batch (B/D) or per chunk (C/E);
            D and E also count scheduling overhead as work time
AF          per-PE size from learned mean/stddev of iteration times
==========  ============================================================

All sizes are clamped to ``[min_chunk, R]`` and the final chunk is truncated
to the remaining iterations, so every loop terminates and covers [0, N)
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .techniques import (
    ADAPTIVE_TECHNIQUES,
    AWF_FAMILY,
    CHUNK_TECHNIQUES,
    OVERHEAD_AWARE_AWF,
    TechniqueKind,
    WEIGHTED_TECHNIQUES,
)

__all__ = [
    "ChunkAssignment",
    "FscParams",
    "PerformanceRecord",
    "ProtocolViolation",
    "SchedulerState",
    "carry_weights",
    "create_scheduler",
    "mfsc_chunk_size",
    "next_chunk",
    "rand_bounds",
    "report_completion",
    "update_weights_timestep",
]

WEIGHT_TOLERANCE = 1e-9


class ProtocolViolation(RuntimeError):
    """Completion reported for an unknown or already-reported assignment."""


@dataclass(frozen=True)
class ChunkAssignment:
    """A half-open iteration range [start, start+size) issued to one PE."""

    pe_id: int
    start: int
    size: int
    batch_id: int
    round: int

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class FscParams:
    """Externally supplied FSC inputs: per-chunk scheduling overhead ``h``
    and the standard deviation ``sigma`` of task execution times, both in
    seconds."""

    h: float
    sigma: float


@dataclass
class PerformanceRecord:
    """Measured execution statistics for one PE."""

    pe_id: int
    chunks_done: int = 0
    iterations_done: int = 0
    exec_time_sum: float = 0.0
    sched_time_sum: float = 0.0
    # (chunk_size, exec_time, sched_time) per completed chunk
    per_chunk_samples: list[tuple[int, float, float]] = field(default_factory=list)
    # (timestep_index, per-iteration time) finalized at each time-step end
    timestep_wap: list[tuple[int, float]] = field(default_factory=list)
    # running accumulators for the current time-step
    step_exec: float = 0.0
    step_sched: float = 0.0
    step_iters: int = 0

    def mean_iter_time(self) -> float | None:
        if self.iterations_done == 0:
            return None
        return self.exec_time_sum / self.iterations_done


@dataclass
class SchedulerState:
    """Mutable state of one self-scheduling loop instance.

    Not thread-safe: callers must serialize access externally.
    """

    technique: TechniqueKind
    N: int
    P: int
    R: int
    min_chunk: int
    weights: list[float]
    pe_stats: list[PerformanceRecord]
    fsc_params: FscParams | None = None
    rng_state: int = 0
    # (current_size, decrement) for TSS
    tss_state: tuple[int, int] = (0, 0)
    fixed_chunk: int = 0
    batch_remaining: int = 0
    batch_chunk: int = 0
    batch_id: int = 0
    round: int = 0
    timestep_index: int = 1
    static_served: set[int] = field(default_factory=set)
    outstanding: dict[tuple[int, int], ChunkAssignment] = field(default_factory=dict)
    # per-batch (issued, reported, closed) counters for AWF-B/D updates
    batch_progress: dict[int, list[int]] = field(default_factory=dict)

    @property
    def exhausted(self) -> bool:
        return self.R == 0


# ---------------------------------------------------------------------------
# deterministic PRNG for RAND (documented for bit-exact reproduction)
#
# State seeding: splitmix64(seed); if that is 0, the nonzero constant
# 0x9E3779B97F4A7C15 is used instead.  Each draw advances xorshift64*:
#   s ^= s >> 12;  s ^= s << 25;  s ^= s >> 27;  out = s * 0x2545F4914F6CDD1D
# (all mod 2^64) and maps to [lo, hi] as lo + out % (hi - lo + 1).
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _seed_rng(seed: int) -> int:
    state = _splitmix64(seed & _MASK64)
    return state if state != 0 else 0x9E3779B97F4A7C15


def _xorshift64star(state: int) -> tuple[int, int]:
    s = state
    s ^= s >> 12
    s = (s ^ (s << 25)) & _MASK64
    s ^= s >> 27
    return s, (s * 0x2545F4914F6CDD1D) & _MASK64


def rand_bounds(n: int, p: int) -> tuple[int, int]:
    """Inclusive chunk-size bounds for RAND: [N/(100 P), N/(2 P)]."""
    lo = max(1, n // (100 * p))
    hi = max(lo, n // (2 * p))
    return lo, hi


def mfsc_chunk_size(n: int, p: int) -> int:
    """Fixed mFSC chunk size: ceil(N / (P * log2(N/P))).

    Yields roughly as many chunks as FAC produces (FAC halves the remainder
    per batch and cuts each batch into P chunks).  Reproduces the published
    half-chunk minima 532 / 700 / 2549 for the workloads where the total
    task count is known exactly.
    """
    if n < 1 or p < 1:
        raise ValueError("mfsc_chunk_size requires n >= 1 and p >= 1")
    ratio = n / p
    denom = p * max(1.0, math.log2(ratio)) if ratio > 1.0 else float(p)
    return max(1, math.ceil(n / denom))


def _fsc_chunk_size(n: int, p: int, params: FscParams) -> int:
    if p == 1:
        return max(1, math.ceil(n / 2))
    if params.sigma <= 0.0:
        return max(1, math.ceil(n / (2 * p)))
    base = (math.sqrt(2.0) * n * params.h) / (params.sigma * p * math.sqrt(math.log(p)))
    return max(1, math.ceil(base ** (2.0 / 3.0)))


def _tss_initial(n: int, p: int) -> tuple[int, int]:
    first = max(1, math.ceil(n / (2 * p)))
    last = 1
    total_chunks = math.ceil(2 * n / (first + last))
    dec = (first - last) // (total_chunks - 1) if total_chunks > 1 else 0
    return first, dec


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def create_scheduler(
    technique: TechniqueKind,
    n: int,
    p: int,
    *,
    min_chunk: int = 1,
    seed: int = 0,
    fsc_params: FscParams | None = None,
    initial_weights: list[float] | None = None,
) -> SchedulerState:
    """Build the scheduling state for one loop of ``n`` tasks over ``p`` PEs.

    ``initial_weights`` (WF and the AWF family) must be positive and sum
    to ``p``; they default to all ones.  ``fsc_params`` is required for FSC
    and ignored otherwise.
    """
    if technique not in CHUNK_TECHNIQUES:
        raise ValueError(f"{technique} is not a chunk-scheduling technique")
    if n < 1:
        raise ValueError(f"task count must be >= 1, got {n}")
    if p < 1:
        raise ValueError(f"PE count must be >= 1, got {p}")
    if min_chunk < 1:
        raise ValueError(f"min_chunk must be >= 1, got {min_chunk}")
    if technique is TechniqueKind.FSC and fsc_params is None:
        raise ValueError("FSC requires fsc_params (scheduling overhead h and sigma)")

    if initial_weights is not None:
        if len(initial_weights) != p:
            raise ValueError(f"expected {p} weights, got {len(initial_weights)}")
        if any(w <= 0.0 for w in initial_weights):
            raise ValueError("weights must all be positive")
        total = sum(initial_weights)
        if abs(total - p) > WEIGHT_TOLERANCE * p:
            raise ValueError(f"weights must sum to P={p}, got {total}")
        weights = [float(w) for w in initial_weights]
    else:
        weights = [1.0] * p

    state = SchedulerState(
        technique=technique,
        N=n,
        P=p,
        R=n,
        min_chunk=min_chunk,
        weights=weights,
        pe_stats=[PerformanceRecord(pe_id=i) for i in range(p)],
        fsc_params=fsc_params,
        rng_state=_seed_rng(seed),
    )
    if technique is TechniqueKind.FSC:
        state.fixed_chunk = _fsc_chunk_size(n, p, fsc_params)
    elif technique is TechniqueKind.MFSC:
        state.fixed_chunk = mfsc_chunk_size(n, p)
    elif technique is TechniqueKind.TSS:
        state.tss_state = _tss_initial(n, p)
    return state


# --- per-technique raw sizes -------------------------------------------------


def _open_batch_if_needed(state: SchedulerState) -> None:
    if state.batch_remaining == 0 and state.R > 0:
        state.batch_id += 1
        state.batch_remaining = math.ceil(state.R / 2)
        state.batch_chunk = math.ceil(state.batch_remaining / state.P)
        state.batch_progress[state.batch_id] = [0, 0]


def _batched_fac_share(state: SchedulerState) -> int:
    _open_batch_if_needed(state)
    return min(state.batch_chunk, state.batch_remaining)


def _weighted_share(state: SchedulerState, pe_id: int) -> int:
    _open_batch_if_needed(state)
    share = _round_half_up(state.weights[pe_id] * state.batch_chunk)
    return max(1, min(share, state.batch_remaining))


def _af_known_pes(state: SchedulerState) -> list[tuple[float, float]]:
    known = []
    for rec in state.pe_stats:
        if rec.chunks_done < 2 or rec.iterations_done == 0:
            known.append(None)
            continue
        mu = rec.exec_time_sum / rec.iterations_done
        if mu <= 0.0:
            known.append(None)
            continue
        rates = [exec_t / size for size, exec_t, _ in rec.per_chunk_samples if size > 0]
        mean_rate = sum(rates) / len(rates)
        var = sum((r - mean_rate) ** 2 for r in rates) / len(rates)
        known.append((mu, math.sqrt(var)))
    return known


def _af_size(state: SchedulerState, pe_id: int) -> int:
    known = _af_known_pes(state)
    mine = known[pe_id]
    stats = [k for k in known if k is not None]
    if mine is None or not stats:
        # bootstrap: the share FAC would hand out at the current R
        return math.ceil(math.ceil(state.R / 2) / state.P)
    mu_p = mine[0]
    d = sum(sigma * sigma / mu for mu, sigma in stats)
    t = state.R / sum(1.0 / mu for mu, _ in stats)
    disc = math.sqrt(d * d + 4.0 * d * t * mu_p)
    size = (d + 2.0 * t * mu_p - disc) / (2.0 * mu_p * mu_p)
    return max(1, math.ceil(size))


def _raw_size(state: SchedulerState, pe_id: int) -> int:
    tech = state.technique
    if tech is TechniqueKind.SS:
        return 1
    if tech is TechniqueKind.GSS:
        return math.ceil(state.R / state.P)
    if tech in (TechniqueKind.FSC, TechniqueKind.MFSC):
        return state.fixed_chunk
    if tech is TechniqueKind.TSS:
        current, dec = state.tss_state
        state.tss_state = (max(1, current - dec), dec)
        return max(1, current)
    if tech is TechniqueKind.FAC:
        return _batched_fac_share(state)
    if tech in WEIGHTED_TECHNIQUES:
        return _weighted_share(state, pe_id)
    if tech is TechniqueKind.RAND:
        lo, hi = rand_bounds(state.N, state.P)
        state.rng_state, draw = _xorshift64star(state.rng_state)
        return lo + draw % (hi - lo + 1)
    if tech is TechniqueKind.AF:
        return _af_size(state, pe_id)
    raise AssertionError(f"unhandled technique {tech}")


def next_chunk(state: SchedulerState, pe_id: int) -> ChunkAssignment | None:
    """Issue the next chunk to ``pe_id``, or None when the PE is exhausted.

    Chunks are placed contiguously low-to-high in request order, except for
    STATIC where each PE receives the block determined by its id exactly
    once (so the mapping matches a plain block decomposition regardless of
    request arrival order).
    """
    if not 0 <= pe_id < state.P:
        raise ValueError(f"pe_id {pe_id} out of range [0, {state.P})")
    if state.R == 0:
        return None

    if state.technique is TechniqueKind.STATIC:
        return _next_static_chunk(state, pe_id)

    size = _raw_size(state, pe_id)
    size = max(size, state.min_chunk)
    size = min(size, state.R)
    start = state.N - state.R
    state.R -= size
    if state.technique in WEIGHTED_TECHNIQUES or state.technique is TechniqueKind.FAC:
        state.batch_remaining = max(0, state.batch_remaining - size)
        progress = state.batch_progress.get(state.batch_id)
        if progress is not None:
            progress[0] += 1
    assignment = ChunkAssignment(
        pe_id=pe_id,
        start=start,
        size=size,
        batch_id=state.batch_id,
        round=state.round,
    )
    state.round += 1
    state.outstanding[(assignment.start, assignment.size)] = assignment
    return assignment


def _next_static_chunk(state: SchedulerState, pe_id: int) -> ChunkAssignment | None:
    if pe_id in state.static_served:
        return None
    state.static_served.add(pe_id)
    block = max(math.ceil(state.N / state.P), min(state.min_chunk, state.N))
    start = pe_id * block
    if start >= state.N:
        return None
    size = min(block, state.N - start)
    state.R -= size
    assignment = ChunkAssignment(
        pe_id=pe_id, start=start, size=size, batch_id=0, round=state.round
    )
    state.round += 1
    state.outstanding[(assignment.start, assignment.size)] = assignment
    return assignment


# --- completion reporting and adaptive weights -------------------------------


def report_completion(
    state: SchedulerState,
    assignment: ChunkAssignment,
    exec_time: float,
    sched_time: float = 0.0,
) -> None:
    """Record measured times for a previously issued chunk.

    AWF-C/AWF-E recompute the PE weights immediately; AWF-B/AWF-D recompute
    them once the chunk's whole batch has been reported; AF re-estimates its
    per-PE statistics from the accumulated samples on the next request.
    """
    key = (assignment.start, assignment.size)
    if key not in state.outstanding:
        raise ProtocolViolation(
            f"assignment [{assignment.start}, {assignment.stop}) was not issued "
            "by this scheduler or was already reported"
        )
    del state.outstanding[key]
    if exec_time < 0.0 or sched_time < 0.0:
        raise ValueError("reported times must be >= 0")

    rec = state.pe_stats[assignment.pe_id]
    rec.chunks_done += 1
    rec.iterations_done += assignment.size
    rec.exec_time_sum += exec_time
    rec.sched_time_sum += sched_time
    rec.per_chunk_samples.append((assignment.size, exec_time, sched_time))
    rec.step_exec += exec_time
    rec.step_sched += sched_time
    rec.step_iters += assignment.size

    tech = state.technique
    if tech in (TechniqueKind.AWF_C, TechniqueKind.AWF_E):
        _recompute_awf_weights(state, include_partial_step=True)
    elif tech in (TechniqueKind.AWF_B, TechniqueKind.AWF_D):
        progress = state.batch_progress.get(assignment.batch_id)
        if progress is not None:
            progress[1] += 1
            batch_closed = assignment.batch_id != state.batch_id or state.batch_remaining == 0
            if batch_closed and progress[1] >= progress[0]:
                _recompute_awf_weights(state, include_partial_step=True)
                del state.batch_progress[assignment.batch_id]


def _pe_wap(state: SchedulerState, rec: PerformanceRecord, include_partial_step: bool) -> float | None:
    """Time-step-weighted average per-iteration time of one PE.

    Recent time-steps weigh more: wap = sum(j * tau_j) / sum(j) over
    time-step indices j.  The running current step counts at the index it
    will be finalized under.
    """
    with_overhead = state.technique in OVERHEAD_AWARE_AWF
    num = 0.0
    den = 0.0
    for step_index, tau in rec.timestep_wap:
        num += step_index * tau
        den += step_index
    if include_partial_step and rec.step_iters > 0:
        work = rec.step_exec + (rec.step_sched if with_overhead else 0.0)
        tau = work / rec.step_iters
        num += state.timestep_index * tau
        den += state.timestep_index
    if den == 0.0:
        return None
    return num / den


def _recompute_awf_weights(state: SchedulerState, include_partial_step: bool) -> None:
    waps = [_pe_wap(state, rec, include_partial_step) for rec in state.pe_stats]
    speeds = [1.0 / w if w is not None and w > 0.0 else None for w in waps]
    measured = [s for s in speeds if s is not None]
    if not measured:
        return
    fallback = sum(measured) / len(measured)
    filled = [s if s is not None else fallback for s in speeds]
    total = sum(filled)
    state.weights = [state.P * s / total for s in filled]


def update_weights_timestep(state: SchedulerState, timestep_index: int) -> list[float]:
    """Finalize the just-completed time-step and relearn the PE weights.

    The relative weight of each PE is the inverse of its weighted average
    per-iteration time, normalized so the weights sum to P.  For AWF-D and
    AWF-E the per-chunk scheduling overhead counts as work time.
    """
    if state.technique not in AWF_FAMILY:
        raise ValueError(
            f"{state.technique} does not maintain adaptive time-step weights"
        )
    if timestep_index < 1:
        raise ValueError("timestep_index is 1-based and must be >= 1")
    with_overhead = state.technique in OVERHEAD_AWARE_AWF
    for rec in state.pe_stats:
        if rec.step_iters > 0:
            work = rec.step_exec + (rec.step_sched if with_overhead else 0.0)
            rec.timestep_wap.append((timestep_index, work / rec.step_iters))
        rec.step_exec = 0.0
        rec.step_sched = 0.0
        rec.step_iters = 0
    _recompute_awf_weights(state, include_partial_step=False)
    state.timestep_index = timestep_index + 1
    return list(state.weights)


def carry_weights(prev: SchedulerState, nxt: SchedulerState) -> None:
    """Seed a new time-step's scheduler with the weights and per-step history
    learned by the previous one."""
    if prev.technique is not nxt.technique:
        raise ValueError(
            f"technique mismatch: {prev.technique} vs {nxt.technique}"
        )
    if prev.technique not in AWF_FAMILY:
        raise ValueError(f"{prev.technique} does not carry adaptive weights")
    if prev.P != nxt.P:
        raise ValueError(f"PE count mismatch: {prev.P} vs {nxt.P}")
    nxt.weights = list(prev.weights)
    nxt.timestep_index = prev.timestep_index
    for prev_rec, nxt_rec in zip(prev.pe_stats, nxt.pe_stats):
        nxt_rec.timestep_wap = list(prev_rec.timestep_wap)
