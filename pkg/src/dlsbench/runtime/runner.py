"""Two-level loop execution: a master self-schedules process-level chunks to
P worker ranks; each rank's T threads self-schedule sub-chunks of its
current chunk through a shared dispenser.

Ranks are controller threads of the host process talking to the master
through a transport (queues or loopback TCP frames); rank 0's controller is
an ordinary worker while the master protocol runs on the calling thread.
A worker requests work only when idle, reports measured execution and
scheduling time per chunk, and receives exactly one terminate message per
loop, sent once nothing remains unassigned or unreported.

Virtual-time mode replaces execution with the kernel's nominal range cost:
scheduling decisions (including adaptive weight updates) then become
reproducible, which the serialized-request mode turns into bit-identical
chunk logs across transports and repetitions.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass, field, replace

from ..kernels import Kernel, PerIndexKernel, TaskContext
from ..scheduling import (
    ChunkAssignment,
    FscParams,
    ProtocolViolation,
    SchedulerState,
    carry_weights,
    create_scheduler,
    mfsc_chunk_size,
    next_chunk,
    report_completion,
    update_weights_timestep,
)
from ..techniques import AWF_FAMILY, CHUNK_TECHNIQUES, TechniqueKind, parse_technique
from ..trace import TraceEvent, TraceRecorder
from .dispenser import ThreadDispenser
from .messages import Message, MessageKind
from .transport import make_transport

__all__ = [
    "RunPlan",
    "RunResult",
    "RuntimeHandle",
    "WorkerCrash",
    "setup",
    "thread_schedule_from_env",
]

_MASK64 = (1 << 64) - 1
ENV_THREAD_SCHEDULE = "DLS_THREAD_SCHEDULE"


class WorkerCrash(RuntimeError):
    """A worker failed mid-run; ``partial`` holds the trace collected so far."""

    def __init__(self, message: str, partial: "RunResult | None" = None):
        super().__init__(message)
        self.partial = partial


def thread_schedule_from_env(environ=None) -> tuple[TechniqueKind, int | None] | None:
    """Parse ``DLS_THREAD_SCHEDULE`` = "<technique>[,<min_chunk>]"."""
    raw = (environ or os.environ).get(ENV_THREAD_SCHEDULE)
    if not raw:
        return None
    head, _, tail = raw.partition(",")
    technique = parse_technique(head)
    min_chunk = None
    if tail.strip():
        min_chunk = int(tail)
        if min_chunk < 1:
            raise ValueError(f"{ENV_THREAD_SCHEDULE} min chunk must be >= 1")
    return technique, min_chunk


@dataclass(frozen=True)
class RunPlan:
    """Topology and scheduling selection for one loop execution.

    ``thread_technique`` left unset falls back to the DLS_THREAD_SCHEDULE
    environment variable (mirroring OMP_SCHEDULE selection), then STATIC.
    ``proc_min_chunk`` left unset defaults to half the mFSC chunk size.
    """

    n: int
    p: int
    t: int
    proc_technique: TechniqueKind
    thread_technique: TechniqueKind | None = None
    proc_min_chunk: int | None = None
    thread_min_chunk: int = 1
    timesteps: int = 1
    transport: str = "in-process"
    seed: int = 0
    serialize_requests: bool = False
    virtual_time: bool = False
    fsc_params: FscParams | None = None

    def resolved(self) -> "RunPlan":
        if self.n < 1:
            raise ValueError(f"task count must be >= 1, got {self.n}")
        if self.p < 1 or self.t < 1:
            raise ValueError(f"need P >= 1 and T >= 1, got P={self.p} T={self.t}")
        if self.timesteps < 1:
            raise ValueError(f"timesteps must be >= 1, got {self.timesteps}")
        thread_technique = self.thread_technique
        thread_min_chunk = self.thread_min_chunk
        if thread_technique is None:
            from_env = thread_schedule_from_env()
            if from_env is not None:
                thread_technique, env_min = from_env
                if env_min is not None:
                    thread_min_chunk = env_min
            else:
                thread_technique = TechniqueKind.STATIC
        if thread_technique not in CHUNK_TECHNIQUES:
            raise ValueError(f"{thread_technique} is not usable at the thread level")
        if self.proc_technique is not TechniqueKind.NODLB and (
            self.proc_technique not in CHUNK_TECHNIQUES
        ):
            raise ValueError(f"{self.proc_technique} is not usable at the process level")
        proc_min_chunk = self.proc_min_chunk
        if proc_min_chunk is None:
            proc_min_chunk = max(1, mfsc_chunk_size(self.n, self.p) // 2)
        if proc_min_chunk < thread_min_chunk:
            raise ValueError(
                f"proc_min_chunk {proc_min_chunk} must be >= thread_min_chunk "
                f"{thread_min_chunk}"
            )
        if thread_min_chunk < 1:
            raise ValueError("thread_min_chunk must be >= 1")
        for level, tech in (("process", self.proc_technique), ("thread", thread_technique)):
            if tech is TechniqueKind.FSC and self.fsc_params is None:
                raise ValueError(f"FSC at the {level} level requires fsc_params")
        if self.transport not in ("in-process", "local-socket"):
            raise ValueError(f"unknown transport {self.transport!r}")
        return replace(
            self,
            thread_technique=thread_technique,
            thread_min_chunk=thread_min_chunk,
            proc_min_chunk=proc_min_chunk,
        )


@dataclass
class RunResult:
    """Outcome of one loop execution (one time-step)."""

    timestep: int
    wall_time: float
    rank_finish: dict[int, float]
    thread_finish: dict[tuple[int, int], float]
    trace: list[TraceEvent]
    proc_chunks: list[tuple[int, int, int]]  # (rank, start, size)
    thread_chunks: list[tuple[int, int, int, int]]  # (rank, thread, start, size)
    reports: list[tuple[int, int, int, float, float]]
    final_weights: list[float] = field(default_factory=list)

    @property
    def sched_events_proc(self) -> int:
        return len(self.proc_chunks)

    @property
    def sched_events_thread(self) -> int:
        return len(self.thread_chunks)

    def rank_finish_times(self) -> list[float]:
        return [self.rank_finish[r] for r in sorted(self.rank_finish)]


# --- process-level chunk sources ----------------------------------------------


class _SchedulerSource:
    def __init__(self, state: SchedulerState):
        self.state = state

    def next(self, rank: int) -> ChunkAssignment | None:
        return next_chunk(self.state, rank)

    def report(self, assignment: ChunkAssignment, exec_time: float, sched_time: float):
        report_completion(self.state, assignment, exec_time, sched_time)

    @property
    def exhausted(self) -> bool:
        return self.state.exhausted


class _NodlbSource:
    """One-shot equal split: rank r owns block r of size ceil(N/P)."""

    def __init__(self, n: int, p: int):
        self.n = n
        self.p = p
        self.block = math.ceil(n / p)
        self.remaining = n
        self.served: set[int] = set()
        self.rounds = 0

    def next(self, rank: int) -> ChunkAssignment | None:
        if rank in self.served:
            return None
        self.served.add(rank)
        start = rank * self.block
        if start >= self.n:
            return None
        size = min(self.block, self.n - start)
        self.remaining -= size
        self.rounds += 1
        return ChunkAssignment(pe_id=rank, start=start, size=size, batch_id=0, round=self.rounds)

    def report(self, assignment, exec_time, sched_time):
        pass

    @property
    def exhausted(self) -> bool:
        return self.remaining == 0


def _make_source(plan: RunPlan, initial: SchedulerState | None = None):
    if plan.proc_technique is TechniqueKind.NODLB:
        return _NodlbSource(plan.n, plan.p)
    state = create_scheduler(
        plan.proc_technique,
        plan.n,
        plan.p,
        min_chunk=plan.proc_min_chunk,
        seed=plan.seed,
        fsc_params=plan.fsc_params,
    )
    if initial is not None and plan.proc_technique in AWF_FAMILY:
        carry_weights(initial, state)
    return _SchedulerSource(state)


# --- serialized request ordering ----------------------------------------------


class _TurnGate:
    """Round-robin token over the live ranks: at most one worker runs its
    request/execute/report cycle at a time, in rank order."""

    def __init__(self, ranks: int):
        self._cond = threading.Condition()
        self._order = list(range(ranks))

    def acquire(self, rank: int) -> None:
        with self._cond:
            while self._order and self._order[0] != rank:
                self._cond.wait(timeout=0.1)

    def release(self, rank: int) -> None:
        with self._cond:
            if self._order and self._order[0] == rank:
                self._order.append(self._order.pop(0))
            self._cond.notify_all()

    def remove(self, rank: int) -> None:
        with self._cond:
            if rank in self._order:
                self._order.remove(rank)
            self._cond.notify_all()


# --- per-chunk thread coordination ----------------------------------------------


class _Job:
    """One process-level chunk being executed by a rank's T threads."""

    __slots__ = ("dispenser", "kernel", "virtual", "threads", "done", "_lock",
                 "_pending", "cost_total", "error", "gate")

    def __init__(
        self,
        dispenser: ThreadDispenser,
        kernel: Kernel,
        virtual: bool,
        threads: int,
        gate: "_TurnGate | None" = None,
    ):
        self.dispenser = dispenser
        self.kernel = kernel
        self.virtual = virtual
        self.threads = threads
        self.gate = gate
        self.done = threading.Event()
        self._lock = threading.Lock()
        self._pending = threads
        self.cost_total = 0.0
        self.error: BaseException | None = None

    def add_cost(self, cost: float) -> None:
        with self._lock:
            self.cost_total += cost

    def fail(self, exc: BaseException) -> None:
        with self._lock:
            if self.error is None:
                self.error = exc

    def thread_finished(self) -> None:
        with self._lock:
            self._pending -= 1
            if self._pending == 0:
                self.done.set()


def _mix_seed(seed: int, rank: int, counter: int) -> int:
    return (
        seed * 0x9E3779B97F4A7C15 + (rank + 1) * 0x85EBCA6B + counter * 0xC2B2AE35
    ) & _MASK64


# --- the runtime ----------------------------------------------------------------


class RuntimeHandle:
    """Validated plan plus the machinery to run loops against it."""

    def __init__(self, plan: RunPlan):
        self.plan = plan.resolved()
        # fail fast on transport problems (e.g. no loopback listener)
        probe = make_transport(self.plan.transport, self.plan.p)
        probe.close()
        self._closed = False

    # -- public API --

    def run_loop(self, task_fn) -> RunResult:
        """Execute all N tasks once; ``task_fn`` is a Kernel or a per-index
        callable."""
        kernel = self._as_kernel(task_fn)
        source = _make_source(self.plan)
        return self._execute(source, kernel, timestep=1)

    def run_timesteps(self, task_fn, timesteps: int) -> list[RunResult]:
        """Run the loop repeatedly; AWF-family weights carry across steps."""
        if timesteps < 1:
            raise ValueError(f"timesteps must be >= 1, got {timesteps}")
        kernel = self._as_kernel(task_fn)
        adaptive = self.plan.proc_technique in AWF_FAMILY
        results = []
        prev_state: SchedulerState | None = None
        for step in range(1, timesteps + 1):
            kernel.set_timestep(step - 1)
            source = _make_source(self.plan, initial=prev_state)
            results.append(self._execute(source, kernel, timestep=step))
            if adaptive:
                update_weights_timestep(source.state, step)
                prev_state = source.state
        return results

    def close(self) -> None:
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- internals --

    def _as_kernel(self, task_fn) -> Kernel:
        kernel = task_fn if isinstance(task_fn, Kernel) else PerIndexKernel(task_fn, self.plan.n)
        if kernel.tasks and kernel.tasks < self.plan.n:
            raise ValueError(
                f"kernel provides {kernel.tasks} tasks but the plan schedules {self.plan.n}"
            )
        if self.plan.virtual_time and not kernel.supports_virtual:
            raise ValueError(
                f"{type(kernel).__name__} cannot run in virtual-time mode"
            )
        return kernel

    def _execute(self, source, kernel: Kernel, timestep: int) -> RunResult:
        if self._closed:
            raise RuntimeError("runtime handle is closed")
        plan = self.plan
        session = _Session(plan, source, kernel, timestep)
        return session.run()


class _Session:
    """One loop execution: transport, P controllers, P*T compute threads."""

    def __init__(self, plan: RunPlan, source, kernel: Kernel, timestep: int):
        self.plan = plan
        self.source = source
        self.kernel = kernel
        self.timestep = timestep
        self.recorder = TraceRecorder()
        self.transport = make_transport(plan.transport, plan.p)
        self.gate = _TurnGate(plan.p) if plan.serialize_requests else None
        self.abort = threading.Event()
        self.errors: list[BaseException] = []
        self._error_lock = threading.Lock()
        self._finish_stamp = 0.0

    def run(self) -> RunResult:
        plan = self.plan
        slots = [[_SlotQueue() for _ in range(plan.t)] for _ in range(plan.p)]
        compute_threads = [
            threading.Thread(
                target=self._compute_main,
                args=(rank, tid, slots[rank][tid]),
                name=f"dls-r{rank}t{tid}",
                daemon=True,
            )
            for rank in range(plan.p)
            for tid in range(plan.t)
        ]
        controllers = [
            threading.Thread(
                target=self._worker_main,
                args=(rank, slots[rank]),
                name=f"dls-rank{rank}",
                daemon=True,
            )
            for rank in range(plan.p)
        ]
        for thread in compute_threads + controllers:
            thread.start()
        try:
            proc_chunks, reports = self._master_loop()
        finally:
            for rank in range(plan.p):
                for slot in slots[rank]:
                    slot.put(None)
            for thread in controllers + compute_threads:
                thread.join(timeout=10.0)
            self.transport.close()
        if self.errors:
            raise WorkerCrash(
                f"worker failed: {self.errors[0]!r}",
                partial=self._result(proc_chunks, reports),
            ) from self.errors[0]
        return self._result(proc_chunks, reports)

    # -- master --

    def _master_loop(self):
        plan = self.plan
        transport = self.transport
        outstanding: dict[tuple[int, int], ChunkAssignment] = {}
        terminated: set[int] = set()
        proc_chunks: list[tuple[int, int, int]] = []
        reports: list[tuple[int, int, int, float, float]] = []

        def finish_if_done():
            if self.source.exhausted and not outstanding:
                self._finish_stamp = self.recorder.now()
                for rank in range(plan.p):
                    if rank not in terminated:
                        transport.send_to_worker(rank, Message.terminate(rank))
                        terminated.add(rank)

        while len(terminated) < plan.p:
            if self.abort.is_set():
                break
            msg = transport.recv_master(timeout=0.05)
            if msg is None:
                continue
            if msg.kind is MessageKind.WORK_REQUEST:
                chunk = self.source.next(msg.rank)
                if chunk is not None:
                    outstanding[(chunk.start, chunk.size)] = chunk
                    proc_chunks.append((msg.rank, chunk.start, chunk.size))
                    transport.send_to_worker(
                        msg.rank, Message.work_assignment(msg.rank, chunk.start, chunk.size)
                    )
                else:
                    # nothing for this rank now; it is released by the
                    # eventual terminate broadcast
                    finish_if_done()
            elif msg.kind is MessageKind.COMPLETION_REPORT:
                chunk = outstanding.pop((msg.start, msg.size), None)
                if chunk is None:
                    raise ProtocolViolation(
                        f"completion report for unknown chunk [{msg.start}, "
                        f"{msg.start + msg.size}) from rank {msg.rank}"
                    )
                self.source.report(chunk, msg.exec_time, msg.sched_time)
                reports.append((msg.rank, msg.start, msg.size, msg.exec_time, msg.sched_time))
                finish_if_done()
        if self.abort.is_set():
            self._finish_stamp = self.recorder.now()
            for rank in range(plan.p):
                if rank not in terminated:
                    transport.send_to_worker(rank, Message.terminate(rank))
                    terminated.add(rank)
        return proc_chunks, reports

    # -- workers --

    def _worker_main(self, rank: int, slots: list["_SlotQueue"]):
        plan = self.plan
        recorder = self.recorder
        gate = self.gate
        chunk_counter = 0
        recorder.event("process", rank, None, "timestep_start")
        try:
            while True:
                if gate:
                    gate.acquire(rank)
                clean = False
                try:
                    recorder.event("process", rank, None, "wait_start")
                    t_req = recorder.now()
                    self.transport.send_to_master(Message.work_request(rank))
                    msg = self._recv_blocking(rank)
                    t_assign = recorder.now()
                    recorder.event("process", rank, None, "wait_end")
                    if msg is None or msg.kind is MessageKind.TERMINATE:
                        return
                    sched_time = 0.0 if plan.virtual_time else t_assign - t_req
                    exec_time = self._run_chunk(rank, slots, msg, chunk_counter)
                    chunk_counter += 1
                    self.transport.send_to_master(
                        Message.completion_report(rank, msg.start, msg.size, exec_time, sched_time)
                    )
                    clean = True
                finally:
                    if gate:
                        if clean:
                            gate.release(rank)
                        else:
                            gate.remove(rank)
        except BaseException as exc:  # noqa: BLE001 - worker faults abort the run
            self._record_error(exc)
        finally:
            recorder.event("process", rank, None, "timestep_end")

    def _run_chunk(self, rank: int, slots, msg: Message, chunk_counter: int) -> float:
        plan = self.plan
        recorder = self.recorder
        dispenser = ThreadDispenser(
            plan.thread_technique,
            msg.start,
            msg.size,
            plan.t,
            min_chunk=plan.thread_min_chunk,
            seed=_mix_seed(plan.seed, rank, chunk_counter),
            fsc_params=plan.fsc_params,
        )
        recorder.event("process", rank, None, "chunk_start", start=msg.start, size=msg.size)
        # in fairness-forced mode the rank's threads also take strict turns,
        # making the thread-level log (incl. attribution) reproducible
        thread_gate = _TurnGate(plan.t) if plan.serialize_requests else None
        job = _Job(dispenser, self.kernel, plan.virtual_time, plan.t, gate=thread_gate)
        t0 = recorder.now()
        for slot in slots:
            slot.put(job)
        while not job.done.wait(timeout=1.0):
            if self.abort.is_set() and job.error is None:
                break
        t1 = recorder.now()
        recorder.event("process", rank, None, "chunk_end", start=msg.start, size=msg.size)
        if job.error is not None:
            raise job.error
        return job.cost_total if plan.virtual_time else t1 - t0

    def _compute_main(self, rank: int, tid: int, slot: "_SlotQueue"):
        ctx = TaskContext(rank=rank, thread=tid)
        recorder = self.recorder
        while True:
            job = slot.get()
            if job is None:
                return
            try:
                while True:
                    if job.gate:
                        job.gate.acquire(tid)
                    sub = None
                    try:
                        sub = job.dispenser.next(tid)
                        if sub is None:
                            break
                        recorder.event(
                            "thread", rank, tid, "chunk_start", start=sub.start, size=sub.size
                        )
                        if job.virtual:
                            cost = job.kernel.nominal_cost(sub.start, sub.stop, ctx)
                        else:
                            t0 = time.perf_counter()
                            job.kernel.execute(sub.start, sub.stop, ctx)
                            cost = time.perf_counter() - t0
                        recorder.event(
                            "thread", rank, tid, "chunk_end", start=sub.start, size=sub.size
                        )
                        job.dispenser.report(sub, cost)
                        job.add_cost(cost)
                    finally:
                        if job.gate:
                            if sub is None:
                                job.gate.remove(tid)
                            else:
                                job.gate.release(tid)
            except BaseException as exc:  # noqa: BLE001
                job.fail(exc)
                self._record_error(exc)
            finally:
                job.thread_finished()

    def _recv_blocking(self, rank: int) -> Message | None:
        while True:
            msg = self.transport.recv_worker(rank, timeout=0.05)
            if msg is not None:
                return msg
            if self.abort.is_set():
                return None

    def _record_error(self, exc: BaseException) -> None:
        with self._error_lock:
            self.errors.append(exc)
        self.abort.set()

    # -- result assembly --

    def _result(self, proc_chunks, reports) -> RunResult:
        events = self.recorder.merged()
        rank_finish: dict[int, float] = {}
        thread_finish: dict[tuple[int, int], float] = {}
        thread_chunks: list[tuple[int, int, int, int]] = []
        for e in events:
            if e.kind == "chunk_end":
                if e.level == "process":
                    rank_finish[e.rank] = max(rank_finish.get(e.rank, 0.0), e.t)
                else:
                    key = (e.rank, e.thread)
                    thread_finish[key] = max(thread_finish.get(key, 0.0), e.t)
            elif e.kind == "chunk_start" and e.level == "thread":
                thread_chunks.append((e.rank, e.thread, e.start, e.size))
        weights = []
        if isinstance(self.source, _SchedulerSource):
            weights = list(self.source.state.weights)
        return RunResult(
            timestep=self.timestep,
            wall_time=self._finish_stamp or self.recorder.now(),
            rank_finish=rank_finish,
            thread_finish=thread_finish,
            trace=events,
            proc_chunks=proc_chunks,
            thread_chunks=thread_chunks,
            reports=reports,
            final_weights=weights,
        )


class _SlotQueue:
    """Single-slot handoff from a controller to one compute thread."""

    def __init__(self):
        self._cond = threading.Condition()
        self._items: list = []

    def put(self, item) -> None:
        with self._cond:
            self._items.append(item)
            self._cond.notify()

    def get(self):
        with self._cond:
            while not self._items:
                self._cond.wait()
            return self._items.pop(0)


def setup(plan: RunPlan) -> RuntimeHandle:
    """Validate a plan and prepare a runtime for it.

    Raises ValueError for invalid plans and TransportError when the
    requested transport cannot be established.
    """
    return RuntimeHandle(plan)
