"""Execution-trace recording, wait-time decomposition, and export.

Events carry a level (process or thread), the rank and optional thread id,
a kind, a timestamp relative to run start, and the chunk range when the
event marks chunk work.  Export formats are line-oriented and schema
versioned so external tooling can render Gantt charts from them.
"""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from dataclasses import dataclass

__all__ = [
    "EVENT_KINDS",
    "TraceError",
    "TraceEvent",
    "TraceRecorder",
    "WaitReport",
    "export_trace",
    "import_trace",
    "wait_decomposition",
]

SCHEMA_VERSION = 1
LEVELS = ("process", "thread")
EVENT_KINDS = (
    "chunk_start",
    "chunk_end",
    "wait_start",
    "wait_end",
    "timestep_start",
    "timestep_end",
)

CSV_FIELDS = ("v", "level", "rank", "thread", "kind", "t", "start", "size")


class TraceError(ValueError):
    """Malformed trace; carries the offending event index."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (event index {index})")
        self.index = index


@dataclass(frozen=True)
class TraceEvent:
    level: str
    rank: int
    thread: int | None
    kind: str
    t: float
    start: int | None = None
    size: int | None = None


class TraceRecorder:
    """Per-thread append-only buffers, merged into one time-sorted list.

    ``event()`` may be called concurrently from any thread; each OS thread
    writes its own buffer so recording needs no lock on the hot path.
    """

    def __init__(self):
        self._local = threading.local()
        self._buffers: list[list[TraceEvent]] = []
        self._register_lock = threading.Lock()
        self.t0 = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self.t0

    def _buffer(self) -> list[TraceEvent]:
        buf = getattr(self._local, "buf", None)
        if buf is None:
            buf = []
            self._local.buf = buf
            with self._register_lock:
                self._buffers.append(buf)
        return buf

    def event(self, level, rank, thread, kind, start=None, size=None, t=None):
        stamp = self.now() if t is None else t
        self._buffer().append(
            TraceEvent(level=level, rank=rank, thread=thread, kind=kind, t=stamp,
                       start=start, size=size)
        )
        return stamp

    def merged(self) -> list[TraceEvent]:
        with self._register_lock:
            events = [e for buf in self._buffers for e in buf]
        events.sort(key=lambda e: (e.t, e.rank, -1 if e.thread is None else e.thread))
        return events


@dataclass(frozen=True)
class WaitReport:
    """Idle seconds per PE: threads against their rank, ranks against the run."""

    thread_idle: dict[tuple[int, int], float]
    rank_idle: dict[int, float]
    thread_finish: dict[tuple[int, int], float]
    rank_finish: dict[int, float]

    @property
    def total_thread_idle(self) -> float:
        return sum(self.thread_idle.values())

    @property
    def total_rank_idle(self) -> float:
        return sum(self.rank_idle.values())


def _validate_nesting(events: list[TraceEvent]) -> None:
    open_spans: dict[tuple, list] = {}
    pair = {"chunk_end": "chunk_start", "wait_end": "wait_start",
            "timestep_end": "timestep_start"}
    last_t: dict[tuple, float] = {}
    for idx, e in enumerate(events):
        if e.level not in LEVELS:
            raise TraceError(f"unknown level {e.level!r}", idx)
        if e.kind not in EVENT_KINDS:
            raise TraceError(f"unknown event kind {e.kind!r}", idx)
        key = (e.level, e.rank, e.thread)
        if e.t < last_t.get(key, 0.0) - 1e-12:
            raise TraceError("events out of time order for one PE", idx)
        last_t[key] = e.t
        stack = open_spans.setdefault(key, [])
        if e.kind.endswith("_start"):
            stack.append(e.kind)
        else:
            want = pair[e.kind]
            if not stack or stack[-1] != want:
                raise TraceError(f"{e.kind} without matching {want}", idx)
            stack.pop()
    for key, stack in open_spans.items():
        if stack:
            raise TraceError(f"unclosed {stack[-1]} for PE {key}", len(events))


def wait_decomposition(events: list[TraceEvent]) -> WaitReport:
    """Idle time per thread (vs its rank's last finish) and per rank
    (vs the run's last finish), from chunk_end timestamps."""
    _validate_nesting(events)
    thread_finish: dict[tuple[int, int], float] = {}
    rank_finish: dict[int, float] = {}
    for e in events:
        if e.kind != "chunk_end":
            continue
        if e.level == "thread" and e.thread is not None:
            key = (e.rank, e.thread)
            thread_finish[key] = max(thread_finish.get(key, 0.0), e.t)
        rank_finish[e.rank] = max(rank_finish.get(e.rank, 0.0), e.t)

    rank_last = {r: t for r, t in rank_finish.items()}
    global_last = max(rank_last.values(), default=0.0)
    thread_idle = {
        (r, th): rank_last[r] - t for (r, th), t in thread_finish.items()
    }
    rank_idle = {r: global_last - t for r, t in rank_last.items()}
    return WaitReport(
        thread_idle=thread_idle,
        rank_idle=rank_idle,
        thread_finish=thread_finish,
        rank_finish=rank_finish,
    )


# --- export / import ----------------------------------------------------------


def _event_record(e: TraceEvent) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "level": e.level,
        "rank": e.rank,
        "thread": e.thread,
        "kind": e.kind,
        "t": e.t,
        "start": e.start,
        "size": e.size,
    }


def export_trace(events: list[TraceEvent], path, fmt: str = "json-lines") -> None:
    """Write one record per event; ``fmt`` is ``json-lines`` or ``csv``."""
    if fmt == "json-lines":
        with open(path, "w", encoding="utf-8") as fh:
            for e in events:
                fh.write(json.dumps(_event_record(e)) + "\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for e in events:
                rec = _event_record(e)
                writer.writerow({k: "" if rec[k] is None else rec[k] for k in CSV_FIELDS})
    else:
        raise ValueError(f"unknown trace format {fmt!r} (json-lines or csv)")


def _from_record(rec: dict, idx: int) -> TraceEvent:
    try:
        return TraceEvent(
            level=rec["level"],
            rank=int(rec["rank"]),
            thread=None if rec["thread"] in (None, "") else int(rec["thread"]),
            kind=rec["kind"],
            t=float(rec["t"]),
            start=None if rec["start"] in (None, "") else int(rec["start"]),
            size=None if rec["size"] in (None, "") else int(rec["size"]),
        )
    except (KeyError, TypeError) as exc:
        raise TraceError(f"bad trace record: {exc}", idx) from exc


def import_trace(path, fmt: str | None = None) -> list[TraceEvent]:
    """Read a trace written by :func:`export_trace`; format inferred from
    the first byte when not given."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if fmt is None:
        fmt = "json-lines" if text.lstrip()[:1] == "{" else "csv"
    events = []
    if fmt == "json-lines":
        for idx, line in enumerate(filter(None, map(str.strip, text.splitlines()))):
            events.append(_from_record(json.loads(line), idx))
    elif fmt == "csv":
        for idx, row in enumerate(csv.DictReader(io.StringIO(text))):
            events.append(_from_record(row, idx))
    else:
        raise ValueError(f"unknown trace format {fmt!r} (json-lines or csv)")
    return events
