"""Trace recorder and export/import round-trips."""

import json
import threading
import time

from dlsbench.trace import (
    TraceEvent,
    TraceRecorder,
    export_trace,
    import_trace,
)


def sample_events():
    return [
        TraceEvent("process", 0, None, "chunk_start", 0.0, 0, 50),
        TraceEvent("thread", 0, 1, "chunk_start", 0.01, 0, 25),
        TraceEvent("thread", 0, 1, "chunk_end", 0.5, 0, 25),
        TraceEvent("process", 0, None, "chunk_end", 0.6, 0, 50),
        TraceEvent("process", 1, None, "wait_start", 0.6),
        TraceEvent("process", 1, None, "wait_end", 0.7),
    ]


def test_jsonl_roundtrip(tmp_path):
    path = tmp_path / "trace.jsonl"
    export_trace(sample_events(), path, "json-lines")
    assert import_trace(path) == sample_events()


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "trace.csv"
    export_trace(sample_events(), path, "csv")
    assert import_trace(path, "csv") == sample_events()


def test_empty_trace_exports_header_only(tmp_path):
    path = tmp_path / "trace.csv"
    export_trace([], path, "csv")
    lines = path.read_text().strip().splitlines()
    assert lines == ["v,level,rank,thread,kind,t,start,size"]
    assert import_trace(path, "csv") == []


def test_jsonl_schema_fields(tmp_path):
    path = tmp_path / "trace.jsonl"
    export_trace(sample_events()[:1], path, "json-lines")
    rec = json.loads(path.read_text().splitlines()[0])
    assert rec == {
        "v": 1,
        "level": "process",
        "rank": 0,
        "thread": None,
        "kind": "chunk_start",
        "t": 0.0,
        "start": 0,
        "size": 50,
    }


def test_recorder_merges_across_threads():
    rec = TraceRecorder()

    def emit(rank):
        for k in range(5):
            rec.event("thread", rank, 0, "chunk_start", start=k, size=1)
            rec.event("thread", rank, 0, "chunk_end", start=k, size=1)

    workers = [threading.Thread(target=emit, args=(r,)) for r in range(4)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    events = rec.merged()
    assert len(events) == 40
    assert all(a.t <= b.t for a, b in zip(events, events[1:]))


def test_recorder_clock_is_relative():
    rec = TraceRecorder()
    time.sleep(0.01)
    stamp = rec.event("process", 0, None, "chunk_start", start=0, size=1)
    assert 0.0 < stamp < 5.0


def test_export_large_trace_quickly(tmp_path):
    events = [
        TraceEvent("thread", i % 4, i % 2, "chunk_start", float(i), i, 1)
        for i in range(100_000)
    ]
    t0 = time.perf_counter()
    path = tmp_path / "big.jsonl"
    export_trace(events, path, "json-lines")
    elapsed = time.perf_counter() - t0
    # 10^5 events well under the 5 s / 10^6 budget
    assert elapsed < 5.0
    assert sum(1 for _ in open(path)) == 100_000
