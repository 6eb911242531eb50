"""Two-level dynamic loop self-scheduling: chunk rules, a master/worker
runtime that schedules at both the process and thread levels, benchmark
kernels with controllable load imbalance, imbalance metrics, and a factorial
experiment harness."""

from .metrics import ImbalanceReport, cov, imbalance_report, mean_max, percent_improvement
from .runtime import RunPlan, RunResult, RuntimeHandle, WorkerCrash, setup
from .scheduling import (
    ChunkAssignment,
    FscParams,
    PerformanceRecord,
    ProtocolViolation,
    SchedulerState,
    carry_weights,
    create_scheduler,
    mfsc_chunk_size,
    next_chunk,
    report_completion,
    update_weights_timestep,
)
from .techniques import TechniqueKind, parse_technique
from .trace import TraceEvent, TraceRecorder, export_trace, import_trace, wait_decomposition

__version__ = "0.1.0"

__all__ = [
    "ChunkAssignment",
    "FscParams",
    "ImbalanceReport",
    "PerformanceRecord",
    "ProtocolViolation",
    "RunPlan",
    "RunResult",
    "RuntimeHandle",
    "SchedulerState",
    "TechniqueKind",
    "TraceEvent",
    "TraceRecorder",
    "WorkerCrash",
    "carry_weights",
    "cov",
    "create_scheduler",
    "export_trace",
    "imbalance_report",
    "import_trace",
    "mean_max",
    "mfsc_chunk_size",
    "next_chunk",
    "parse_technique",
    "percent_improvement",
    "report_completion",
    "setup",
    "update_weights_timestep",
    "wait_decomposition",
]
