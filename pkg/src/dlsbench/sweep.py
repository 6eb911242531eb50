"""Factorial experiment orchestration: validate a config, run every
(process-technique x thread-technique) cell with repetitions, aggregate into
improvement matrices, and write plot-ready reports.

Cells run strictly sequentially so timing one cell does not perturb another;
each cell's repetitions land in their own JSON file, which makes a sweep
resumable and lets the aggregate be rebuilt without re-executing anything.
"""

from __future__ import annotations

import hashlib
import json
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .kernels import (
    Kernel,
    MandelbrotKernel,
    MandelbrotParams,
    SpinImageKernel,
    SpinImageParams,
    SyntheticKernel,
    SyntheticSpec,
    TimestepSpec,
    generate_cluster_cloud,
    load_point_cloud,
)
from .metrics import cov, mean_max, percent_improvement
from .runtime import RunPlan, setup
from .scheduling import FscParams
from .techniques import (
    AWF_FAMILY,
    DEFAULT_PROC_TECHNIQUES,
    DEFAULT_THREAD_TECHNIQUES,
    EXCLUDED_PROC_TECHNIQUES,
    EXCLUDED_THREAD_TECHNIQUES,
    TechniqueKind,
    parse_technique,
)

__all__ = [
    "CellStats",
    "ConfigError",
    "ExperimentConfig",
    "SweepResult",
    "build_kernel",
    "load_sweep",
    "run_sweep",
    "validate_config",
    "write_reports",
]

KERNEL_NAMES = ("mandelbrot", "spinimage", "synthetic", "timestep")
BASELINE = (TechniqueKind.NODLB, TechniqueKind.STATIC)

# process-level SS starves a rank's threads (one task per request), WF's
# fixed weights target heterogeneous machines, and FSC needs h/sigma
# profiling: all usable only behind override_excluded
_EXCLUSION_REASONS = {
    ("proc", TechniqueKind.SS): "hands a single task to a whole rank, idling its threads",
    ("proc", TechniqueKind.WF): "fixed weights are meant for heterogeneous machines",
    ("proc", TechniqueKind.FSC): "requires profiled scheduling overhead h and sigma",
    ("thread", TechniqueKind.FSC): "requires profiled scheduling overhead h and sigma",
}


class ConfigError(ValueError):
    """Invalid experiment config; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  - " + "\n  - ".join(problems))
        self.problems = problems


@dataclass
class ExperimentConfig:
    kernel: str
    n: int
    p: int
    t: int
    kernel_params: dict = field(default_factory=dict)
    thread_techniques: tuple[TechniqueKind, ...] = DEFAULT_THREAD_TECHNIQUES
    proc_techniques: tuple[TechniqueKind, ...] = DEFAULT_PROC_TECHNIQUES
    repetitions: int = 20
    timesteps: int = 1
    seed: int = 0
    output_dir: str = "dls-out"
    transport: str = "in-process"
    serialize_requests: bool = False
    virtual_time: bool = False
    measure_mode: str = "repetitions"
    warmup: bool = True
    allow_oversubscribe: bool = False
    override_excluded: bool = False
    keep_traces: bool = False
    proc_min_chunk: int | None = None
    thread_min_chunk: int = 1
    fsc_params: FscParams | None = None
    warnings: list[str] = field(default_factory=list)

    def cells(self) -> list[tuple[TechniqueKind, TechniqueKind]]:
        """All configured pairs, with the baseline cell always present."""
        pairs = [(p, t) for p in self.proc_techniques for t in self.thread_techniques]
        if BASELINE not in pairs:
            pairs.insert(0, BASELINE)
        return pairs


def _parse_techniques(raw, axis: str, problems: list[str]):
    kinds = []
    for name in raw:
        try:
            kinds.append(parse_technique(name))
        except ValueError as exc:
            problems.append(str(exc))
    if not kinds:
        problems.append(f"{axis}_techniques must not be empty")
    return tuple(kinds)


def validate_config(path_or_mapping) -> ExperimentConfig:
    """Parse and validate a config, collecting every violation before
    raising.  Accepts a JSON file path or an already-parsed mapping."""
    problems: list[str] = []
    warnings: list[str] = []
    if isinstance(path_or_mapping, dict):
        raw = dict(path_or_mapping)
    else:
        text = Path(path_or_mapping).read_text(encoding="utf-8").strip()
        try:
            raw = json.loads(text) if text else {}
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError(["config root must be a JSON object"])

    known = set(ExperimentConfig.__dataclass_fields__) - {"warnings"}
    for key in raw:
        if key not in known:
            problems.append(f"unknown config key {key!r}")

    kernel = raw.get("kernel")
    if kernel is None:
        problems.append(f"missing required field 'kernel' (one of {', '.join(KERNEL_NAMES)})")
    elif kernel not in KERNEL_NAMES:
        problems.append(f"unknown kernel {kernel!r} (one of {', '.join(KERNEL_NAMES)})")

    thread_techniques = DEFAULT_THREAD_TECHNIQUES
    if "thread_techniques" in raw:
        thread_techniques = _parse_techniques(raw["thread_techniques"], "thread", problems)
    proc_techniques = DEFAULT_PROC_TECHNIQUES
    if "proc_techniques" in raw:
        proc_techniques = _parse_techniques(raw["proc_techniques"], "proc", problems)

    override = bool(raw.get("override_excluded", False))
    if not override:
        for tech in thread_techniques:
            if tech in EXCLUDED_THREAD_TECHNIQUES:
                reason = _EXCLUSION_REASONS[("thread", tech)]
                problems.append(
                    f"thread technique {tech} is excluded by default ({reason}); "
                    "set override_excluded to use it"
                )
        for tech in proc_techniques:
            if tech in EXCLUDED_PROC_TECHNIQUES:
                reason = _EXCLUSION_REASONS[("proc", tech)]
                problems.append(
                    f"process technique {tech} is excluded by default ({reason}); "
                    "set override_excluded to use it"
                )
    if any(t is TechniqueKind.NODLB for t in thread_techniques):
        problems.append("NODLB is a process-level baseline, not a thread technique")

    def positive_int(key, default, minimum=1):
        value = raw.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            problems.append(f"{key} must be an integer >= {minimum}, got {value!r}")
            return default
        return value

    n = positive_int("n", 1)
    p = positive_int("p", 1)
    t = positive_int("t", 1)
    repetitions = positive_int("repetitions", 20)
    timesteps = positive_int("timesteps", 1)
    seed = raw.get("seed", 0)

    measure_mode = raw.get("measure_mode", "repetitions")
    if measure_mode not in ("repetitions", "timesteps"):
        problems.append(f"measure_mode must be 'repetitions' or 'timesteps', got {measure_mode!r}")

    transport = raw.get("transport", "in-process")
    if transport not in ("in-process", "local-socket"):
        problems.append(f"unknown transport {transport!r}")

    allow_over = bool(raw.get("allow_oversubscribe", False))
    cores = os.cpu_count() or 1
    if p * t > cores and not allow_over:
        problems.append(
            f"plan needs {p * t} logical PEs but only {cores} cores are available; "
            "set allow_oversubscribe to run anyway"
        )

    if timesteps == 1 and any(tech in AWF_FAMILY for tech in proc_techniques):
        warnings.append(
            "AWF-family techniques learn weights across time-steps; with "
            "timesteps=1 the weights never update beyond the first step"
        )

    fsc_params = None
    if raw.get("fsc_params") is not None:
        fp = raw["fsc_params"]
        try:
            fsc_params = FscParams(h=float(fp["h"]), sigma=float(fp["sigma"]))
        except (KeyError, TypeError, ValueError):
            problems.append('fsc_params must be an object {"h": seconds, "sigma": seconds}')

    if problems:
        raise ConfigError(problems)

    config = ExperimentConfig(
        kernel=kernel,
        n=n,
        p=p,
        t=t,
        kernel_params=dict(raw.get("kernel_params", {})),
        thread_techniques=thread_techniques,
        proc_techniques=proc_techniques,
        repetitions=repetitions,
        timesteps=timesteps,
        seed=seed,
        output_dir=str(raw.get("output_dir", "dls-out")),
        transport=transport,
        serialize_requests=bool(raw.get("serialize_requests", False)),
        virtual_time=bool(raw.get("virtual_time", False)),
        measure_mode=measure_mode,
        warmup=bool(raw.get("warmup", True)),
        allow_oversubscribe=allow_over,
        override_excluded=override,
        keep_traces=bool(raw.get("keep_traces", False)),
        proc_min_chunk=raw.get("proc_min_chunk"),
        thread_min_chunk=int(raw.get("thread_min_chunk", 1)),
        fsc_params=fsc_params,
        warnings=warnings,
    )
    # kernel construction validates kernel_params and pins n
    kernel_obj = build_kernel(config)
    if kernel_obj.tasks != config.n:
        config.n = kernel_obj.tasks
    return config


def build_kernel(config: ExperimentConfig) -> Kernel:
    """Instantiate the configured task body; raises ConfigError on bad params."""
    params = config.kernel_params
    try:
        if config.kernel == "mandelbrot":
            side = int(params.get("side", 0))
            if side:
                mp = MandelbrotParams.seahorse(
                    side=side,
                    max_iter=int(params.get("max_iter", 10_000)),
                    scale_color=int(params.get("scale_color", 1)),
                )
            elif params:
                mp = MandelbrotParams(**{k: v for k, v in params.items() if k != "side"})
            else:
                mp = MandelbrotParams.seahorse()
            return MandelbrotKernel(mp)
        if config.kernel == "spinimage":
            if "cloud_path" in params:
                pts, nms = load_point_cloud(params["cloud_path"])
            else:
                pts, nms = generate_cluster_cloud(
                    count=int(params.get("count", config.n)),
                    clusters=int(params.get("clusters", 4)),
                    spread=float(params.get("spread", 0.15)),
                    seed=config.seed,
                )
            sp = SpinImageParams(
                width=int(params.get("width", 16)),
                bin_size=float(params.get("bin_size", 0.05)),
                support_angle=float(params.get("support_angle", 1.5)),
                points=pts,
                normals=nms,
            )
            return SpinImageKernel(sp)
        if config.kernel in ("synthetic", "timestep"):
            spec = _synthetic_spec(config.n, config.seed, params)
            mults = params.get("rank_multipliers")
            if config.kernel == "timestep":
                tspec = TimestepSpec(spec, drift_per_step=float(params.get("drift_per_step", 0.01)))
                return SyntheticKernel.timestepped(tspec, rank_multipliers=mults)
            return SyntheticKernel(spec, rank_multipliers=mults)
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"bad kernel_params for {config.kernel!r}: {exc}"]) from exc
    raise ConfigError([f"unknown kernel {config.kernel!r}"])


def _synthetic_spec(n: int, seed: int, params: dict) -> SyntheticSpec:
    dist = params.get("distribution", "constant")
    base = float(params.get("base_cost_us", 100.0))
    if dist == "constant":
        return SyntheticSpec.constant(n, base, seed=seed)
    if dist == "uniform":
        return SyntheticSpec.uniform(
            n, base, float(params.get("low", 0.5)), float(params.get("high", 1.5)), seed=seed
        )
    if dist == "gaussian":
        return SyntheticSpec.gaussian(
            n, base, float(params.get("mean", 1.0)), float(params.get("stddev", 0.3)), seed=seed
        )
    if dist == "exponential":
        return SyntheticSpec.exponential(n, base, float(params.get("rate", 1.0)), seed=seed)
    if dist == "hotspot":
        return SyntheticSpec.hotspot(
            n,
            base,
            float(params.get("fraction", 0.1)),
            float(params.get("multiplier", 10.0)),
            start_fraction=params.get("start_fraction"),
            seed=seed,
        )
    raise ValueError(f"unknown distribution {dist!r}")


# --- cell execution -------------------------------------------------------------


@dataclass
class CellStats:
    proc: str
    thread: str
    wall_times: list[float] = field(default_factory=list)
    covs: list[float] = field(default_factory=list)
    mean_maxes: list[float] = field(default_factory=list)
    sched_proc: list[int] = field(default_factory=list)
    sched_thread: list[int] = field(default_factory=list)
    chunk_log_sha: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and bool(self.wall_times)

    @property
    def mean_time(self) -> float:
        return statistics.fmean(self.wall_times)

    @property
    def median_time(self) -> float:
        return statistics.median(self.wall_times)

    def quartiles(self) -> tuple[float, float, float, float, float]:
        times = sorted(self.wall_times)
        if len(times) == 1:
            t = times[0]
            return (t, t, t, t, t)
        q = statistics.quantiles(times, n=4, method="inclusive")
        return (times[0], q[0], q[1], q[2], times[-1])

    def to_json(self) -> dict:
        return {
            "proc": self.proc,
            "thread": self.thread,
            "wall_times": self.wall_times,
            "covs": self.covs,
            "mean_maxes": self.mean_maxes,
            "sched_proc": self.sched_proc,
            "sched_thread": self.sched_thread,
            "chunk_log_sha": self.chunk_log_sha,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CellStats":
        return cls(**data)


def _chunk_log_sha(results) -> str:
    digest = hashlib.sha256()
    for result in results:
        for rank, start, size in result.proc_chunks:
            digest.update(f"p{rank}:{start}+{size};".encode())
        for rank, tid, start, size in sorted(result.thread_chunks):
            digest.update(f"t{rank}.{tid}:{start}+{size};".encode())
    return digest.hexdigest()[:16]


def _run_cell(config: ExperimentConfig, proc: TechniqueKind, thread: TechniqueKind,
              trace_path: Path | None = None) -> CellStats:
    stats = CellStats(proc=str(proc), thread=str(thread))
    kernel = build_kernel(config)
    plan = RunPlan(
        n=config.n,
        p=config.p,
        t=config.t,
        proc_technique=proc,
        thread_technique=thread,
        proc_min_chunk=config.proc_min_chunk,
        thread_min_chunk=config.thread_min_chunk,
        timesteps=config.timesteps,
        transport=config.transport,
        seed=config.seed,
        serialize_requests=config.serialize_requests,
        virtual_time=config.virtual_time,
        fsc_params=config.fsc_params,
    )
    handle = setup(plan)
    try:
        if config.measure_mode == "timesteps":
            samples = handle.run_timesteps(kernel, config.repetitions)
            runs = [[r] for r in samples]
            if config.warmup and len(runs) > 1:
                runs = runs[1:]
        else:
            if config.warmup:
                _run_once(handle, kernel, config.timesteps)
            runs = [_run_once(handle, kernel, config.timesteps) for _ in range(config.repetitions)]
        for results in runs:
            last = results[-1]
            finishes = last.rank_finish_times()
            stats.wall_times.append(sum(r.wall_time for r in results))
            stats.covs.append(cov(finishes) if finishes else 0.0)
            stats.mean_maxes.append(mean_max(finishes) if finishes else 1.0)
            stats.sched_proc.append(sum(r.sched_events_proc for r in results))
            stats.sched_thread.append(sum(r.sched_events_thread for r in results))
            stats.chunk_log_sha.append(_chunk_log_sha(results))
        if trace_path is not None and runs:
            from .trace import export_trace

            export_trace(runs[-1][-1].trace, trace_path, "json-lines")
    finally:
        handle.close()
    return stats


def _run_once(handle, kernel, timesteps):
    if timesteps > 1:
        return handle.run_timesteps(kernel, timesteps)
    return [handle.run_loop(kernel)]


def run_sweep(config: ExperimentConfig, out_dir=None, progress=None) -> "SweepResult":
    """Execute every configured cell (resuming from per-cell files), then
    aggregate.  Single-cell failures are recorded and skipped."""
    out = Path(out_dir or config.output_dir)
    cell_dir = out / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    trace_dir = out / "traces"
    if config.keep_traces:
        trace_dir.mkdir(parents=True, exist_ok=True)

    cells: dict[tuple[str, str], CellStats] = {}
    for proc, thread in config.cells():
        key = (str(proc), str(thread))
        cell_path = cell_dir / f"{key[0]}__{key[1]}.json"
        if cell_path.exists():
            cells[key] = CellStats.from_json(json.loads(cell_path.read_text()))
            continue
        if progress:
            progress(f"running {key[0]} x {key[1]}")
        trace_path = trace_dir / f"{key[0]}__{key[1]}.jsonl" if config.keep_traces else None
        try:
            stats = _run_cell(config, proc, thread, trace_path)
        except Exception as exc:  # noqa: BLE001 - record and continue the sweep
            stats = CellStats(proc=key[0], thread=key[1], error=f"{type(exc).__name__}: {exc}")
        cells[key] = stats
        cell_path.write_text(json.dumps(stats.to_json(), indent=1))

    result = SweepResult(cells=cells, config=config)
    (out / "sweep.json").write_text(json.dumps(result.to_json(), indent=1))
    return result


def load_sweep(out_dir) -> "SweepResult":
    """Rebuild a SweepResult from the per-cell files of a previous run."""
    cell_dir = Path(out_dir) / "cells"
    if not cell_dir.is_dir():
        raise FileNotFoundError(f"no cell results under {cell_dir}")
    cells = {}
    for path in sorted(cell_dir.glob("*.json")):
        stats = CellStats.from_json(json.loads(path.read_text()))
        cells[(stats.proc, stats.thread)] = stats
    return SweepResult(cells=cells, config=None)


# --- aggregation and reporting ----------------------------------------------------


@dataclass
class SweepResult:
    cells: dict[tuple[str, str], CellStats]
    config: ExperimentConfig | None = None

    @property
    def baseline_key(self) -> tuple[str, str]:
        return (str(BASELINE[0]), str(BASELINE[1]))

    @property
    def baseline(self) -> CellStats:
        return self.cells[self.baseline_key]

    @property
    def failed_cells(self) -> list[tuple[str, str]]:
        return [key for key, stats in self.cells.items() if not stats.ok]

    @property
    def baseline_ok(self) -> bool:
        stats = self.cells.get(self.baseline_key)
        return stats is not None and stats.ok

    def improvement(self, key: tuple[str, str]) -> float:
        return percent_improvement(self.baseline.mean_time, self.cells[key].mean_time)

    def improvement_or_none(self, key: tuple[str, str]) -> float | None:
        if not self.baseline_ok or key not in self.cells or not self.cells[key].ok:
            return None
        return self.improvement(key)

    def _argmin(self, keys) -> tuple[str, str] | None:
        live = [k for k in keys if self.cells[k].ok]
        if not live:
            return None
        return min(live, key=lambda k: self.cells[k].mean_time)

    @property
    def best_two_level(self) -> tuple[str, str] | None:
        return self._argmin(self.cells.keys())

    @property
    def best_thread_only(self) -> tuple[str, str] | None:
        nodlb = str(TechniqueKind.NODLB)
        return self._argmin(k for k in self.cells if k[0] == nodlb)

    @property
    def best_proc_only(self) -> tuple[str, str] | None:
        static = str(TechniqueKind.STATIC)
        return self._argmin(k for k in self.cells if k[1] == static)

    def to_json(self) -> dict:
        data = {
            "cells": [stats.to_json() for stats in self.cells.values()],
            "baseline": list(self.baseline_key),
            "best_two_level": list(self.best_two_level or ()),
            "best_thread_only": list(self.best_thread_only or ()),
            "best_proc_only": list(self.best_proc_only or ()),
        }
        if self.best_two_level:
            data["improvement_best_two_level"] = self.improvement_or_none(self.best_two_level)
        return data

    def proc_axis(self) -> list[str]:
        seen = dict.fromkeys(key[0] for key in self.cells)
        return list(seen)

    def thread_axis(self) -> list[str]:
        seen = dict.fromkeys(key[1] for key in self.cells)
        return list(seen)


def write_reports(result: SweepResult, out_dir, fmt: str = "csv") -> list[Path]:
    """Emit raw times, the percent-improvement matrix, the best-combination
    summary, and the per-level comparison."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    raw = out / "raw_times.csv"
    with raw.open("w", encoding="utf-8") as fh:
        fh.write(
            "proc_technique,thread_technique,repetition,wall_time_s,cov,mean_max,"
            "sched_events_proc,sched_events_thread\n"
        )
        for (proc, thread), stats in result.cells.items():
            for rep in range(len(stats.wall_times)):
                fh.write(
                    f"{proc},{thread},{rep},{stats.wall_times[rep]:.9f},"
                    f"{stats.covs[rep]:.6f},{stats.mean_maxes[rep]:.6f},"
                    f"{stats.sched_proc[rep]},{stats.sched_thread[rep]}\n"
                )
    written.append(raw)

    # percent improvement vs the baseline cell; blank for failed cells
    matrix = out / "improvement_matrix.csv"
    threads = result.thread_axis()
    with matrix.open("w", encoding="utf-8") as fh:
        fh.write("proc_technique," + ",".join(threads) + "\n")
        for proc in result.proc_axis():
            row = [proc]
            for thread in threads:
                imp = result.improvement_or_none((proc, thread))
                row.append("" if imp is None else f"{imp:.3f}")
            fh.write(",".join(row) + "\n")
    written.append(matrix)

    per_level = out / "per_level.csv"
    rows = [
        ("baseline", result.baseline_key),
        ("best_thread_only", result.best_thread_only),
        ("best_proc_only", result.best_proc_only),
        ("best_two_level", result.best_two_level),
    ]
    with per_level.open("w", encoding="utf-8") as fh:
        fh.write("configuration,proc_technique,thread_technique,mean_s,median_s,"
                 "min_s,q1_s,q3_s,max_s,improvement_pct\n")
        for label, key in rows:
            if key is None or not result.cells[key].ok:
                fh.write(f"{label},,,,,,,,,\n")
                continue
            stats = result.cells[key]
            mn, q1, med, q3, mx = stats.quartiles()
            imp = result.improvement_or_none(key)
            fh.write(
                f"{label},{key[0]},{key[1]},{stats.mean_time:.9f},{med:.9f},"
                f"{mn:.9f},{q1:.9f},{q3:.9f},{mx:.9f},"
                + ("" if imp is None else f"{imp:.3f}") + "\n"
            )
    written.append(per_level)

    summary = out / ("summary.md" if fmt == "markdown" else "summary.csv")
    best = result.best_two_level
    if fmt == "markdown":
        lines = ["# Sweep summary", ""]
        if best:
            lines += [
                f"Best two-level combination: **{best[0]} + {best[1]}** "
                f"({result.improvement_or_none(best) or 0.0:+.2f}% vs {'/'.join(result.baseline_key)})",
                "",
                "| configuration | proc | thread | mean s | improvement % |",
                "|---|---|---|---|---|",
            ]
            for label, key in rows:
                if key is None or not result.cells[key].ok:
                    continue
                stats = result.cells[key]
                imp = result.improvement_or_none(key)
                lines.append(
                    f"| {label} | {key[0]} | {key[1]} | {stats.mean_time:.6f} | "
                    + ("" if imp is None else f"{imp:+.2f}") + " |"
                )
        if result.failed_cells:
            lines += ["", "Failed cells: " + ", ".join("x".join(k) for k in result.failed_cells)]
        summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        with summary.open("w", encoding="utf-8") as fh:
            fh.write("key,proc_technique,thread_technique,mean_s,improvement_pct\n")
            for label, key in rows:
                if key is None or not result.cells[key].ok:
                    continue
                stats = result.cells[key]
                imp = result.improvement_or_none(key)
                fh.write(
                    f"{label},{key[0]},{key[1]},{stats.mean_time:.9f},"
                    + ("" if imp is None else f"{imp:.3f}") + "\n"
                )
    written.append(summary)
    return written
