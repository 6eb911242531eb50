"""Config validation, sweep integrity, resumability, and report files."""

import csv
import json

import pytest

from dlsbench import cli
from dlsbench.sweep import (
    ConfigError,
    load_sweep,
    run_sweep,
    validate_config,
    write_reports,
)
from dlsbench.techniques import TechniqueKind


def fast_config(**overrides):
    base = {
        "kernel": "synthetic",
        "kernel_params": {"distribution": "constant", "base_cost_us": 1.0},
        "n": 64,
        "p": 2,
        "t": 2,
        "repetitions": 2,
        "proc_techniques": ["NODLB", "GSS"],
        "thread_techniques": ["STATIC", "SS"],
        "allow_oversubscribe": True,
        "virtual_time": True,
        "warmup": False,
        "seed": 3,
    }
    base.update(overrides)
    return base


class TestValidateConfig:
    def test_empty_config_reports_missing_kernel(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("")
        with pytest.raises(ConfigError) as err:
            validate_config(path)
        assert any("kernel" in p for p in err.value.problems)

    def test_defaults_applied(self):
        config = validate_config(fast_config(repetitions=None) | {"repetitions": 20})
        assert config.repetitions == 20
        config2 = validate_config(fast_config())
        assert config2.measure_mode == "repetitions"
        assert config2.timesteps == 1

    def test_default_technique_sets(self):
        config = validate_config(
            {
                "kernel": "synthetic",
                "n": 10,
                "p": 1,
                "t": 1,
                "kernel_params": {"distribution": "constant"},
            }
        )
        assert len(config.proc_techniques) == 11
        assert len(config.thread_techniques) == 6
        assert len(config.cells()) == 66
        assert config.repetitions == 20

    def test_unknown_technique_lists_valid_set(self):
        with pytest.raises(ConfigError) as err:
            validate_config(fast_config(proc_techniques=["GSS", "BOGUS"]))
        joined = "\n".join(err.value.problems)
        assert "BOGUS" in joined
        assert "GSS" in joined and "AWF-B" in joined

    def test_excluded_proc_ss_needs_override(self):
        with pytest.raises(ConfigError) as err:
            validate_config(fast_config(proc_techniques=["SS"]))
        assert any("idling its threads" in p for p in err.value.problems)
        config = validate_config(fast_config(proc_techniques=["SS"], override_excluded=True))
        assert TechniqueKind.SS in config.proc_techniques

    def test_awf_single_timestep_warns(self):
        config = validate_config(fast_config(proc_techniques=["AWF", "NODLB"]))
        assert any("time-step" in w for w in config.warnings)

    def test_all_violations_reported_at_once(self):
        with pytest.raises(ConfigError) as err:
            validate_config(
                fast_config(
                    proc_techniques=["BOGUS"],
                    repetitions=0,
                    measure_mode="sideways",
                )
            )
        assert len(err.value.problems) >= 3

    def test_oversubscription_needs_flag(self):
        cfg = fast_config(p=64, t=64)
        cfg.pop("allow_oversubscribe")
        with pytest.raises(ConfigError) as err:
            validate_config(cfg)
        assert any("oversubscribe" in p for p in err.value.problems)


class TestRunSweep:
    def test_cells_and_baseline_present(self, tmp_path):
        config = validate_config(fast_config())
        result = run_sweep(config, out_dir=tmp_path)
        assert len(result.cells) == 4
        assert result.baseline_key in result.cells
        assert not result.failed_cells

    def test_forced_baseline_when_not_configured(self, tmp_path):
        config = validate_config(
            fast_config(proc_techniques=["GSS"], thread_techniques=["SS"])
        )
        result = run_sweep(config, out_dir=tmp_path)
        assert result.baseline_key in result.cells
        assert ("GSS", "SS") in result.cells

    def test_single_cell_equals_direct_run(self, tmp_path):
        config = validate_config(
            fast_config(proc_techniques=["NODLB"], thread_techniques=["STATIC"])
        )
        result = run_sweep(config, out_dir=tmp_path)
        assert list(result.cells) == [("NODLB", "STATIC")]
        stats = result.baseline
        assert len(stats.wall_times) == 2

    def test_resume_skips_completed_cells(self, tmp_path):
        config = validate_config(fast_config())
        run_sweep(config, out_dir=tmp_path)
        (tmp_path / "sweep.json").unlink()

        # re-running must rebuild the aggregate without executing anything
        import dlsbench.sweep as sweep_mod

        def boom(*a, **kw):
            raise AssertionError("cell re-executed despite existing results")

        original = sweep_mod._run_cell
        sweep_mod._run_cell = boom
        try:
            result = run_sweep(config, out_dir=tmp_path)
        finally:
            sweep_mod._run_cell = original
        assert (tmp_path / "sweep.json").exists()
        assert len(result.cells) == 4

    def test_reproducible_chunk_logs_under_serialization(self, tmp_path):
        config = validate_config(fast_config(serialize_requests=True))
        a = run_sweep(config, out_dir=tmp_path / "a")
        b = run_sweep(config, out_dir=tmp_path / "b")
        for key in a.cells:
            assert a.cells[key].chunk_log_sha == b.cells[key].chunk_log_sha

    def test_failed_cell_recorded_and_skipped(self, tmp_path):
        config = validate_config(fast_config())
        config.kernel_params["rank_multipliers"] = [1.0]  # too short for p=2 -> IndexError
        result = run_sweep(config, out_dir=tmp_path)
        assert result.failed_cells
        for key in result.failed_cells:
            assert result.cells[key].error


class TestReports:
    def make_result(self, tmp_path):
        config = validate_config(fast_config())
        return run_sweep(config, out_dir=tmp_path)

    def test_raw_csv_columns(self, tmp_path):
        result = self.make_result(tmp_path)
        write_reports(result, tmp_path)
        with open(tmp_path / "raw_times.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {
            "proc_technique", "thread_technique", "repetition", "wall_time_s",
            "cov", "mean_max", "sched_events_proc", "sched_events_thread",
        }
        assert len(rows) == 4 * 2  # cells x repetitions

    def test_baseline_improvement_is_zero(self, tmp_path):
        result = self.make_result(tmp_path)
        assert result.improvement(result.baseline_key) == 0.0

    def test_matrix_has_every_pair_once(self, tmp_path):
        result = self.make_result(tmp_path)
        write_reports(result, tmp_path)
        with open(tmp_path / "improvement_matrix.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["proc_technique", "STATIC", "SS"]
        assert [r[0] for r in rows[1:]] == ["NODLB", "GSS"]

    def test_summary_argmin_matches_raw(self, tmp_path):
        result = self.make_result(tmp_path)
        write_reports(result, tmp_path)
        means = {k: s.mean_time for k, s in result.cells.items() if s.ok}
        assert result.best_two_level == min(means, key=means.get)

    def test_best_two_level_bounded_by_single_level(self, tmp_path):
        result = self.make_result(tmp_path)
        two = result.cells[result.best_two_level].mean_time
        thread_only = result.cells[result.best_thread_only].mean_time
        proc_only = result.cells[result.best_proc_only].mean_time
        assert two <= thread_only
        assert two <= proc_only
        assert thread_only <= result.baseline.mean_time or proc_only <= result.baseline.mean_time

    def test_markdown_summary(self, tmp_path):
        result = self.make_result(tmp_path)
        write_reports(result, tmp_path, fmt="markdown")
        text = (tmp_path / "summary.md").read_text()
        assert "Best two-level combination" in text


class TestCli:
    def write_config(self, tmp_path, **overrides):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(fast_config(**overrides)))
        return path

    def test_run_exit_zero(self, tmp_path, capsys):
        path = self.write_config(tmp_path, output_dir=str(tmp_path / "out"))
        code = cli.main(["run", "--config", str(path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "cells complete" in out
        assert (tmp_path / "out" / "raw_times.csv").exists()

    def test_run_config_error_exit_one(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"kernel": "nope"}))
        assert cli.main(["run", "--config", str(path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_run_partial_exit_three(self, tmp_path):
        # FSC cells fail without fsc_params; GSS cells still complete
        path = self.write_config(
            tmp_path,
            output_dir=str(tmp_path / "out"),
            proc_techniques=["NODLB", "GSS", "FSC"],
            override_excluded=True,
        )
        assert cli.main(["run", "--config", str(path)]) == 3

    def test_all_cells_failing_exit_two(self, tmp_path):
        path = self.write_config(
            tmp_path,
            output_dir=str(tmp_path / "out"),
            kernel_params={
                "distribution": "constant",
                "base_cost_us": 1.0,
                "rank_multipliers": [1.0],
            },
        )
        assert cli.main(["run", "--config", str(path)]) == 2

    def test_fsc_runs_with_params(self, tmp_path):
        config = validate_config(
            fast_config(
                proc_techniques=["NODLB", "FSC"],
                override_excluded=True,
                fsc_params={"h": 1e-4, "sigma": 0.5},
            )
        )
        result = run_sweep(config, out_dir=tmp_path)
        assert not result.failed_cells
        assert ("FSC", "SS") in result.cells

    def test_report_from_existing_cells(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path, output_dir=str(tmp_path / "out"))
        assert cli.main(["run", "--config", str(cfg_path)]) == 0
        assert cli.main(["report", "--in", str(tmp_path / "out"), "--format", "markdown"]) == 0
        assert (tmp_path / "out" / "summary.md").exists()

    def test_trace_conversion(self, tmp_path):
        cfg_path = self.write_config(
            tmp_path, output_dir=str(tmp_path / "out"), keep_traces=True
        )
        assert cli.main(["run", "--config", str(cfg_path)]) == 0
        traces = sorted((tmp_path / "out" / "traces").glob("*.jsonl"))
        assert traces
        code = cli.main(
            ["trace", "--in", str(traces[0]), "--format", "csv",
             "--out", str(tmp_path / "t.csv")]
        )
        assert code == 0
        assert (tmp_path / "t.csv").read_text().startswith("v,level,rank")

    def test_load_sweep_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sweep(tmp_path / "nothing")
