"""
Tests for configuration, reports, artifact export, the pipeline and the CLI
"""

import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from src.pointwave import __version__
from src.pointwave.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from src.pointwave.config import ExperimentConfig, load_config
from src.pointwave.errors import ConfigError, ExportError, ParameterError, PlanningError, QualityError
from src.pointwave.export import (
    read_header,
    read_report,
    read_snapshot,
    read_table,
    write_report,
    write_snapshot,
    write_table,
)
from src.pointwave.fdtd import BoxGeometry, WaveField, build_grid
from src.pointwave.harness import PointScattererPipeline
from src.pointwave.report import REPORT_COLUMNS, ErrorReport, fit_slope

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def write_yaml(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def pipeline_grid(pipeline, plan):
    f = pipeline.cfg.fdtd
    return build_grid(plan.half_width, plan.h, plan.eps, pipeline.spec, f.n_min, f.cfl)


def power_law_rows(eps_values, free_scale=2.0, eff_scale=1.0, eff_power=2.0):
    return [
        {"eps": e, "E_free": free_scale * e, "E_eff": eff_scale * e ** eff_power,
         "E_free_excl": free_scale * e, "E_eff_excl": eff_scale * e ** eff_power}
        for e in eps_values
    ]


class TestConfig:
    """Tests for the experiment-file loader"""

    def test_defaults_validate(self):
        cfg = ExperimentConfig().validate()
        assert cfg.sweep.eps == (0.3, 0.2, 0.15, 0.1)
        assert cfg.time.route == "duhamel-ode"

    def test_shipped_configs_load(self):
        for name in ("ball.yaml", "sweep.yaml"):
            cfg = load_config(os.path.join(CONFIG_DIR, name), environ={})
            assert cfg.domain.shape == "ball"

    def test_load_from_file(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "spectral:\n  resolution: 12\nsweep:\n  eps: [0.3, 0.1]\n")
        cfg = load_config(path, environ={})
        assert cfg.spectral.resolution == 12
        assert cfg.sweep.eps == (0.3, 0.1)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "spectral:\n  resolutoin: 12\n")
        with pytest.raises(ConfigError, match="resolutoin"):
            load_config(path, environ={})

    def test_unknown_section_rejected(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "solver:\n  modes: 3\n")
        with pytest.raises(ConfigError):
            load_config(path, environ={})

    def test_precedence(self, tmp_path):
        """overrides > environment > file > defaults"""
        path = write_yaml(tmp_path / "exp.yaml", "time:\n  dt: 0.004\n")
        assert load_config(path, environ={}).time.dt == 0.004
        env = {"POINTWAVE_TIME_DT": "0.002"}
        assert load_config(path, environ=env).time.dt == 0.002
        assert load_config(path, {"time.dt": 0.001}, environ=env).time.dt == 0.001

    def test_env_key_with_underscore(self):
        cfg = load_config(environ={"POINTWAVE_FDTD_MARGIN_CELLS": "6"})
        assert cfg.fdtd.margin_cells == 6

    def test_env_flow_list(self):
        cfg = load_config(environ={"POINTWAVE_SWEEP_EPS": "[0.3, 0.1]"})
        assert cfg.sweep.eps == (0.3, 0.1)

    def test_int_accepted_for_float(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "fdtd:\n  memory_budget_gb: 2\n")
        assert load_config(path, environ={}).fdtd.memory_budget_gb == 2.0

    def test_quoted_number_not_coerced(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "spectral:\n  resolution: '12'\n")
        with pytest.raises(ConfigError, match="spectral.resolution"):
            load_config(path, environ={})

    def test_malformed_yaml(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "spectral:\n  resolution: [12\n")
        with pytest.raises(ConfigError):
            load_config(path, environ={})

    def test_empty_file_gives_defaults(self, tmp_path):
        path = write_yaml(tmp_path / "exp.yaml", "")
        assert load_config(path, environ={}).sweep.eps == ExperimentConfig().sweep.eps

    def test_unknown_env_variable(self):
        with pytest.raises(ConfigError):
            load_config(environ={"POINTWAVE_FDTD_PML": "1"})

    def test_bad_choice_and_type(self):
        with pytest.raises(ConfigError):
            load_config(None, {"fdtd.boundary": "pml"}, environ={})
        with pytest.raises(ConfigError):
            load_config(None, {"spectral.modes": "many"}, environ={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "missing.yaml"), environ={})

    def test_coarse_time_step_rejected(self):
        with pytest.raises(ParameterError, match="ρ_min/8"):
            load_config(None, {"time.dt": 0.1}, environ={})

    def test_eps_range(self):
        with pytest.raises(ParameterError):
            load_config(None, {"sweep.eps": (0.2, 1.0)}, environ={})

    def test_config_hash(self):
        a = ExperimentConfig()
        assert a.config_hash() == ExperimentConfig().config_hash()
        assert a.config_hash() != a.with_values({"spectral.seed": 1}).config_hash()

    def test_horizon_modes(self):
        cfg = ExperimentConfig()
        assert cfg.horizon_for(0.1) == 3.0
        assert cfg.with_values({"time.tau": 1.0}).horizon_for(0.1) == pytest.approx(10.0)
        assert ExperimentConfig.implied_tau(0.1, 10.0) == pytest.approx(1.0)

    def test_exclusion_radius(self):
        cfg = ExperimentConfig()
        assert cfg.exclusion_radius(0.05) == pytest.approx(0.1)
        assert cfg.with_values({"compare.r_excl": 0.3}).exclusion_radius(0.05) == 0.3


class TestErrorReport:
    """Tests for the error table and slope fits"""

    def test_sorted_by_eps_descending(self):
        report = ErrorReport.from_rows(power_law_rows([0.1, 0.3, 0.2]))
        assert report.table["eps"].tolist() == [0.3, 0.2, 0.1]
        assert list(report.table.columns) == REPORT_COLUMNS

    def test_slope_of_power_law(self):
        report = ErrorReport.from_rows(power_law_rows([0.4, 0.2, 0.1, 0.05]))
        free = report.slopes["E_free"]
        assert free.slope == pytest.approx(1.0)
        assert free.intercept == pytest.approx(math.log(2.0))
        assert free.drop_finest_delta == pytest.approx(0.0, abs=1e-12)
        assert free.points == 4
        assert report.slopes["E_eff_excl"].slope == pytest.approx(2.0)

    def test_too_few_points(self):
        report = ErrorReport.from_rows(power_law_rows([0.3, 0.2]))
        assert all(fit is None for fit in report.slopes.values())

    def test_non_positive_rows_skipped(self):
        rows = power_law_rows([0.4, 0.2, 0.1, 0.05])
        rows[0]["E_free"] = 0.0
        fit = fit_slope(ErrorReport.from_rows(rows).table, "E_free")
        assert fit.points == 3

    def test_ordering_failures(self):
        rows = power_law_rows([0.3, 0.2, 0.1])
        rows[1]["E_eff_excl"] = rows[1]["E_free_excl"]
        report = ErrorReport.from_rows(rows)
        assert report.ordering_failures() == [0.2]
        assert report.ordering_failures(excl=False) == []


class TestExport:
    """Tests for artifact writers and readers"""

    def test_report_round_trip_is_exact(self, tmp_path):
        rows = power_law_rows([0.3, 0.2, 0.15, 0.1], free_scale=1.0 / 3.0)
        report = ErrorReport.from_rows(rows, config=ExperimentConfig().to_dict(), version=__version__)
        written = write_report(report, str(tmp_path))
        back = read_report(written["report.csv"])
        pd.testing.assert_frame_equal(back.table, report.table, check_exact=True)
        assert back.config == json.loads(json.dumps(report.config))
        assert back.version == __version__

    def test_sidecar_and_plot_script(self, tmp_path):
        report = ErrorReport.from_rows(power_law_rows([0.3, 0.2, 0.1]))
        written = write_report(report, str(tmp_path), runtime={"timings_seconds": {"sweep": 1.5}})
        with open(written["report.json"], encoding="utf-8") as handle:
            sidecar = json.load(handle)
        assert sidecar["slopes"]["E_free"]["slope"] == pytest.approx(1.0)
        assert sidecar["runtime"]["timings_seconds"]["sweep"] == 1.5
        assert "report.csv" in open(written["report.gp"], encoding="utf-8").read()

    def test_empty_report_writes_header_only(self, tmp_path):
        written = write_report(ErrorReport.empty(), str(tmp_path))
        table = read_table(written["report.csv"])
        assert list(table.columns) == REPORT_COLUMNS
        assert len(table) == 0

    def test_parquet_output(self, tmp_path):
        frame = pd.DataFrame({"t": [0.0, 0.5], "u": [1.0, 2.0]})
        written = write_table(frame, str(tmp_path / "trace.csv"), formats=("csv", "parquet"))
        pd.testing.assert_frame_equal(read_table(written["parquet"]), frame)

    def test_parquet_carries_header_echo(self, tmp_path):
        config = {"sweep": {"eps": [0.2]}}
        written = write_table(pd.DataFrame({"a": [1.0]}), str(tmp_path / "t.csv"), config,
                              formats=("csv", "parquet"))
        header = read_header(written["parquet"])
        assert header["pointwave"] == __version__
        assert header["config"] == config

    def test_plot_script_skips_header_block(self, tmp_path):
        rows = power_law_rows([0.3, 0.2, 0.1])
        with_config = write_report(ErrorReport.from_rows(rows, config={"sweep": {"eps": [0.3]}}),
                                   str(tmp_path / "a"))
        script = open(with_config["report.gp"], encoding="utf-8").read()
        lines = open(with_config["report.csv"], encoding="utf-8").read().splitlines()
        assert lines[0].startswith("# pointwave") and lines[1].startswith("# config")
        assert not lines[3].startswith("#")
        assert "skip 3" in script and "skip 1 " not in script

        bare = write_report(ErrorReport.from_rows(rows), str(tmp_path / "b"))
        assert "skip 2" in open(bare["report.gp"], encoding="utf-8").read()

    def test_header_echo(self, tmp_path):
        config = {"sweep": {"eps": [0.2]}}
        written = write_table(pd.DataFrame({"a": [1.0]}), str(tmp_path / "t.csv"), config)
        header = read_header(written["csv"])
        assert header["pointwave"] == __version__
        assert header["config"] == config

    def test_snapshot_round_trip(self, tmp_path):
        geometry = BoxGeometry(h=0.1, n=3)
        values = np.random.default_rng(4).standard_normal(geometry.shape)
        written = write_snapshot(WaveField(0.75, geometry, values), str(tmp_path / "snap.bin"))
        back = read_snapshot(written["binary"])
        assert back.time == 0.75
        assert back.geometry.matches(geometry)
        assert np.array_equal(back.values, values)
        with open(written["json"], encoding="utf-8") as handle:
            assert json.load(handle)["dims"] == [7, 7, 7]

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(ExportError) as info:
            write_table(pd.DataFrame({"a": [1.0]}), str(blocker / "t.csv"))
        assert "blocker" in info.value.path


class TestPipeline:
    """End-to-end runs on a small experiment"""

    def test_plan(self, quick_config):
        pipeline = PointScattererPipeline(quick_config, verbose=False)
        plan = pipeline.plan_fdtd(0.5)
        assert plan.h == pytest.approx(0.125)
        assert plan.half_width == pytest.approx(2.5)
        assert plan.n == 20
        assert plan.bytes == 5 * 8 * 41 ** 3

    def test_budget_exceeded(self, quick_config):
        pipeline = PointScattererPipeline(quick_config, {"fdtd.memory_budget_gb": 1.0 / 1024}, verbose=False)
        with pytest.raises(PlanningError) as info:
            pipeline.check_budget([0.5])
        low, high = info.value.feasible_eps
        assert 0.5 < low < 0.999
        assert pipeline.plan_fdtd(low).gigabytes <= 1.0 / 1024
        assert high == 1.0

    def test_sample_times_end_at_horizon(self, quick_config):
        pipeline = PointScattererPipeline(quick_config, verbose=False)
        plan = pipeline.plan_fdtd(0.5)
        times = pipeline.sample_times(plan.horizon, pipeline_grid(pipeline, plan))
        assert len(times) == 3
        assert times == sorted(times)
        assert times[-1] == pytest.approx(1.0)

    def test_compare_row(self, quick_config):
        pipeline = PointScattererPipeline(quick_config, verbose=False)
        row = pipeline.run_compare(0.5)
        assert set(row) == set(REPORT_COLUMNS)
        assert all(np.isfinite(row[c]) and row[c] >= 0.0 for c in REPORT_COLUMNS)
        assert row["E_free_excl"] <= row["E_free"]
        assert row["E_eff_excl"] <= row["E_eff"]
        assert pipeline.last_run["implied_tau"] == pytest.approx(0.0, abs=1e-12)

    def test_sweep_writes_report(self, quick_config):
        pipeline = PointScattererPipeline(quick_config, verbose=False)
        report = pipeline.run_sweep()
        written = pipeline.export_report(report)
        assert len(report) == 1
        assert os.path.exists(written["report.csv"])
        assert os.path.exists(written["report.json"])
        assert report.runs[0]["K"] == pipeline.decomposition.K

    def test_identical_configs_write_identical_csv(self, quick_config):
        contents = []
        for _ in range(2):
            pipeline = PointScattererPipeline(quick_config, verbose=False)
            written = {**pipeline.export_spectrum(), **pipeline.export_modulation()}
            contents.append({os.path.basename(p): open(p, "rb").read()
                             for p in written.values()})
        assert contents[0] == contents[1]

    def test_last_run_empty_before_compare(self, quick_config):
        pipeline = PointScattererPipeline(quick_config, verbose=False)
        assert pipeline.last_run is None
        assert pipeline.last_result is None

    def test_strict_mode_raises_on_route_discrepancy(self, quick_config):
        strict = PointScattererPipeline(quick_config, {"time.route_tolerance": 1e-15},
                                        strict_mode=True, verbose=False)
        with pytest.raises(QualityError):
            strict.run_modulation()

    def test_lenient_mode_records_discrepancy(self, quick_config):
        lenient = PointScattererPipeline(quick_config, {"time.route_tolerance": 1e-15}, verbose=False)
        lenient.run_modulation()
        assert lenient.route_error > 1e-15

    def test_stage_output(self, quick_config, capsys):
        PointScattererPipeline(quick_config).run_spectrum()
        out = capsys.readouterr().out
        assert "[Spectrum]" in out
        assert "✅ Spectrum complete" in out


class TestCli:
    """Tests for exit codes and command dispatch"""

    def spectrum_cfg(self, tmp_path, delta=0.05, modes=16):
        return write_yaml(tmp_path / "spectrum.yaml",
                          f"spectral:\n  resolution: 8\n  modes: {modes}\n  delta: {delta}\n")

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["spectrum", "--frobnicate"])
        assert info.value.code == EXIT_USAGE

    def test_no_command(self):
        assert main([]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert main(["spectrum", "--config", str(tmp_path / "missing.yaml"), "--quiet"]) == EXIT_IO

    def test_eps_out_of_range(self, tmp_path):
        assert main(["spectrum", "--eps", "1.5", "--out", str(tmp_path), "--quiet"]) == EXIT_VALIDATION

    def test_spectrum_command(self, tmp_path, capsys):
        code = main(["spectrum", "--config", self.spectrum_cfg(tmp_path), "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_OK
        assert (tmp_path / "spectrum.csv").exists()
        assert "captured mass" in capsys.readouterr().out

    def test_unreachable_mass_target_is_numerical_failure(self, tmp_path, capsys):
        cfg = self.spectrum_cfg(tmp_path, delta=0.001, modes=4)
        assert main(["spectrum", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == EXIT_NUMERICAL
        assert "QualityError" in capsys.readouterr().err

    def test_compare_command(self, tmp_path, capsys):
        """Strict mode: a clean compare run passes the energy-drift check"""
        cfg = write_yaml(tmp_path / "compare.yaml",
                         "spectral:\n  resolution: 8\n  modes: 16\n  delta: 0.05\n"
                         "time:\n  horizon: 1.0\n"
                         "fdtd:\n  margin_cells: 2\n"
                         "compare:\n  samples: 3\n")
        code = main(["compare", "--config", cfg, "--eps", "0.5", "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_OK, capsys.readouterr().err
        table = read_table(str(tmp_path / "compare.csv"))
        assert table["eps"].tolist() == [0.5]

    @pytest.mark.slow
    def test_acceptance_sweep(self, tmp_path):
        """Unit ball, shell data, T = 3: u_eff beats u_free at every ε and converges faster"""
        cfg = load_config(os.path.join(CONFIG_DIR, "sweep.yaml"),
                          {"output.directory": str(tmp_path), "output.formats": ("csv",),
                           "output.figure": False},
                          environ={})
        report = PointScattererPipeline(cfg, verbose=False).run_sweep()
        assert report.ordering_failures() == []
        slopes = report.slopes
        assert slopes["E_free_excl"].slope == pytest.approx(1.0, abs=0.3)
        assert slopes["E_eff_excl"].slope >= slopes["E_free_excl"].slope + 0.2
