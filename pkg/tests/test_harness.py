import json
from pathlib import Path

import numpy as np
import pytest

from deene import cli, harness
from deene.errors import ConfigurationError, DeePCError
from deene.harness import BenchmarkReport, ExperimentConfig, collect_data, emit_plot_data, run_benchmark

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def lti_config():
    return ExperimentConfig.load(CONFIGS / "lti_small.json")


def test_defaults_describe_the_arm_benchmark():
    cfg = ExperimentConfig()
    d = cfg.deepc_config()
    assert (d.T_ini, d.N) == (35, 20)
    assert (d.lambda_y, d.lambda_u, d.lambda_g) == (5e5, 5e5, 5e2)
    assert cfg.dims == (3, 3)
    np.testing.assert_allclose(d.input_bounds, [[-np.pi / 6, np.pi / 6]] * 3)
    assert cfg.make_reference().shape == (300, 3)
    assert cfg.data["n_trajectories"] * (cfg.data["T_i"] - 55 + 1) == 2300


def test_config_rejects_bad_fields():
    with pytest.raises(ConfigurationError, match="unknown"):
        ExperimentConfig.from_dict({"plnt": {}})
    with pytest.raises(ConfigurationError, match="T_i"):
        ExperimentConfig.from_dict({"data": {"T_i": 50}})
    with pytest.raises(ConfigurationError, match="input_bounds"):
        ExperimentConfig.from_dict({"data": {"input_bounds": [[-1, 1]]}})
    with pytest.raises(ConfigurationError, match="controller.s"):
        ExperimentConfig.from_dict({"controller": {"s": 21}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"deepc": {"lambda_g": 0.0}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"deepc": {"Q": [1.0, 2.0]}})


def test_config_file_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_collect_data_shapes_and_determinism(tmp_path):
    cfg = ExperimentConfig.from_dict({"data": {"n_trajectories": 3, "T_i": 60}})
    a = collect_data(cfg)
    assert len(a) == 3 and a[0].inputs.shape == (60, 3) and a[0].outputs.shape == (60, 3)
    assert np.abs(a[0].inputs).max() <= 0.3 * np.pi / 6
    harness.save_dataset(tmp_path / "a.json", a)
    harness.save_dataset(tmp_path / "b.json", collect_data(cfg))
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_collect_rejects_mismatched_workspace():
    cfg = ExperimentConfig.from_dict({
        # nominal pose sits at x = 0.50, outside a 0.3 m workspace
        "plant": {"workspace": 0.3},
        "data": {"n_trajectories": 2, "T_i": 100},
        "deepc": {"output_bounds": None},
    })
    with pytest.raises(ConfigurationError, match="rejected"):
        collect_data(cfg)


def test_minimal_dataset(lti_config):
    cfg = lti_config.with_overrides(data={"n_trajectories": 1, "T_i": 11})
    exp = harness.prepare(cfg)
    assert exp.partition.L == 2


def test_benchmark_rows(lti_config):
    rep = run_benchmark(lti_config, [0, 2])
    assert [(r.controller, r.s) for r in rep.rows] == [("deepc", 0), ("deepc", 2), ("deene", 0), ("deene", 2)]
    assert rep.row("deene", 0).control_steps == rep.row("deepc", 0).control_steps == 40
    assert rep.row("deene", 0).rmse == pytest.approx(rep.row("deepc", 0).rmse, rel=1e-6)
    assert {"machine", "python", "numpy"} <= set(rep.environment)
    back = BenchmarkReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back.rows == rep.rows
    md = rep.to_markdown()
    assert md.count("\n") == 6 and "DeeNE (s = 2)" in md
    with pytest.raises(ConfigurationError):
        run_benchmark(lti_config, [])


def test_failed_row_is_reported(lti_config, monkeypatch):
    exp = harness.prepare(lti_config)

    def broken(*args, **kwargs):
        raise DeePCError("no solution")

    monkeypatch.setattr(exp.problem, "solve", broken)
    rep = run_benchmark(lti_config, [0], experiment=exp)
    assert all(r.failed for r in rep.rows)
    assert "no solution" in rep.rows[0].error
    assert "failed" in rep.to_markdown()


def test_plot_data_files(tmp_path, lti_config):
    exp = harness.prepare(lti_config)
    trace = harness.run_experiment(exp)
    files = emit_plot_data(trace, tmp_path / "figs")
    names = {f.name for f in files}
    assert names == {"inputs.csv", "outputs.csv"}
    rows = (tmp_path / "figs" / "inputs.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 40 and rows[0] == "t,u_1"


def test_plot_data_for_arm_with_box(tmp_path):
    cfg = ExperimentConfig.load(CONFIGS / "arm_safety.json").with_overrides(
        controller={"T_c": 20}, reference={"length": 20}
    )
    exp = harness.prepare(cfg)
    trace = harness.run_experiment(exp)
    trace.to_csv(tmp_path / "t.csv")
    files = emit_plot_data(tmp_path / "t.csv", tmp_path / "figs", box=cfg.box(), face=exp.face)
    names = {f.name for f in files}
    assert {"path.csv", "orientation.csv", "box.json"} <= names
    box = json.loads((tmp_path / "figs" / "box.json").read_text())
    assert box["lo"] == [0.30, 0.70] and box["face"]["channel"] in (0, 1)
    report = BenchmarkReport([], [0, 1], {})
    assert emit_plot_data(report, tmp_path / "rep")[0].name == "report.md"


def test_unwritable_plot_path(tmp_path, lti_config):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_plot_data(BenchmarkReport([], None, {}), blocker / "sub")


def test_start_inside_box_is_rejected():
    cfg = ExperimentConfig.from_dict({
        "data": {"n_trajectories": 2},
        "unsafe_box": {"lo": [0.4, 0.7], "hi": [0.6, 0.9]},
    })
    with pytest.raises(ConfigurationError, match="inside"):
        harness.run_experiment(harness.prepare(cfg))


def test_output_dir_override(monkeypatch, tmp_path):
    monkeypatch.delenv(harness.OUTPUT_DIR_ENV, raising=False)
    assert harness.output_path("a/b.json") == Path("a/b.json")
    monkeypatch.setenv(harness.OUTPUT_DIR_ENV, str(tmp_path))
    assert harness.output_path("a/b.json") == tmp_path / "b.json"
    assert harness.output_path("figs", is_dir=True) == tmp_path


def test_cli_round_trip(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(harness.OUTPUT_DIR_ENV, raising=False)
    cfg = str(CONFIGS / "lti_small.json")
    assert cli.main(["collect", "--config", cfg, "--out", str(tmp_path / "data")]) == 0
    data = str(tmp_path / "data" / "dataset.json")
    assert cli.main(["bench", "--config", cfg, "--data", data, "--s", "0,1",
                     "--report", str(tmp_path / "r.json"), "--markdown", str(tmp_path / "r.md")]) == 0
    assert len(json.loads((tmp_path / "r.json").read_text())["rows"]) == 4
    assert cli.main(["run", "--config", cfg, "--data", data, "--mode", "deepc", "--out", str(tmp_path / "run")]) == 0
    assert cli.main(["plot-data", "--trace", str(tmp_path / "run" / "trace.csv"), "--out", str(tmp_path / "figs")]) == 0
    assert (tmp_path / "figs" / "inputs.csv").exists()
    assert cli.main(["solve", "--config", cfg, "--data", data, "--out", str(tmp_path / "sol.json")]) == 0
    assert "solution" in json.loads((tmp_path / "sol.json").read_text())
    monkeypatch.setenv(harness.OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert cli.main(["plot-data", "--report", str(tmp_path / "r.json"), "--out", "ignored"]) == 0
    assert (tmp_path / "env" / "report.md").exists()


def test_cli_exit_codes(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "bad.json").write_text(json.dumps({"deepc": {"N": 0}}))
    assert cli.main(["bench", "--config", "bad.json", "--s", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["bench", "--config", str(CONFIGS / "lti_small.json"), "--s", "x"]) == cli.EXIT_CONFIG
    assert cli.main(["plot-data", "--out", "figs"]) == cli.EXIT_CONFIG

    def broken(self, *args, **kwargs):
        raise DeePCError("no solution")

    monkeypatch.setattr("deene.deepc.DeePCProblem.solve", broken)
    code = cli.main(["solve", "--config", str(CONFIGS / "lti_small.json"), "--out", "s.json"])
    assert code == cli.EXIT_SOLVER
    code = cli.main(["bench", "--config", str(CONFIGS / "lti_small.json"), "--s", "0", "--report", "r.json"])
    assert code == cli.EXIT_SOLVER and (tmp_path / "r.json").exists()
