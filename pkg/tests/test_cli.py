import csv
import json
import math
import subprocess
import sys

import pytest

from olslab.cli import RunManifest, main, run
from olslab.errors import ValidationError
from olslab.experiments import ExperimentConfig
from olslab.gramians import BoundReport, GramianSummary, gramian_sum
from olslab.io import load_matrix, parse_matrix, write_csv
from olslab.lti import Trajectory


def call(tmp_path, *argv, sub="out"):
    status, manifest = run([*argv, "--out", str(tmp_path / sub)])
    return status, manifest


def write_config(tmp_path, **overrides):
    cfg = {"matrix": [[0.5]], "t_grid": [20, 60, 200], "epsilon": 0.3, "delta": 0.2, "n_trials": 12}
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_bounds_example(tmp_path):
    status, manifest = call(tmp_path, "bounds", "--matrix", "[[0.5]]", "--epsilon", "0.1", "--delta", "0.05",
                            "--constant", "1")
    assert status == 0
    report = json.loads((tmp_path / "out" / "bounds.json").read_text())
    assert report["minimal_t"] >= 1
    assert report["J"] == pytest.approx(2.0, abs=1e-9)
    # J^2 = 4 < 1/eps^2, so the requirement is 100 (log 20 + 1)
    assert report["required_lambda_min"] == pytest.approx(100 * (math.log(20) + 1))
    assert manifest.master_seed == 1729
    assert all((tmp_path / "out" / p.split("/")[-1]).exists() for p in manifest.outputs)


def test_bounds_report_roundtrip(tmp_path):
    call(tmp_path, "bounds", "--matrix", "[[0.5, 0.1], [0.0, 0.3]]", "--epsilon", "0.2", "--delta", "0.1")
    data = json.loads((tmp_path / "out" / "bounds.json").read_text())
    assert BoundReport.from_dict(data).to_dict() == data


def test_simulate_estimate_pipeline(tmp_path):
    assert call(tmp_path, "simulate", "--matrix", "[[0.5, 0.1], [0.0, 0.3]]", "--t", "200", sub="sim")[0] == 0
    traj_path = tmp_path / "sim" / "trajectory.json"
    traj = Trajectory.from_dict(json.loads(traj_path.read_text()))
    assert traj.t == 200 and traj.seed == 1729
    status, _ = call(tmp_path, "estimate", "--trajectory", str(traj_path), "--true-A", "[[0.5, 0.1], [0.0, 0.3]]")
    assert status == 0
    est = json.loads((tmp_path / "out" / "estimate.json").read_text())
    assert est["error_opnorm"] is not None and est["error_opnorm"] < 0.5
    assert est["error_identity_residual"] <= 1e-9

    status, _ = call(tmp_path, "estimate", "--trajectory", str(traj_path), sub="plain")
    assert json.loads((tmp_path / "plain" / "estimate.json").read_text())["error_opnorm"] is None


def test_spectrum_and_diagnostics(tmp_path):
    call(tmp_path, "simulate", "--matrix", "[[0.5]]", "--t", "500", sub="sim")
    traj = str(tmp_path / "sim" / "trajectory.json")
    assert call(tmp_path, "spectrum-check", "--trajectory", traj, "--matrix", "[[0.5]]", sub="iso")[0] == 0
    iso = json.loads((tmp_path / "iso" / "isometry.json").read_text())
    assert iso["defect"] >= 0
    assert call(tmp_path, "diagnostics", "--trajectory", traj, "--matrix", "[[0.5]]", "--epsilon", "0.3",
                "--delta", "0.1", sub="diag")[0] == 0
    diag = json.loads((tmp_path / "diag" / "diagnostics.json").read_text())
    assert diag["implication_holds"]


def test_hw_check_csv(tmp_path):
    status, _ = call(tmp_path, "hw-check", "--matrix", "[[1, 0], [0, 1], [1, 1]]", "--eps", "0.1,0.5,1",
                     "--trials", "2000")
    assert status == 0
    rows = list(csv.DictReader((tmp_path / "out" / "hw.csv").open()))
    assert [float(r["eps"]) for r in rows] == [0.1, 0.5, 1.0]


def test_pac_and_decay(tmp_path):
    cfg = write_config(tmp_path)
    assert call(tmp_path, "pac-experiment", "--config", str(cfg), "--t", "60", sub="pac")[0] == 0
    rows = list(csv.DictReader((tmp_path / "pac" / "pac_t60.csv").open()))
    assert len(rows) == 12 and set(rows[0]) == {"trial", "seed", "error", "e2_indicator", "selfnorm_value"}
    assert call(tmp_path, "decay", "--config", str(cfg), sub="decay")[0] == 0
    header = (tmp_path / "decay" / "decay.csv").read_text().splitlines()[0]
    assert header == "t,lambda_min,median,quantile,bound_rhs"


def test_calibrate(tmp_path):
    path = tmp_path / "cal.json"
    path.write_text(json.dumps({"systems": [[[0.0]], [[0.5]], [[0.9]]], "epsilon": 0.3, "delta": 0.2,
                                "n_probe_trials": 10}))
    assert call(tmp_path, "calibrate", "--config", str(path))[0] == 0
    assert "c_hat" in json.loads((tmp_path / "out" / "calibration.json").read_text())


def test_missing_flag_names_it(tmp_path, capsys):
    status, _ = call(tmp_path, "bounds", "--matrix", "[[0.5]]", "--delta", "0.1")
    assert status == 2
    assert "--epsilon" in capsys.readouterr().err


def test_unknown_subcommand(tmp_path, capsys):
    status, _ = call(tmp_path, "plot")
    assert status == 2
    assert "usage" in capsys.readouterr().err


def test_malformed_matrices(tmp_path, capsys):
    assert call(tmp_path, "bounds", "--matrix", "[[0.5, 0.1], [0.2]]", "--epsilon", "0.1", "--delta", "0.1")[0] == 2
    assert "row 1" in capsys.readouterr().err
    assert call(tmp_path, "bounds", "--matrix", "[[0.5, NaN], [0.0, 0.1]]", "--epsilon", "0.1",
                "--delta", "0.1")[0] == 2
    assert "matrix[0][1]" in capsys.readouterr().err
    assert call(tmp_path, "bounds", "--matrix", "[[1.5]]", "--epsilon", "0.1", "--delta", "0.1")[0] == 2


def test_parse_matrix_messages():
    with pytest.raises(ValidationError, match=r"B\[1\]\[0\] is not finite"):
        parse_matrix([[1.0], [float("inf")]], "B", square=False)
    with pytest.raises(ValidationError, match="inline matrices"):
        load_matrix(json.dumps([[0.0] * 5] * 5))


def test_matrix_from_file(tmp_path):
    p = tmp_path / "A.json"
    p.write_text(json.dumps([[0.1] * 5] * 5))
    assert load_matrix(str(p)).shape == (5, 5)


def test_csv_full_precision(tmp_path):
    x = 0.1 + 0.2
    path = write_csv(tmp_path / "x.csv", [{"v": x, "w": 1 / 3}], ["v", "w"])
    row = next(csv.DictReader(path.open()))
    assert float(row["v"]) == x and float(row["w"]) == 1 / 3


def test_manifest_replay_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    status, manifest = call(tmp_path, "pac-experiment", "--config", str(cfg), sub="first")
    assert status == 0
    saved = RunManifest.from_dict(json.loads((tmp_path / "first" / "manifest.json").read_text()))
    assert saved.argv == manifest.argv and "--seed" in saved.argv
    status, again = run([*saved.argv, "--out", str(tmp_path / "second")])
    assert status == 0
    for p in manifest.outputs:
        name = p.split("/")[-1]
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()
    assert saved.config == again.config


def test_config_roundtrip_via_manifest(tmp_path):
    cfg = write_config(tmp_path, master_seed=7)
    _, manifest = call(tmp_path, "decay", "--config", str(cfg))
    parsed = ExperimentConfig.from_dict(manifest.config)
    assert parsed.to_dict() == manifest.config
    assert manifest.master_seed == 7


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("OLSLAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["simulate", "--matrix", "[[0.2]]", "--t", "5"])[0] == 0
    assert (tmp_path / "env" / "trajectory.json").exists()
    assert (tmp_path / "env" / "manifest.json").exists()


def test_gramian_summary_json():
    g = gramian_sum([[0.4, 0.1], [0.0, 0.2]], 30)
    assert GramianSummary.from_dict(json.loads(json.dumps(g.to_dict()))).to_dict() == g.to_dict()


def test_main_prints_outputs(tmp_path, capsys):
    assert main(["simulate", "--matrix", "[[0.2]]", "--t", "3", "--out", str(tmp_path)]) == 0
    assert "trajectory.json" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "olslab.cli", "bounds", "--matrix", "[[0.0]]", "--epsilon", "0.1",
                          "--delta", "0.05", "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads((tmp_path / "bounds.json").read_text())["minimal_t"] == 400
