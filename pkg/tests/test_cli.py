import csv
import json

import pytest
import yaml

from hdeepc import cli
from hdeepc.config import load_config, parse_config, shipped_configs
from hdeepc.errors import ConfigInvalid

SHIPPED = shipped_configs()


def _shrunk(tmp_path, name, **loop):
    """Copy of a shipped config with a shorter loop, written to tmp_path."""
    data = yaml.safe_load(SHIPPED[name].read_text())
    data["loop"].update(loop)
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_shipped_configs_present():
    assert {"bess_1a_hdeepc", "bess_1b_nl_hdeepc", "bess_1c_nl_hdeepc", "coupled8_2a_split",
            "coupled8_2b_hdeepc", "coupled8_observer"} <= set(SHIPPED)


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_shipped_configs_pass_audit(name, capsys):
    code, report = cli.cmd_audit(SHIPPED[name])
    assert code == 0
    assert report["passed"], report
    assert "assumption_2: pass" in capsys.readouterr().out


def test_missing_block_named():
    with pytest.raises(ConfigInvalid) as exc:
        parse_config({"controller": {}, "loop": {}})
    assert "plant" in str(exc.value) and exc.value.key == "plant"


def test_unknown_key_rejected():
    data = yaml.safe_load(SHIPPED["bess_1a_hdeepc"].read_text())
    data["controller"]["horizon"] = 3
    with pytest.raises(ConfigInvalid) as exc:
        parse_config(data)
    assert "controller.horizon" in str(exc.value)


def test_bad_value_names_key():
    data = yaml.safe_load(SHIPPED["bess_1a_hdeepc"].read_text())
    data["controller"]["lambda_g"] = -1.0
    with pytest.raises(ConfigInvalid) as exc:
        parse_config(data)
    assert exc.value.key == "controller.lambda_g"


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("controller: {}\nloop: {}\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert "plant" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_IO
    not_yaml = tmp_path / "x.yaml"
    not_yaml.write_text("plant: [unclosed")
    assert cli.main(["audit", str(not_yaml)]) == cli.EXIT_CONFIG


def test_solver_abort_exit_code(tmp_path):
    data = yaml.safe_load(SHIPPED["coupled8_observer"].read_text())
    data["loop"] = {"steps": 2, "seeds": [0], "reference": [0.5, 0.0, 0.5]}
    # contradictory output box: every solve is infeasible
    data["controller"]["y_box"] = {"lower": [1.0, None, None], "upper": [0.0, None, None]}
    path = tmp_path / "abort.yaml"
    path.write_text(yaml.safe_dump(data))
    assert cli.main(["run", str(path)]) == cli.EXIT_CONFIG  # rejected as lower > upper
    data["controller"]["y_box"] = {"lower": [50.0, None, None], "upper": [60.0, None, None]}
    data["controller"]["u_box"] = {"lower": [-1e-6, -1e-6], "upper": [1e-6, 1e-6]}
    path.write_text(yaml.safe_dump(data))
    out = tmp_path / "o"
    assert cli.main(["run", str(path), "--out-dir", str(out)]) == cli.EXIT_OK
    assert cli.main(["run", str(path), "--out-dir", str(out), "--abort-on-solver-failure"]) == cli.EXIT_ABORT


def test_run_writes_artifacts(tmp_path):
    path = _shrunk(tmp_path, "bess_1a_hdeepc", steps=2)
    assert cli.main(["run", str(path), "--out-dir", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "bess_1a_HDeePC_summary.json").read_text())
    assert sorted(summary) == sorted(cli.SUMMARY_KEYS)
    assert "total_cost" in summary and "mean_solve_time" in summary
    rows = list(csv.reader(open(tmp_path / "out" / "bess_1a_HDeePC_seed0.csv")))
    assert rows[0] == ["k", "u1", "u2", "y1", "y2", "r1", "r2", "x1", "x2", "x3", "stage_cost"]
    assert len(rows) == 3


def test_seed_override_changes_noise_not_file(tmp_path):
    path = _shrunk(tmp_path, "bess_1a_hdeepc", steps=2)
    before = path.read_text()
    cli.main(["run", str(path), "--out-dir", str(tmp_path / "a")])
    cli.main(["run", str(path), "--out-dir", str(tmp_path / "b"), "--seed", "9"])
    assert path.read_text() == before
    a = json.loads((tmp_path / "a" / "bess_1a_HDeePC_summary.json").read_text())
    b = json.loads((tmp_path / "b" / "bess_1a_HDeePC_summary.json").read_text())
    assert a["seeds"] == [0] and b["seeds"] == [9]
    assert a["total_cost"] != b["total_cost"]


def test_audit_detects_short_data(tmp_path, capsys):
    data = yaml.safe_load(SHIPPED["bess_1a_hdeepc"].read_text())
    data["controller"]["T"] = 120  # below (m+1)(T_ini+N+n)-1 = 125
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump(data))
    code, report = cli.cmd_audit(path)
    a2 = [c for c in report["checks"] if c["name"] == "assumption_2"][0]
    assert a2["status"] == "fail" and a2["achieved_rank"] < a2["required_rank"]


def test_audit_deepc_not_applicable(tmp_path):
    data = yaml.safe_load(SHIPPED["bess_1a_hdeepc"].read_text())
    data["controller"]["variant"] = "DeePC"
    path = tmp_path / "d.yaml"
    path.write_text(yaml.safe_dump(data))
    _, report = cli.cmd_audit(path, out_dir=tmp_path)
    a1 = [c for c in report["checks"] if c["name"] == "assumption_1"][0]
    assert a1["status"] == "not applicable"
    assert (tmp_path / "bess_1a_audit.json").exists()


def test_split_sweep_counts(tmp_path):
    path = _shrunk(tmp_path, "coupled8_2a_split", steps=1)
    assert cli.main(["sweep", str(path), "split", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "coupled8_2a_sweep_split.csv")))
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    assert len(rows) == 9
    counts = [int(r["equality_constraint_count"]) for r in rows]
    assert all(a - b == 4 for a, b in zip(counts, counts[1:]))


def test_lambda_sweep_single_row(tmp_path):
    path = _shrunk(tmp_path, "coupled8_2b_hdeepc", steps=1, seeds=[0])
    assert cli.main(["sweep", str(path), "lambda", "--values", "0.5", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "coupled8_2b_sweep_lambda.csv")))
    assert len(rows) == 1 and float(rows[0]["value"]) == 0.5


def test_tau_q_sweep_two_rows(tmp_path):
    path = _shrunk(tmp_path, "bess_1a_hdeepc", steps=1)
    assert cli.main(["sweep", str(path), "tau_q", "--values", "1e3", "1e4", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bess_1a_sweep_tau_q.csv")))
    assert [float(r["value"]) for r in rows] == [1e3, 1e4]


def test_sweep_rejects_bad_values(tmp_path):
    path = _shrunk(tmp_path, "coupled8_2a_split", steps=1)
    out = tmp_path / "never"
    assert cli.main(["sweep", str(path), "split", "--values", "9", "--out-dir", str(out)]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", str(path), "tau_q", "--values", "10", "--out-dir", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_load_config_roundtrip():
    cfg = load_config(SHIPPED["coupled8_2b_hdeepc"])
    assert cfg.plant.time_varying.rows == [2, 3, 4, 5, 6, 7]
    assert cfg.loop.noise.kind == "Uniform" and cfg.loop.noise.scale == 2e-5
