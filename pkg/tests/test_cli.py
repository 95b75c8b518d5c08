import json

import numpy as np
import pytest

from qrfselect.cli import EXIT_FILE, EXIT_INVALID, EXIT_OK, EXIT_USAGE, main

SELECT_FAST = ["--trees", "60", "--n", "200"]


@pytest.fixture()
def sim_csv(tmp_path):
    path = tmp_path / "sim.csv"
    code = main(
        [
            "simulate", "--model", "1", "--n", "250", "--d", "15",
            "--seed", "3", "--out", str(path),
        ]
    )
    assert code == EXIT_OK
    return path


def test_simulate_writes_csv(sim_csv):
    header = sim_csv.read_text().splitlines()[0]
    assert header.split(",")[0] == "y"
    assert len(header.split(",")) == 16


def test_select_end_to_end(sim_csv, tmp_path, capsys):
    out = tmp_path / "trace.json"
    code = main(
        [
            "select", "--data", str(sim_csv), "--response", "y",
            "--trees", "60", "--alpha", "0.05", "--seed", "7",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["method"] == "forward_crps"
    assert payload["config"]["trees"] == 60
    assert payload["config"]["seed"] == 7
    assert "wall_clock_s" in payload
    step = payload["steps"][0]
    assert {"risks", "chosen", "M", "decision"} <= set(step)
    err = capsys.readouterr().err
    assert "selected:" in err


def test_select_rerun_byte_identical_modulo_wall_clock(sim_csv, tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        code = main(
            [
                "select", "--data", str(sim_csv), "--response", "y",
                "--trees", "60", "--seed", "7", "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        payload = json.loads(out.read_text())
        payload.pop("wall_clock_s")
        outs.append(json.dumps(payload, sort_keys=True))
    assert outs[0] == outs[1]


def test_select_usage_error_without_data(capsys):
    assert main(["select", "--response", "y"]) == EXIT_USAGE


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == EXIT_USAGE


def test_select_missing_file(tmp_path):
    code = main(
        ["select", "--data", str(tmp_path / "no.csv"), "--response", "y", "--seed", "1"]
    )
    assert code == EXIT_FILE


def test_select_invalid_data(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x1\n1,\n")
    code = main(["select", "--data", str(bad), "--response", "y", "--seed", "1"])
    assert code == EXIT_INVALID


def test_select_bad_config_file(sim_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus = 1\n")
    code = main(
        [
            "select", "--data", str(sim_csv), "--response", "y",
            "--config", str(cfg), "--seed", "1",
        ]
    )
    assert code == EXIT_INVALID


def test_seed_generated_and_printed(sim_csv, tmp_path, capsys):
    out = tmp_path / "trace.json"
    code = main(
        ["select", "--data", str(sim_csv), "--response", "y", "--trees", "50", "--out", str(out)]
    )
    assert code == EXIT_OK
    assert "generated seed" in capsys.readouterr().err


def test_ngr_selects_linear_signal(tmp_path, capsys):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((800, 4))
    y = 1.5 * x[:, 1] + rng.standard_normal(800)
    path = tmp_path / "lin.csv"
    with open(path, "w") as fh:
        fh.write("y,a,b,c,d\n")
        for i in range(800):
            fh.write(",".join(repr(float(v)) for v in [y[i], *x[i]]) + "\n")
    out = tmp_path / "ngr.json"
    code = main(["ngr", "--data", str(path), "--response", "y", "--out", str(out)])
    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["method"] == "ngr_bic"
    assert payload["selected"] == ["b"]


def test_backmse_report(sim_csv, tmp_path):
    out = tmp_path / "back.json"
    code = main(
        [
            "backmse", "--data", str(sim_csv), "--response", "y",
            "--trees", "40", "--replicates", "2", "--seed", "2", "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["method"] == "backmse"
    assert len(payload["path"]) == 15
    assert payload["config"]["replicates"] == 2


def test_evaluate_reports_risk(sim_csv, tmp_path):
    out = tmp_path / "eval.json"
    code = main(
        [
            "evaluate", "--data", str(sim_csv), "--response", "y",
            "--covariates", "x1,x6", "--trees", "60", "--seed", "4",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["covariates"] == ["x1", "x6"]
    assert payload["oob_crps_risk"] > 0


def test_verify_emits_diagrams(sim_csv, tmp_path):
    prefix = tmp_path / "diag"
    code = main(
        [
            "verify", "--data", str(sim_csv), "--response", "y",
            "--covariates", "x1", "--trees", "60", "--seed", "4",
            "--out-prefix", str(prefix),
        ]
    )
    assert code == EXIT_OK
    assert (tmp_path / "diag_pit.csv").exists()
    assert (tmp_path / "diag_reliability_q50.csv").exists()
    assert (tmp_path / "diag_quantile_reliability_q75.csv").exists()
    pit_rows = (tmp_path / "diag_pit.csv").read_text().strip().splitlines()
    assert len(pit_rows) == 11


def test_experiment_outputs(tmp_path):
    prefix = tmp_path / "exp"
    code = main(
        [
            "experiment", "--model", "1", "--n", "200", "--d", "15",
            "--reps", "2", "--method", "ngr_bic", "--seed", "5",
            "--out-prefix", str(prefix),
        ]
    )
    assert code == EXIT_OK
    rows = (tmp_path / "exp_replications.csv").read_text().strip().splitlines()
    assert len(rows) == 3
    agg = json.loads((tmp_path / "exp_summary.json").read_text())
    assert agg["method"] == "ngr_bic"
    assert agg["replications"] == 2


def test_stdout_when_out_absent(sim_csv, capsys):
    code = main(
        ["evaluate", "--data", str(sim_csv), "--response", "y", "--trees", "50", "--seed", "4"]
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    payload = json.loads(out)
    assert payload["method"] == "evaluate"
