import json
import subprocess
import sys

import numpy as np
import pytest

from cli_harness import BIGRAM, run, run_all, setup_workspace, write_json
from maskdiff.cli import load_config, subseed
from maskdiff.model import load_checkpoint


@pytest.fixture
def ws(tmp_path):
    return tmp_path, setup_workspace(tmp_path)


def test_rerun_is_byte_identical(ws):
    tmp, configs = ws
    a, b = run_all(tmp, configs, "-a"), run_all(tmp, configs, "-b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes(), key


def test_train_log_and_checkpoint(ws):
    tmp, configs = ws
    assert run("train", "--config", configs["train"], "--out", tmp / "m.ckpt") == 0
    rows = (tmp / "m.ckpt.log.csv").read_text().splitlines()
    assert len(rows) == 101
    model, header = load_checkpoint(tmp / "m.ckpt")
    assert header["seed"] == 3 and header["N"] == model.parameter_count
    for row in rows[1:]:
        step, loss, tokens, c = row.split(",")
        assert float(c) == 6 * header["N"] * int(tokens)
    meta = json.loads((tmp / "m.ckpt.meta.json").read_text())
    assert meta["command"] == "train" and "seconds" in meta


def test_seed_flag_overrides(ws):
    tmp, configs = ws
    run("train", "--config", configs["train"], "--out", tmp / "a.ckpt")
    run("train", "--config", configs["train"], "--seed", "3", "--out", tmp / "b.ckpt")
    run("train", "--config", configs["train"], "--seed", "4", "--out", tmp / "c.ckpt")
    assert (tmp / "a.ckpt").read_bytes() == (tmp / "b.ckpt").read_bytes()
    assert (tmp / "a.ckpt").read_bytes() != (tmp / "c.ckpt").read_bytes()
    assert load_config("train", configs["train"], 9)["seed"] == 9
    assert subseed(1, 0) != subseed(1, 1)


def test_train_from_dataset_file(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"tokens": [0, 1, 1]}\n{"tokens": [1, 0, 0]}\n')
    cfg = write_json(tmp_path / "c.json", {"model": {"kind": "tabular", "K": 2, "L": 3},
                                           "data": {"dataset": str(tmp_path / "d.jsonl")},
                                           "train": {"steps": 5}})
    assert run("train", "--config", cfg, "--out", tmp_path / "m.ckpt") == 0


def test_config_errors_name_the_field(tmp_path, capsys):
    cases = {
        "missing-dataset": ({"model": {"kind": "tabular", "K": 2, "L": 3},
                             "data": {"dataset": str(tmp_path / "nope.jsonl")}}, "data.dataset"),
        "unknown-key": ({"model": {"kind": "tabular", "K": 2, "L": 3, "lr": 1},
                         "data": {"bigram": BIGRAM}}, "model"),
        "bad-type": ({"model": {"kind": "tabular", "K": 2, "L": 3}, "data": {"bigram": BIGRAM},
                      "train": {"steps": "many"}}, "train.steps"),
        "missing-model": ({"data": {"bigram": BIGRAM}}, "model"),
        "shape": ({"model": {"kind": "tabular", "K": 3, "L": 3}, "data": {"bigram": BIGRAM}}, "data"),
    }
    for name, (cfg, field) in cases.items():
        path = write_json(tmp_path / f"{name}.json", cfg)
        assert run("train", "--config", path, "--out", tmp_path / "x.ckpt") == 1, name
        assert field in capsys.readouterr().err, name
    assert run("train", "--config", tmp_path / "absent.json", "--out", tmp_path / "x") == 1
    (tmp_path / "broken.json").write_text("{")
    assert run("train", "--config", tmp_path / "broken.json", "--out", tmp_path / "x") == 1


def test_sample_nfe(ws):
    tmp, configs = ws
    run("train", "--config", configs["train"], "--out", tmp / "m.ckpt")
    run("sample", "--config", configs["sample"], "--checkpoint", tmp / "m.ckpt", "--out", tmp / "s.jsonl")
    lines = [json.loads(l) for l in (tmp / "s.jsonl").read_text().splitlines()]
    assert len(lines) == 6 and all(l["nfe"] == 6 for l in lines)
    assert all(l["tokens"][0] == 1 for l in lines[:3])
    assert all(l["tokens"][1] == 0 for l in lines[3:])
    meta = json.loads((tmp / "s.jsonl.meta.json").read_text())
    assert len(meta["seconds_per_sample"]) == 6
    run("sample", "--config", configs["sample-greedy"], "--checkpoint", tmp / "m.ckpt",
        "--out", tmp / "g.jsonl")
    assert json.loads((tmp / "g.jsonl").read_text())["nfe"] == 3


def test_sample_needs_checkpoint(ws, capsys):
    tmp, configs = ws
    assert run("sample", "--config", configs["sample"]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_eval_reports(ws):
    tmp, configs = ws
    run("train", "--config", configs["train-oracle"], "--out", tmp / "o.ckpt")
    assert run("eval", "--config", configs["eval"], "--checkpoint", tmp / "o.ckpt",
               "--out", tmp / "r.json") == 0
    rep = json.loads((tmp / "r.json").read_text())
    assert rep["accuracy"] == 1.0 and rep["mc_samples"] == 128 and len(rep["items"]) == 8
    (tmp / "empty.jsonl").write_text("")
    cfg = write_json(tmp / "e.json", {"dataset": str(tmp / "empty.jsonl"), "eval": {"method": "chain_rule"}})
    assert run("eval", "--config", cfg, "--checkpoint", tmp / "o.ckpt") == 1


def test_fit_scaling_outputs(ws, capsys):
    tmp, configs = ws
    assert run("fit-scaling", "--config", configs["fit-scaling"], "--out", tmp / "f.json") == 0
    rep = json.loads((tmp / "f.json").read_text())
    assert np.allclose(rep["gaps"][0]["ratio"], 16.0, atol=1e-6)
    assert abs(rep["families"]["arm"]["power_law"]["alpha"] + 0.1) < 1e-10
    assert (tmp / "optima.csv").read_text().startswith("# family=arm\nC,N_opt")
    (tmp / "bad.csv").write_text("N,D,loss\n1,2,3\n1,oops,3\n")
    cfg = write_json(tmp / "b.json", {"runs": str(tmp / "bad.csv")})
    assert run("fit-scaling", "--config", cfg) == 1
    assert "line 3" in capsys.readouterr().err


def test_oracle_check_defaults_and_custom(ws, tmp_path, capsys):
    _, configs = ws
    assert run("oracle-check", "--config", configs["oracle-check"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["n_failed"] == 0 and rep["n_checks"] > 20
    custom = write_json(tmp_path / "bigram.json", {**BIGRAM, "L": 2})
    cfg = write_json(tmp_path / "c.json", {"joints": [custom], "mc_samples": 2000})
    assert run("oracle-check", "--config", cfg) == 0
    rep = json.loads(capsys.readouterr().out)
    assert {c["joint"] for c in rep["checks"]} == {custom}


def test_oracle_check_flags_corruption(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", {"K": 2, "L": 2, "probs": [0.3, 0.3, 0.3, 0.3]})
    cfg = write_json(tmp_path / "c.json", {"joints": [bad]})
    assert run("oracle-check", "--config", cfg) == 2
    assert "joint-normalized" in capsys.readouterr().err


def test_reversal_demo_report(ws, capsys):
    _, configs = ws
    assert run("reversal-demo", "--config", configs["reversal-demo"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert {"forward_accuracy", "reverse_accuracy", "reverse_z"} <= set(rep)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "maskdiff", "fit-scaling"],
                         capture_output=True, text=True)
    assert out.returncode == 2 and "--config" in out.stderr
    bad = write_json(tmp_path / "c.json", {"runs": str(tmp_path / "missing.csv")})
    out = subprocess.run([sys.executable, "-m", "maskdiff", "fit-scaling", "--config", bad],
                         capture_output=True, text=True)
    assert out.returncode == 1 and "runs" in out.stderr
