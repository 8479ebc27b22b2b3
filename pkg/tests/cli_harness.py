"""Fixture files and config builders shared by the CLI tests and the acceptance suite."""

import json
import math

from maskdiff.cli import main
from maskdiff.evaluate import guidance_choice_task, write_jsonl
from maskdiff.scaling import synthetic_isoflop_records

BIGRAM = {"initial": [0.7, 0.3], "transition": [[0.9, 0.1], [0.2, 0.8]]}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def setup_workspace(tmp):
    """Writes configs for every verb; returns {verb: (config_path, extra_args)}."""
    joint, items = guidance_choice_task()
    (tmp / "joint.json").write_text(joint.to_json())
    write_jsonl(tmp / "mc.jsonl", items[:8])
    (tmp / "prompts.jsonl").write_text('{"prompt": [1]}\n{"template": [2, 0, 2]}\n')
    budgets = [1e8, 1e9, 1e10]
    rows = ["N,D,loss,family"]
    for fam, beta in (("arm", 2.0), ("mdm", 2.0 + 0.1 * math.log(16))):
        for r in synthetic_isoflop_records(budgets, beta=beta):
            rows.append(f"{r.N!r},{r.D!r},{r.loss!r},{fam}")
    (tmp / "runs.csv").write_text("\n".join(rows) + "\n")
    cfg = {
        "train": {"seed": 3, "model": {"kind": "compact", "K": 2, "L": 3, "hidden": 8},
                  "data": {"bigram": BIGRAM}, "train": {"steps": 100, "batch_size": 16}},
        "train-oracle": {"model": {"kind": "oracle", "K": 6, "L": 3},
                         "data": {"joint": str(tmp / "joint.json")}},
        "sample": {"n_samples": 3, "prompts": str(tmp / "prompts.jsonl"),
                   "sample": {"steps": 3, "mode": "ancestral",
                              "guidance": {"mode": "unsupervised", "scale": 0.5}}},
        "sample-greedy": {"sample": {"steps": 3}},
        "eval": {"dataset": str(tmp / "mc.jsonl"), "eval": {"method": "mc_elbo"}},
        "fit-scaling": {"runs": str(tmp / "runs.csv"), "optima_csv": str(tmp / "optima.csv")},
        "oracle-check": {"mc_samples": 2000},
        "reversal-demo": {"n_facts": 10, "train": {"steps": 300}},
    }
    return {k: write_json(tmp / f"{k}.json", v) for k, v in cfg.items()}


def run_all(tmp, configs, tag):
    """Run every verb once, writing outputs with suffix ``tag``; returns primary output paths."""
    o = {}
    ck = tmp / f"model{tag}.ckpt"
    assert run("train", "--config", configs["train"], "--out", ck) == 0
    o["train.ckpt"], o["train.log"] = ck, tmp / f"model{tag}.ckpt.log.csv"
    orc = tmp / f"oracle{tag}.ckpt"
    assert run("train", "--config", configs["train-oracle"], "--out", orc) == 0
    o["sample"] = tmp / f"samples{tag}.jsonl"
    assert run("sample", "--config", configs["sample"], "--checkpoint", ck, "--out", o["sample"]) == 0
    o["sample-greedy"] = tmp / f"greedy{tag}.jsonl"
    assert run("sample", "--config", configs["sample-greedy"], "--checkpoint", ck,
               "--out", o["sample-greedy"]) == 0
    o["eval"] = tmp / f"eval{tag}.json"
    assert run("eval", "--config", configs["eval"], "--checkpoint", orc, "--out", o["eval"]) == 0
    o["fit-scaling"] = tmp / f"fit{tag}.json"
    assert run("fit-scaling", "--config", configs["fit-scaling"], "--out", o["fit-scaling"]) == 0
    o["oracle-check"] = tmp / f"checks{tag}.json"
    assert run("oracle-check", "--config", configs["oracle-check"], "--out", o["oracle-check"]) == 0
    o["reversal-demo"] = tmp / f"reversal{tag}.json"
    assert run("reversal-demo", "--config", configs["reversal-demo"],
               "--out", o["reversal-demo"]) == 0
    return o
