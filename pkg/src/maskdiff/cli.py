"""Command-line front end: ``maskdiff <verb> --config run.json [--seed S] [--out PATH]``.

Verbs: ``train``, ``sample``, ``eval``, ``fit-scaling``, ``oracle-check`` and
``reversal-demo``.  Configs are JSON documents validated against strict
schemas.  Primary outputs depend only on (config, seed); wall-clock timings
go to a ``<out>.meta.json`` sidecar.

Exit codes: 0 success, 1 user or config error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import jsonschema
import numpy as np

from maskdiff import checks
from maskdiff.evaluate import (EvalConfig, ReversalConfig, _jsonable, evaluate_items, load_jsonl,
                               reversal_experiment)
from maskdiff.guidance import GuidanceConfig
from maskdiff.model import (CompactModel, OracleModel, TabularModel, TrainConfig, TrainingDiverged,
                            load_checkpoint, save_checkpoint, train)
from maskdiff.oracle import BigramSource, TabularJoint, joint_from_bigram
from maskdiff.sampler import SampleConfig, ancestral_sample_batch, greedy_sample, initial_state
from maskdiff.scaling import fit_report, isoflop_analysis, optima_csv, read_runs_csv


class UserError(Exception):
    """Bad config, missing file or malformed input: exit code 1."""


class InvariantViolation(Exception):
    """An engine self-check failed: exit code 2."""


# --------------------------------------------------------------------------
# Schemas
# --------------------------------------------------------------------------

_INT = {"type": "integer"}
_NUM = {"type": "number"}
_STR = {"type": "string"}
_TOKENS = {"type": "array", "items": {"type": "integer", "minimum": 0}}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


GUIDANCE_SCHEMA = _obj({"mode": {"enum": ["none", "standard", "unsupervised"]},
                        "scale": {"type": "number", "minimum": 0},
                        "recipe": {"type": ["string", "null"]}})

TRAIN_FIELDS_SCHEMA = _obj({
    "steps": {"type": "integer", "minimum": 1},
    "batch_size": {"type": "integer", "minimum": 1},
    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    "variable_length_fraction": {"type": "number", "minimum": 0, "maximum": 1},
    "L_max": {"type": ["integer", "null"], "minimum": 1},
    "t_mode": {"enum": ["uniform-count", "uniform-t"]},
    "prompt_dropout_prob": {"type": "number", "minimum": 0, "maximum": 1},
    "lr_schedule": {"enum": ["constant", "linear"]},
})

SAMPLE_FIELDS_SCHEMA = _obj({
    "steps": {"type": "integer", "minimum": 1},
    "length": {"type": ["integer", "null"], "minimum": 1},
    "mode": {"enum": ["ancestral", "greedy"]},
    "guidance": GUIDANCE_SCHEMA,
})

BIGRAM_SCHEMA = _obj({"initial": {"type": "array", "items": _NUM},
                      "transition": {"type": "array", "items": {"type": "array", "items": _NUM}}},
                     required=("initial", "transition"))

SCHEMAS = {
    "train": _obj({
        "seed": _INT,
        "model": _obj({"kind": {"enum": ["tabular", "compact", "oracle"]},
                       "K": {"type": "integer", "minimum": 2},
                       "L": {"type": "integer", "minimum": 1},
                       "d": {"type": "integer", "minimum": 1},
                       "hidden": {"type": "integer", "minimum": 1},
                       "init_scale": {"type": "number", "exclusiveMinimum": 0}},
                      required=("kind", "K", "L")),
        "data": {**_obj({"joint": _STR, "bigram": BIGRAM_SCHEMA, "dataset": _STR}),
                 "minProperties": 1, "maxProperties": 1},
        "train": TRAIN_FIELDS_SCHEMA,
    }, required=("model", "data")),
    "sample": _obj({
        "seed": _INT,
        "checkpoint": _STR,
        "n_samples": {"type": "integer", "minimum": 1},
        "prompts": _STR,
        "sample": SAMPLE_FIELDS_SCHEMA,
    }),
    "eval": _obj({
        "seed": _INT,
        "checkpoint": _STR,
        "dataset": _STR,
        "eos_id": {"type": ["integer", "null"], "minimum": 0},
        "eval": _obj({"method": {"enum": ["mc_elbo", "chain_rule"]},
                      "mc_samples": {"type": "integer", "minimum": 1},
                      "pad_to": {"type": ["integer", "null"], "minimum": 1},
                      "estimator": {"enum": ["uniform-count", "uniform-t"]},
                      "guidance": GUIDANCE_SCHEMA}),
        "sample": SAMPLE_FIELDS_SCHEMA,
    }, required=("dataset",)),
    "fit-scaling": _obj({"seed": _INT, "runs": _STR, "optima_csv": _STR}, required=("runs",)),
    "oracle-check": _obj({
        "seed": _INT,
        "include_defaults": {"type": "boolean"},
        "mc_samples": {"type": "integer", "minimum": 100},
        "joints": {"type": "array", "items": _STR},
    }),
    "reversal-demo": _obj({
        "seed": _INT,
        "K": {"type": "integer", "minimum": 3},
        "name_len": {"type": "integer", "minimum": 1},
        "desc_len": {"type": "integer", "minimum": 1},
        "n_facts": {"type": "integer", "minimum": 1},
        "model": {"enum": ["oracle", "tabular", "compact"]},
        "trained": {"type": "boolean"},
        "train": TRAIN_FIELDS_SCHEMA,
        "guidance_scale": {"type": "number", "minimum": 0},
        "hidden": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
    }),
}


def validate(command: str, config: dict) -> None:
    """Raise :class:`UserError` naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise UserError(f"config field {where}: {err.message}")


def load_config(command: str, path: str | None, seed: int | None) -> dict:
    config: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UserError(f"--config: file not found: {path}")
        try:
            config = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UserError(f"--config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(config, dict):
            raise UserError("--config: top level must be a JSON object")
    validate(command, config)
    if seed is not None:
        config["seed"] = seed
    config.setdefault("seed", 0)
    return config


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def subseed(seed: int, component: int) -> int:
    """Deterministic per-component seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, component]).generate_state(1)[0])


def _existing(path: str | None, field: str) -> Path:
    if path is None:
        raise UserError(f"{field}: required")
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{field}: file not found: {path}")
    return p


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _write_meta(out: str | None, command: str, seconds: float, extra: dict | None = None) -> None:
    if out is None:
        return
    meta = {"command": command, "seconds": round(seconds, 3), **(extra or {})}
    Path(str(out) + ".meta.json").write_text(dumps(meta))


def _read_joint_file(path: Path) -> dict:
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise UserError(f"{path}: expected a JSON object")
    return d


def _joint_from_dict(d: dict, field: str) -> TabularJoint:
    """Accepts a table ``{K, L, probs}`` or a bigram ``{initial, transition, L}``."""
    try:
        if "probs" in d:
            return TabularJoint.from_dict(d)
        if "initial" in d:
            rest = {k: v for k, v in d.items() if k != "L"}
            if "L" not in d:
                raise ValueError("bigram joint needs L")
            return joint_from_bigram(BigramSource.from_dict(rest), int(d["L"]))
    except (ValueError, TypeError, KeyError) as exc:
        raise UserError(f"{field}: {exc}") from None
    raise UserError(f"{field}: expected keys K/L/probs or initial/transition/L")


def _read_token_rows(path: Path, field: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UserError(f"{field} line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or set(obj) != {"tokens"}:
            raise UserError(f"{field} line {lineno}: expected an object with key 'tokens'")
        rows.append(obj["tokens"])
    if not rows:
        raise UserError(f"{field}: empty dataset")
    if len({len(r) for r in rows}) != 1:
        raise UserError(f"{field}: all sequences must have the same length")
    return np.asarray(rows, dtype=np.int64)


def _load_model(config: dict, checkpoint: str | None):
    p = _existing(checkpoint or config.get("checkpoint"), "checkpoint")
    try:
        return load_checkpoint(p)
    except (ValueError, KeyError) as exc:
        raise UserError(f"checkpoint: {exc}") from None


def _sample_config(d: dict | None, seed: int) -> SampleConfig:
    d = dict(d or {})
    g = GuidanceConfig.from_dict(d.pop("guidance", None))
    return SampleConfig(seed=seed, guidance=g, **d)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_train(config: dict, args) -> int:
    seed = config["seed"]
    m = config["model"]
    K, L = m["K"], m["L"]
    data_spec = config["data"]
    if "joint" in data_spec:
        data = _joint_from_dict(_read_joint_file(_existing(data_spec["joint"], "data.joint")),
                                "data.joint")
    elif "bigram" in data_spec:
        data = _joint_from_dict({**data_spec["bigram"], "L": L}, "data.bigram")
    else:
        data = _read_token_rows(_existing(data_spec["dataset"], "data.dataset"), "data.dataset")
    if isinstance(data, TabularJoint):
        if (data.K, data.L) != (K, L):
            raise UserError(f"data: joint has K={data.K}, L={data.L} but model.K={K}, model.L={L}")
    else:
        if data.shape[1] != L or data.min() < 0 or data.max() >= K:
            raise UserError(f"data.dataset: sequences must have length {L} and ids in [0, {K})")

    if m["kind"] == "oracle":
        if not isinstance(data, TabularJoint):
            raise UserError("model.kind: oracle needs a joint or bigram data source")
        extra = sorted(set(m) - {"kind", "K", "L"})
        if extra or "train" in config:
            raise UserError(f"model: oracle takes no training settings ({extra or ['train']})")
        model, log = OracleModel(data), None
    else:
        if m["kind"] == "tabular":
            extra = sorted(set(m) - {"kind", "K", "L"})
            if extra:
                raise UserError(f"model.{extra[0]}: not a tabular model setting")
            model = TabularModel(K, L)
        else:
            model = CompactModel(K, L, d=m.get("d", 8), hidden=m.get("hidden", 32),
                                 seed=subseed(seed, 0), init_scale=m.get("init_scale", 1.0))
        tc = TrainConfig(seed=subseed(seed, 1), **config.get("train", {}))
        start = time.monotonic()
        try:
            model, log = train(model, data, tc)
        except TrainingDiverged as exc:
            raise UserError(f"training failed: {exc}") from None
        seconds = time.monotonic() - start

    out = args.out or args.checkpoint
    if out is None:
        raise UserError("--out: train needs an output checkpoint path")
    save_checkpoint(model, out, seed)
    if log is not None:
        log.write_csv(str(out) + ".log.csv")
        _write_meta(out, "train", seconds, {"steps": len(log.steps)})
    else:
        _write_meta(out, "train", 0.0)
    return 0


def _read_prompts(path: Path) -> list:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UserError(f"prompts line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or len(obj) != 1 or not set(obj) <= {"prompt", "template"}:
            raise UserError(f"prompts line {lineno}: expected exactly one of 'prompt' or 'template'")
        out.append(obj)
    return out


def cmd_sample(config: dict, args) -> int:
    seed = config["seed"]
    model, _ = _load_model(config, args.checkpoint)
    if isinstance(model, OracleModel):
        model.off_support = "uniform"
    sc = _sample_config(config.get("sample"), seed)
    n = config.get("n_samples", 1)
    prompts = [{}]
    if "prompts" in config:
        prompts = _read_prompts(_existing(config["prompts"], "prompts"))
    lines, seconds = [], []
    for pi, p in enumerate(prompts):
        try:
            initial_state(model, sc.length, p.get("prompt"), p.get("template"))
        except ValueError as exc:
            raise UserError(f"prompts entry {pi}: {exc}") from None
        for j in range(n):
            start = time.monotonic()
            if sc.mode == "greedy":
                res = greedy_sample(model, sc, p.get("prompt"), p.get("template"))
                tokens = res.tokens
            else:
                rng = np.random.default_rng([subseed(seed, 2), pi, j])
                tokens = ancestral_sample_batch(model, sc, 1, p.get("prompt"), p.get("template"),
                                                rng)[0]
            seconds.append(round(time.monotonic() - start, 3))
            nfe = sc.steps * sc.guidance.evaluations_per_step
            lines.append(json.dumps({"prompt_index": pi, "sample_index": j,
                                     "tokens": tokens.tolist(), "nfe": nfe}, sort_keys=True))
    _emit("\n".join(lines) + "\n", args.out)
    _write_meta(args.out, "sample", float(sum(seconds)), {"seconds_per_sample": seconds})
    return 0


def cmd_eval(config: dict, args) -> int:
    seed = config["seed"]
    model, _ = _load_model(config, args.checkpoint)
    path = _existing(config["dataset"], "dataset")
    try:
        items = load_jsonl(path)
    except ValueError as exc:
        raise UserError(f"dataset: {exc}") from None
    if not items:
        raise UserError(f"dataset: {path} has no items")
    ev = dict(config.get("eval", {}))
    ec = EvalConfig(guidance=GuidanceConfig.from_dict(ev.pop("guidance", None)),
                    seed=subseed(seed, 3), **ev)
    sc = _sample_config(config["sample"], seed) if "sample" in config else None
    start = time.monotonic()
    try:
        report = evaluate_items(model, items, ec, sc, config.get("eos_id"))
    except ValueError as exc:
        raise UserError(f"dataset: {exc}") from None
    report["seed"] = seed
    _emit(dumps(report), args.out)
    _write_meta(args.out, "eval", time.monotonic() - start)
    return 0


def cmd_fit_scaling(config: dict, args) -> int:
    path = _existing(config["runs"], "runs")
    try:
        families = read_runs_csv(path)
        report = fit_report(families)
    except ValueError as exc:
        raise UserError(f"runs: {exc}") from None
    _emit(dumps(report), args.out)
    if "optima_csv" in config:
        text = "".join(f"# family={name}\n" + optima_csv(isoflop_analysis(recs)[0])
                       for name, recs in sorted(families.items()))
        Path(config["optima_csv"]).write_text(text)
    return 0


def cmd_oracle_check(config: dict, args) -> int:
    seed = config["seed"]
    mc = config.get("mc_samples", 20000)
    targets = []
    if config.get("include_defaults", not config.get("joints")):
        targets += [(name, j.to_dict()) for name, j in checks.default_joints().items()]
    for path in config.get("joints", []):
        targets.append((path, _read_joint_file(_existing(path, "joints"))))

    report, failed = [], []
    for name, raw in targets:
        if "probs" in raw:
            results = checks.check_raw_joint(raw)
        else:
            results = []
        if all(r.passed for r in results):
            try:
                joint = _joint_from_dict(raw, name)
            except UserError as exc:
                results.append(checks.CheckResult("joint-construct", False, str(exc)))
            else:
                results += checks.run_joint_checks(joint, seed=subseed(seed, 4), mc_samples=mc)
        for r in results:
            report.append({"joint": name, "check": r.name, "passed": r.passed, "detail": r.detail})
            if not r.passed:
                failed.append(f"{name}: {r.name} ({r.detail})")
    summary = {"n_checks": len(report), "n_failed": len(failed), "checks": report}
    _emit(dumps(summary), args.out)
    for line in failed:
        print(f"FAILED invariant {line}", file=sys.stderr)
    if failed:
        raise InvariantViolation(f"{len(failed)} check(s) failed")
    return 0


def cmd_reversal_demo(config: dict, args) -> int:
    cfg = dict(config)
    seed = cfg.pop("seed")
    tc = TrainConfig(**{**asdict(ReversalConfig().train), **cfg.pop("train", {})})
    rc = ReversalConfig(seed=seed, train=tc, **cfg)
    start = time.monotonic()
    report = reversal_experiment(rc)
    _emit(dumps(report), args.out)
    _write_meta(args.out, "reversal-demo", time.monotonic() - start)
    return 0


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "fit-scaling": cmd_fit_scaling,
    "oracle-check": cmd_oracle_check,
    "reversal-demo": cmd_reversal_demo,
}

_NEEDS_CONFIG = {"train", "eval", "fit-scaling"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskdiff", description="Masked diffusion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name in _NEEDS_CONFIG, help="JSON run config")
        p.add_argument("--checkpoint", help="model checkpoint path")
        p.add_argument("--out", help="primary output path (default: stdout)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.command, args.config, args.seed)
        return COMMANDS[args.command](config, args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is an engine bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
