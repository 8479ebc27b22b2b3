"""Likelihood evaluation and task-level metrics.

Two conditional log-likelihood evaluators are exposed:

- ``mc_elbo``: the masked ELBO estimated by Monte Carlo with the prompt held
  unmasked (a lower bound on ``log p(x0 | prompt)`` in expectation);
- ``chain_rule``: ``sum_i log p(x0^i | prompt, x0^{<i}, masks)``, one model
  evaluation per response token, deterministic.

Both accept guidance, in which case every factor uses the guided
distribution with the prompt as the condition.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from maskdiff.guidance import GuidanceConfig, guided_probs
from maskdiff.model import (
    DEFAULT_MC_SAMPLES,
    ESTIMATOR_MODES,
    PROB_FLOOR,
    LossEstimate,
    OracleModel,
    TabularModel,
    CompactModel,
    TrainConfig,
    elbo_samples,
    summarize,
    train,
    unique_probs,
)
from maskdiff.oracle import TabularJoint, enumerate_states
from maskdiff.sampler import SampleConfig, greedy_sample, strip_eos

METHODS = ("mc_elbo", "chain_rule")


@dataclass(frozen=True)
class EvalConfig:
    method: str = "mc_elbo"
    mc_samples: int = DEFAULT_MC_SAMPLES
    pad_to: int | None = None
    guidance: GuidanceConfig = GuidanceConfig()
    estimator: str = "uniform-count"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.estimator not in ESTIMATOR_MODES:
            raise ValueError(f"estimator must be one of {ESTIMATOR_MODES}")


@dataclass
class MultipleChoiceItem:
    prompt: np.ndarray
    options: list
    gold: int

    def __post_init__(self):
        self.prompt = np.asarray(self.prompt, dtype=np.int64).reshape(-1)
        self.options = [np.asarray(o, dtype=np.int64).reshape(-1) for o in self.options]
        if len(self.options) < 2:
            raise ValueError("a multiple-choice item needs at least two options")
        if not 0 <= self.gold < len(self.options):
            raise ValueError(f"gold index {self.gold} out of range")


def pad_with_masks(x, target_len: int, mask_id: int) -> np.ndarray:
    """Append ``mask_id`` up to ``target_len`` along the last axis."""
    x = np.asarray(x, dtype=np.int64)
    n = x.shape[-1]
    if target_len < n:
        raise ValueError(f"target length {target_len} is shorter than the input ({n})")
    pad = np.full(x.shape[:-1] + (target_len - n,), mask_id, dtype=np.int64)
    return np.concatenate([x, pad], axis=-1)


def _probs_fn(model, pad_to: int | None):
    """Deduplicating model call; with ``pad_to`` inputs are mask-padded and outputs trimmed."""
    if pad_to is None:
        return lambda x: unique_probs(model.probs, x)

    def fn(x):
        n = x.shape[-1]
        return unique_probs(model.probs, pad_with_masks(x, pad_to, model.mask_id))[:, :n]

    return fn


def _join(prompt, x0) -> tuple[np.ndarray, int]:
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    x0 = np.asarray(x0, dtype=np.int64).reshape(-1)
    if x0.size == 0:
        raise ValueError("cannot score an empty continuation")
    return np.concatenate([prompt, x0]), prompt.size


def mc_conditional_elbo(model, prompt, x0, config: EvalConfig = EvalConfig(),
                        rng: np.random.Generator | None = None) -> LossEstimate:
    """Monte-Carlo lower bound on ``log p(x0 | prompt)``; returns ``(estimate, stderr)``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    seq, P = _join(prompt, x0)
    base = _probs_fn(model, config.pad_to)
    cond = np.arange(P)

    def probs_fn(xt):
        return guided_probs(model, xt, cond, config.guidance, probs_fn=base)

    vals, floored = elbo_samples(probs_fn, seq, rng, config.mc_samples, config.estimator,
                                 model.mask_id, eligible=np.arange(P, seq.size))
    est = summarize(-vals, floored)
    return est


def chain_rule_ll(model, prompt, x0, config: EvalConfig = EvalConfig()) -> float:
    """Left-to-right chain-rule log-likelihood of ``x0`` given ``prompt``."""
    seq, P = _join(prompt, x0)
    R = seq.size - P
    ctx = np.tile(seq, (R, 1))
    for i in range(R):
        ctx[i, P + i:] = model.mask_id
    probs = guided_probs(model, ctx, np.arange(P), config.guidance,
                         probs_fn=_probs_fn(model, config.pad_to))
    p_true = probs[np.arange(R), P + np.arange(R), seq[P:]]
    return float(np.log(np.maximum(p_true, PROB_FLOOR)).sum())


def conditional_ll(model, prompt, x0, config: EvalConfig, rng=None) -> float:
    if config.method == "chain_rule":
        return chain_rule_ll(model, prompt, x0, config)
    return mc_conditional_elbo(model, prompt, x0, config, rng).mean


def option_scores(model, item: MultipleChoiceItem, config: EvalConfig,
                  item_index: int = 0) -> np.ndarray:
    """Conditional log-likelihood of every option.

    Monte-Carlo scoring reuses one random stream per option (seeded from
    ``config.seed`` and ``item_index``), so options are compared under
    common random numbers and the result does not depend on option order.
    """
    scores = []
    for opt in item.options:
        rng = np.random.default_rng([config.seed, item_index])
        scores.append(conditional_ll(model, item.prompt, opt, config, rng))
    return np.asarray(scores)


def score_multiple_choice(model, item: MultipleChoiceItem, config: EvalConfig = EvalConfig(),
                          item_index: int = 0) -> int:
    """Index of the highest-likelihood option (lowest index on ties)."""
    return int(np.argmax(option_scores(model, item, config, item_index)))


def multiple_choice_accuracy(model, items, config: EvalConfig = EvalConfig()) -> float:
    if not items:
        raise ValueError("no items to evaluate")
    hits = [score_multiple_choice(model, it, config, i) == it.gold for i, it in enumerate(items)]
    return float(np.mean(hits))


def exact_match(model, pairs, sample_config: SampleConfig = SampleConfig(),
                eos_id: int | None = None) -> float:
    """Fraction of ``(prompt, gold)`` pairs whose greedy continuation equals ``gold``.

    The generated region spans ``sample_config.length - len(prompt)`` tokens
    (the model length when ``length`` is unset); EOS is stripped when
    ``eos_id`` is given.
    """
    if len(pairs) == 0:
        raise ValueError("exact_match needs at least one pair")
    hits = 0
    for prompt, gold in pairs:
        prompt = np.asarray(prompt, dtype=np.int64)
        out = greedy_sample(model, sample_config, prompt=prompt).tokens[prompt.size:]
        if eos_id is not None:
            out = strip_eos(out, eos_id)
        hits += np.array_equal(out, np.asarray(gold, dtype=np.int64))
    return hits / len(pairs)


def infill_match(model, template, gold, sample_config: SampleConfig) -> bool:
    """Greedy infill of the masked positions of ``template``, compared to ``gold``."""
    template = np.asarray(template, dtype=np.int64)
    out = greedy_sample(model, sample_config, template=template).tokens
    region = template == model.mask_id
    return bool(np.array_equal(out[region], np.asarray(gold, dtype=np.int64)))


def guidance_choice_task(K: int = 6, prompt_len: int = 2, popular: int = 0,
                         popular_mass: float = 0.8, gold_prob: float = 0.5):
    """Conditional task where the answer marginal favours one popular distractor.

    Each prompt ``c`` (uniform over ``K**prompt_len``) has a gold answer
    ``g(c) = (c_0 + 2 c_1 + ... + 1) mod K``.  The one-token answer equals
    ``g(c)`` with probability ``gold_prob`` and is otherwise drawn from a
    prompt-independent distribution putting ``popular_mass`` on ``popular``.
    Items pair the gold answer against the popular one, for every prompt
    whose gold differs from it.  Under the true distribution the gold always
    wins; a model that leans on the answer marginal does not.

    Returns:
        ``(joint, items)``.
    """
    L = prompt_len + 1
    states = enumerate_states(K, L)
    coeffs = np.arange(1, prompt_len + 1)

    def gold_of(c):
        return (np.asarray(c) @ coeffs + 1) % K

    q = np.full(K, (1.0 - popular_mass) / (K - 1))
    q[popular] = popular_mass
    g = gold_of(states[:, :prompt_len])
    ans = states[:, prompt_len]
    p = (gold_prob * (ans == g) + (1 - gold_prob) * q[ans]) / K**prompt_len
    joint = TabularJoint(K, L, p / p.sum())
    items = []
    for c in enumerate_states(K, prompt_len):
        gg = int(gold_of(c))
        if gg != popular:
            items.append(MultipleChoiceItem(c, [[gg], [popular]], 0))
    return joint, items


# --------------------------------------------------------------------------
# Synthetic reversal experiment
# --------------------------------------------------------------------------


@dataclass
class ReversalConfig:
    K: int = 6
    name_len: int = 2
    desc_len: int = 2
    n_facts: int = 20
    model: str = "tabular"
    trained: bool = True
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        steps=2000, batch_size=64, learning_rate=2.0))
    guidance_scale: float = 0.8
    hidden: int = 64
    d: int = 8
    seed: int = 0


def reversal_corpus(config: ReversalConfig, rng: np.random.Generator):
    """Distinct random names and descriptions joined as ``name IS description``.

    The separator is the last vocabulary id; entities use ids ``0..K-2``.
    """
    K, a, b = config.K, config.name_len, config.desc_len
    sep = K - 1
    n_names, n_descs = (K - 1) ** a, (K - 1) ** b
    if config.n_facts > min(n_names, n_descs):
        raise ValueError("too many facts for the entity alphabet")

    def decode(codes, width):
        return (codes[:, None] // (K - 1) ** np.arange(width - 1, -1, -1)) % (K - 1)

    names = decode(rng.choice(n_names, size=config.n_facts, replace=False), a)
    descs = decode(rng.choice(n_descs, size=config.n_facts, replace=False), b)
    sepcol = np.full((config.n_facts, 1), sep)
    return np.hstack([names, sepcol, descs]).astype(np.int64), sep


def _binomial_z(hits: int, n: int, p: float) -> float:
    return (hits - n * p) / math.sqrt(n * p * (1 - p))


def reversal_experiment(config: ReversalConfig = ReversalConfig()) -> dict:
    """Train on ``name IS description`` only and query both directions.

    Forward queries show the name and separator and generate the
    description; reverse queries show the separator and description and
    generate the name.  Both are greedy infills in the trained layout.
    """
    rng = np.random.default_rng(config.seed)
    corpus, sep = reversal_corpus(config, rng)
    L = corpus.shape[1]
    a = config.name_len
    if config.model == "oracle":
        model = OracleModel(TabularJoint.from_support(config.K, L, corpus))
    elif config.model == "tabular":
        model = TabularModel(config.K, L)
    elif config.model == "compact":
        model = CompactModel(config.K, L, d=config.d, hidden=config.hidden, seed=config.seed)
    else:
        raise ValueError(f"unknown model kind {config.model!r}")
    log = None
    if config.trained and config.model != "oracle":
        model, log = train(model, corpus, config.train, rng)
    guidance = GuidanceConfig("unsupervised", config.guidance_scale)
    m = model.mask_id
    fwd_cfg = SampleConfig(steps=config.desc_len, guidance=guidance)
    rev_cfg = SampleConfig(steps=config.name_len, guidance=guidance)
    fwd_hits = rev_hits = 0
    for row in corpus:
        name, desc = row[:a], row[a + 1:]
        fwd = row.copy()
        fwd[a + 1:] = m
        rev = row.copy()
        rev[:a] = m
        fwd_hits += infill_match(model, fwd, desc, fwd_cfg)
        rev_hits += infill_match(model, rev, name, rev_cfg)
    n = len(corpus)
    chance_fwd = (1 / config.K) ** config.desc_len
    chance_rev = (1 / config.K) ** config.name_len
    report = {
        "config": _jsonable(asdict(config)),
        "n_facts": n,
        "forward_accuracy": fwd_hits / n,
        "reverse_accuracy": rev_hits / n,
        "forward_chance": chance_fwd,
        "reverse_chance": chance_rev,
        "forward_z": _binomial_z(fwd_hits, n, chance_fwd),
        "reverse_z": _binomial_z(rev_hits, n, chance_rev),
    }
    if log is not None:
        report["final_train_loss"] = float(np.mean(log.loss[-50:]))
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# Datasets and reports
# --------------------------------------------------------------------------


def load_jsonl(path) -> list:
    """Read multiple-choice items or ``(prompt, response)`` pairs, one JSON object per line."""
    items = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        keys = set(obj)
        if keys == {"prompt", "options", "gold"}:
            items.append(MultipleChoiceItem(obj["prompt"], obj["options"], int(obj["gold"])))
        elif keys == {"prompt", "response"}:
            items.append((np.asarray(obj["prompt"], dtype=np.int64),
                          np.asarray(obj["response"], dtype=np.int64)))
        else:
            raise ValueError(f"{path}:{lineno}: unexpected keys {sorted(keys)}")
    return items


def write_jsonl(path, items) -> None:
    lines = []
    for it in items:
        if isinstance(it, MultipleChoiceItem):
            obj = {"prompt": it.prompt.tolist(), "options": [o.tolist() for o in it.options],
                   "gold": it.gold}
        else:
            obj = {"prompt": np.asarray(it[0]).tolist(), "response": np.asarray(it[1]).tolist()}
        lines.append(json.dumps(obj))
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate_items(model, items, config: EvalConfig, sample_config: SampleConfig | None = None,
                   eos_id: int | None = None) -> dict:
    """Per-item results plus aggregates for a homogeneous item list."""
    if not items:
        raise ValueError("empty dataset")
    if all(isinstance(it, MultipleChoiceItem) for it in items):
        per_item = []
        for i, it in enumerate(items):
            scores = option_scores(model, it, config, i)
            choice = int(np.argmax(scores))
            per_item.append({"index": i, "scores": scores.tolist(), "choice": choice,
                             "gold": it.gold, "correct": choice == it.gold})
        acc = float(np.mean([r["correct"] for r in per_item]))
        return {"task": "multiple_choice", "method": config.method,
                "mc_samples": config.mc_samples, "guidance": config.guidance.to_dict(),
                "accuracy": acc, "n_items": len(items), "items": per_item}
    if all(isinstance(it, tuple) for it in items):
        per_item = []
        for i, (prompt, response) in enumerate(items):
            ll = conditional_ll(model, prompt, response, config,
                                np.random.default_rng([config.seed, i]))
            rec = {"index": i, "log_likelihood": ll}
            if sample_config is not None:
                rec["exact_match"] = bool(exact_match(model, [(prompt, response)],
                                                      sample_config, eos_id))
            per_item.append(rec)
        report = {"task": "conditional_likelihood", "method": config.method,
                  "mc_samples": config.mc_samples, "guidance": config.guidance.to_dict(),
                  "mean_log_likelihood": float(np.mean([r["log_likelihood"] for r in per_item])),
                  "n_items": len(items), "items": per_item}
        if sample_config is not None:
            report["exact_match_accuracy"] = float(np.mean([r["exact_match"] for r in per_item]))
        return report
    raise ValueError("dataset mixes multiple-choice items and response pairs")
