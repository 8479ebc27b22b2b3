import math

import numpy as np
import pytest

from maskdiff.evaluate import (EvalConfig, MultipleChoiceItem, ReversalConfig, chain_rule_ll,
                               evaluate_items, exact_match, guidance_choice_task, load_jsonl,
                               mc_conditional_elbo, multiple_choice_accuracy, option_scores,
                               pad_with_masks, reversal_corpus, reversal_experiment,
                               score_multiple_choice, write_jsonl)
from maskdiff.guidance import GuidanceConfig
from maskdiff.model import CompactModel, OracleModel, TabularModel, TrainConfig
from maskdiff.oracle import (BigramSource, TabularJoint, exact_conditional_nll, exact_nll,
                             joint_from_bigram)
from maskdiff.sampler import SampleConfig

CHAIN = EvalConfig("chain_rule")


def test_eval_config_validation():
    assert EvalConfig().mc_samples == 128
    with pytest.raises(ValueError):
        EvalConfig(method="ppl")
    with pytest.raises(ValueError):
        EvalConfig(mc_samples=0)


def test_mc_elbo_tight_for_oracle():
    joint = joint_from_bigram(BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]]), 2)
    m = OracleModel(joint)
    cfg = EvalConfig(mc_samples=100_000)
    for x in ([0, 1], [1, 1]):
        mean, se = mc_conditional_elbo(m, [], x, cfg, np.random.default_rng(0))
        assert abs(mean + exact_nll(joint, x)) < 3 * se + 1e-12


def test_mc_elbo_conditional_with_prompt(random_joint):
    m = OracleModel(random_joint)
    est = mc_conditional_elbo(m, [1], [2, 0], EvalConfig(mc_samples=50_000), np.random.default_rng(1))
    assert abs(est.mean + exact_conditional_nll(random_joint, [2, 0], [1])) < 3 * est.stderr


def test_mc_elbo_point_mass_and_w0():
    pm = OracleModel(TabularJoint.point_mass(2, 3, [0, 1, 1]))
    assert mc_conditional_elbo(pm, [0], [1, 1], EvalConfig(), np.random.default_rng(0)).mean == 0.0
    m = CompactModel(3, 3, seed=2)
    a = mc_conditional_elbo(m, [1], [0, 2], EvalConfig(), np.random.default_rng(4))
    b = mc_conditional_elbo(m, [1], [0, 2], EvalConfig(guidance=GuidanceConfig("unsupervised", 0.0)),
                            np.random.default_rng(4))
    assert a.mean == b.mean and a.stderr == b.stderr


def test_mc_stderr_scaling():
    m = CompactModel(3, 4, seed=0)
    ns = np.array([100, 1000, 10_000, 100_000])
    se = [mc_conditional_elbo(m, [], [0, 1, 2, 0], EvalConfig(mc_samples=int(n)),
                              np.random.default_rng(int(n))).stderr for n in ns]
    slope = np.polyfit(np.log(ns), np.log(se), 1)[0]
    assert abs(slope + 0.5) < 0.05


def test_chain_rule_exact_for_oracle(random_joint):
    m = OracleModel(random_joint)
    for prompt, x in (([], [0, 1, 2]), ([2], [1, 1]), ([0, 0], [2])):
        ll = chain_rule_ll(m, prompt, x, CHAIN)
        assert abs(ll + exact_conditional_nll(random_joint, x, prompt)) < 1e-9


def test_chain_rule_examples():
    assert chain_rule_ll(OracleModel(TabularJoint.uniform(4, 2)), [], [1, 3]) == \
        pytest.approx(-2 * math.log(4), abs=1e-12)
    single = TabularJoint(3, 1, [0.2, 0.5, 0.3])
    m = OracleModel(single)
    assert chain_rule_ll(m, [], [2]) == pytest.approx(math.log(0.3), abs=1e-15)
    est = mc_conditional_elbo(m, [], [2], EvalConfig(mc_samples=50), np.random.default_rng(0))
    assert est.mean == pytest.approx(math.log(0.3), abs=1e-15) and est.stderr < 1e-15


def test_pad_with_masks():
    assert pad_with_masks([1, 2, 3], 3, 9).tolist() == [1, 2, 3]
    assert pad_with_masks([1, 2, 3], 5, 9).tolist() == [1, 2, 3, 9, 9]
    with pytest.raises(ValueError):
        pad_with_masks([1, 2, 3], 2, 9)


def test_padding_is_measurable():
    m = CompactModel(3, 5, seed=0)
    short = chain_rule_ll(m, [0], [1, 2], CHAIN)
    padded = chain_rule_ll(m, [0], [1, 2], EvalConfig("chain_rule", pad_to=5))
    assert np.isfinite(short) and np.isfinite(padded)
    oracle = OracleModel(TabularJoint.uniform(2, 4))
    assert chain_rule_ll(oracle, [0], [1], EvalConfig("chain_rule", pad_to=4)) == \
        pytest.approx(-math.log(2), abs=1e-12)


def test_multiple_choice_scoring():
    joint = TabularJoint(2, 2, [0.35, 0.15, 0.25, 0.25])
    m = OracleModel(joint)
    item = MultipleChoiceItem([0], [[0], [1]], 0)
    assert score_multiple_choice(m, item, CHAIN) == 0
    assert score_multiple_choice(m, MultipleChoiceItem([0], [[1], [1]], 0), CHAIN) == 0
    flipped = MultipleChoiceItem([0], [[1], [0]], 1)
    assert score_multiple_choice(m, flipped, CHAIN) == 1
    mc = EvalConfig(mc_samples=64)
    assert np.allclose(option_scores(m, item, mc)[::-1], option_scores(m, flipped, mc))
    with pytest.raises(ValueError):
        MultipleChoiceItem([0], [[1]], 0)


def test_guidance_choice_task_oracle_is_perfect():
    joint, items = guidance_choice_task()
    assert len(items) == 30
    assert multiple_choice_accuracy(OracleModel(joint), items, CHAIN) == 1.0


def test_exact_match():
    det = TabularJoint.from_support(3, 3, [[0, 1, 2], [1, 2, 2], [2, 0, 1]])
    pairs = [([0], [1]), ([1], []), ([2], [0, 1])]
    assert exact_match(OracleModel(det), pairs, SampleConfig(steps=2), eos_id=2) == 1.0
    with pytest.raises(ValueError):
        exact_match(OracleModel(det), [], SampleConfig())


def test_exact_match_chance_for_untrained():
    rng = np.random.default_rng(0)
    pairs = [(rng.integers(0, 4, 1), rng.integers(0, 4, 2)) for _ in range(200)]
    acc = exact_match(TabularModel(4, 3), pairs, SampleConfig(steps=2))
    p = (1 / 4) ** 2
    assert acc <= p + 3 * math.sqrt(p * (1 - p) / 200)


def test_jsonl_roundtrip(tmp_path):
    items = [MultipleChoiceItem([0, 1], [[1], [0]], 1), MultipleChoiceItem([1], [[0, 0], [1, 1]], 0)]
    write_jsonl(tmp_path / "mc.jsonl", items)
    back = load_jsonl(tmp_path / "mc.jsonl")
    assert [b.gold for b in back] == [1, 0] and back[1].options[1].tolist() == [1, 1]
    write_jsonl(tmp_path / "gen.jsonl", [([0], [1, 2])])
    (prompt, response), = load_jsonl(tmp_path / "gen.jsonl")
    assert response.tolist() == [1, 2]
    (tmp_path / "bad.jsonl").write_text('{"prompt": [0], "answer": [1]}\n')
    with pytest.raises(ValueError, match=":1:"):
        load_jsonl(tmp_path / "bad.jsonl")


def test_evaluate_items_reports():
    joint, items = guidance_choice_task()
    rep = evaluate_items(OracleModel(joint), items[:5], EvalConfig(mc_samples=32))
    assert rep["accuracy"] == 1.0 and rep["mc_samples"] == 32 and len(rep["items"]) == 5
    det = TabularJoint.from_support(3, 2, [[0, 1], [1, 2]])
    rep = evaluate_items(OracleModel(det), [([0], [1]), ([1], [2])], CHAIN, SampleConfig(steps=1))
    assert rep["exact_match_accuracy"] == 1.0 and rep["mean_log_likelihood"] == 0.0
    with pytest.raises(ValueError):
        evaluate_items(OracleModel(det), [], CHAIN)


def test_reversal_corpus_layout():
    corpus, sep = reversal_corpus(ReversalConfig(), np.random.default_rng(0))
    assert sep == 5 and corpus.shape == (20, 5) and np.all(corpus[:, 2] == sep)
    assert len({tuple(r) for r in corpus[:, :2]}) == 20
    assert len({tuple(r) for r in corpus[:, 3:]}) == 20


def test_reversal_oracle_and_untrained():
    rep = reversal_experiment(ReversalConfig(model="oracle"))
    assert rep["forward_accuracy"] == rep["reverse_accuracy"] == 1.0
    rep = reversal_experiment(ReversalConfig(trained=False))
    assert rep["reverse_accuracy"] <= rep["reverse_chance"] + 3 * math.sqrt(
        rep["reverse_chance"] / rep["n_facts"])


def test_reversal_trained_tabular():
    rep = reversal_experiment(ReversalConfig(seed=1))
    assert rep["forward_accuracy"] >= 0.9 and rep["reverse_z"] >= 10
