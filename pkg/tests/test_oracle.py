import itertools
import math

import numpy as np
import pytest

from maskdiff.checks import enumerated_conditional
from maskdiff.oracle import (BigramSource, StateSpaceTooLarge, TabularJoint, ZeroSupportError,
                             empirical_distribution, exact_conditional, exact_conditional_nll,
                             exact_nll, joint_from_bigram, sample_joint, state_index, tv_distance)


def test_state_index_row_major():
    assert state_index([0, 0, 1], 2) == 1
    assert state_index([1, 0, 0], 2) == 4
    j = TabularJoint.uniform(3, 2)
    assert [state_index(s, 3) for s in j.states] == list(range(9))


def test_joint_validation():
    with pytest.raises(ValueError):
        TabularJoint(2, 1, [0.5, 0.6])
    with pytest.raises(ValueError):
        TabularJoint(2, 1, [1.5, -0.5])
    with pytest.raises(ValueError):
        TabularJoint(2, 2, [1.0, 0.0])
    with pytest.raises(StateSpaceTooLarge):
        TabularJoint.uniform(10, 7)
    with pytest.raises(StateSpaceTooLarge):
        TabularJoint(2, 4, np.full(16, 1 / 16), cap=8)


def test_joint_is_immutable():
    j = TabularJoint.uniform(2, 2)
    with pytest.raises(ValueError):
        j.probs[0] = 1.0


def test_bigram_examples():
    K2 = [0.5, 0.5]
    copy = joint_from_bigram(BigramSource(K2, np.eye(2)), 3)
    assert copy.prob([0, 0, 0]) == 0.5 and copy.prob([1, 1, 1]) == 0.5
    assert copy.probs.sum() == 1.0
    ind = joint_from_bigram(BigramSource(K2, [K2, K2]), 2)
    assert np.allclose(ind.probs, 0.25)
    skew = joint_from_bigram(BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]]), 2)
    assert skew.prob([0, 0]) == pytest.approx(0.63, abs=1e-15)


def test_bigram_validation():
    with pytest.raises(ValueError):
        BigramSource([0.5, 0.4], np.eye(2))
    with pytest.raises(ValueError):
        BigramSource([0.5, 0.5], [[0.5, 0.4], [0, 1]])
    with pytest.raises(ValueError):
        BigramSource([1.0], [[1.0]])


def test_conditional_examples():
    pair = TabularJoint.from_support(2, 2, [[0, 0], [1, 1]])
    pred = exact_conditional(pair, [2, 1])
    assert pred.positions.tolist() == [0]
    assert pred[0].tolist() == [0.0, 1.0]
    assert len(exact_conditional(pair, [0, 0])) == 0
    full = exact_conditional(TabularJoint.uniform(2, 2), [2, 2])
    assert np.allclose(full.probs, 0.5)


def test_conditional_zero_support():
    pair = TabularJoint.from_support(2, 2, [[0, 0], [1, 1]])
    with pytest.raises(ZeroSupportError):
        exact_conditional(pair, [0, 1])
    with pytest.raises(ZeroSupportError):
        exact_conditional(pair, [1, 0])
    with pytest.raises(ZeroSupportError):
        exact_nll(pair, [0, 1])


@pytest.mark.parametrize("K,L", [(2, 2), (2, 4), (3, 3)])
def test_bayes_against_enumeration(K, L):
    joint = joint_from_bigram(BigramSource.random(K, np.random.default_rng(K * 10 + L)), L)
    for ctx in itertools.product(range(K + 1), repeat=L):
        if K not in ctx:
            continue
        pred = exact_conditional(joint, ctx)
        ref = enumerated_conditional(joint, ctx)
        assert np.allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12, rtol=0)
        for i, row in pred:
            for v in range(K):
                assert abs(row[v] - ref[(i, v)]) <= 1e-12


def test_exact_nll_examples():
    assert exact_nll(TabularJoint.uniform(3, 4), [0, 1, 2, 0]) == pytest.approx(4 * math.log(3), abs=1e-12)
    assert exact_nll(TabularJoint.point_mass(2, 3, [1, 0, 1]), [1, 0, 1]) == 0.0
    skew = joint_from_bigram(BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]]), 2)
    assert exact_nll(skew, [0, 0]) == pytest.approx(0.46204, abs=1e-5)


def test_conditional_nll(bigram_joint):
    x = [0, 1, 1]
    assert exact_conditional_nll(bigram_joint, x) == exact_nll(bigram_joint, x)
    assert exact_conditional_nll(bigram_joint, x, ()) == exact_nll(bigram_joint, x)
    two = joint_from_bigram(BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]]), 2)
    assert exact_conditional_nll(two, [0], [0]) == pytest.approx(-math.log(0.9), abs=1e-12)
    copy = joint_from_bigram(BigramSource([0.5, 0.5], np.eye(2)), 3)
    assert exact_conditional_nll(copy, [1, 1], [1]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ZeroSupportError):
        exact_conditional_nll(copy, [0], [0, 1])


def test_sample_joint_point_mass_and_head_frequency():
    pm = TabularJoint.point_mass(3, 3, [2, 0, 1])
    assert np.all(sample_joint(pm, np.random.default_rng(0), 100) == [2, 0, 1])
    coin = TabularJoint.uniform(2, 1)
    heads = sample_joint(coin, np.random.default_rng(1), 100_000).mean()
    assert abs(heads - 0.5) < 4 * math.sqrt(0.25 / 100_000)


def test_sample_joint_tv(bigram_joint):
    draws = sample_joint(bigram_joint, np.random.default_rng(2), 100_000)
    assert tv_distance(empirical_distribution(draws, 2), bigram_joint.probs) < 0.02


def test_json_roundtrip(bigram_joint):
    again = TabularJoint.from_json(bigram_joint.to_json())
    assert np.array_equal(again.probs, bigram_joint.probs)
    src = BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]])
    back = BigramSource.from_json(src.to_json())
    assert np.array_equal(back.transition, src.transition)
    with pytest.raises(ValueError):
        TabularJoint.from_dict({"K": 2, "L": 1, "probs": [0.5, 0.5], "extra": 1})
