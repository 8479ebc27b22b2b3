"""Brute-force verification routines and the oracle-vs-engine check suite.

Everything here recomputes a quantity by a route independent of the code
path it verifies: explicit enumeration of mask patterns or sampler
branches, numerical quadrature over the noise level, or direct Python loops
over the joint table.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from maskdiff.evaluate import EvalConfig, chain_rule_ll
from maskdiff.model import PROB_FLOOR, OracleModel, loss_estimate
from maskdiff.oracle import (TabularJoint, empirical_distribution, exact_conditional, exact_nll,
                             state_index, tv_distance)
from maskdiff.sampler import SampleConfig, ancestral_sample_batch, greedy_sample


def _pattern_terms(model, x0: np.ndarray) -> dict:
    """``sum_{i in M} -log p(x0^i | x0 with M masked)`` for every nonempty pattern ``M``."""
    L = x0.size
    out = {}
    for k in range(1, L + 1):
        for M in itertools.combinations(range(L), k):
            xt = x0.copy()
            xt[list(M)] = model.mask_id
            probs = model.probs(xt[None])[0]
            out[M] = float(sum(-math.log(max(probs[i, x0[i]], PROB_FLOOR)) for i in M))
    return out


def exact_loss_expectation(model, x0, mode: str) -> float:
    """Exact expectation of a single-sample ELBO estimate.

    ``uniform-count`` sums over every (count, subset) outcome with its
    probability.  ``uniform-t`` integrates the pattern-enumerated integrand
    ``(1/t) sum_M t^|M| (1-t)^(L-|M|) S(M)`` over ``t`` by adaptive quadrature.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    L = x0.size
    terms = _pattern_terms(model, x0)
    if mode == "uniform-count":
        return sum(S * (L / len(M)) / (L * math.comb(L, len(M))) for M, S in terms.items())
    if mode == "uniform-t":
        by_size = np.zeros(L + 1)
        for M, S in terms.items():
            by_size[len(M)] += S

        def integrand(t):
            k = np.arange(1, L + 1)
            return float(np.sum(by_size[1:] * t ** (k - 1) * (1 - t) ** (L - k)))

        val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
        return val
    raise ValueError(f"unknown mode {mode!r}")


def ancestral_output_distribution(model, steps: int, length: int | None = None) -> np.ndarray:
    """Exact output law of the ancestral sampler from an all-mask start.

    Enumerates every branch of every step (each masked position either stays
    masked or takes any token) and returns the distribution over ``K**length``
    sequences in table order.
    """
    K, m = model.K, model.mask_id
    length = model.L if length is None else length
    states = {tuple([m] * length): 1.0}
    for k in range(steps, 0, -1):
        t, s = k / steps, (k - 1) / steps
        nxt: dict = {}
        for x, px in states.items():
            xa = np.array(x)
            masked = [i for i in range(length) if x[i] == m]
            probs = model.probs(xa[None])[0] if masked else None
            options = []
            for i in masked:
                opts = [(m, s / t)] if s > 0 else []
                opts += [(j, (t - s) / t * probs[i, j]) for j in range(K) if probs[i, j] > 0]
                options.append(opts)
            for combo in itertools.product(*options):
                y = list(x)
                p = px
                for i, (tok, pt) in zip(masked, combo):
                    y[i] = tok
                    p *= pt
                nxt[tuple(y)] = nxt.get(tuple(y), 0.0) + p
        states = nxt
    out = np.zeros(K**length)
    for x, p in states.items():
        if m in x:
            raise AssertionError("masked state survived the final step")
        out[state_index(np.array(x), K)] += p
    return out


def marginal_product(joint: TabularJoint) -> np.ndarray:
    """Product of the per-position marginals, in table order."""
    out = np.ones(joint.K**joint.L)
    for i in range(joint.L):
        marg = np.bincount(joint.states[:, i], weights=joint.probs, minlength=joint.K)
        out *= marg[joint.states[:, i]]
    return out


def enumerated_conditional(joint: TabularJoint, xt) -> dict:
    """``p(x0^i = v | unmasked)`` by explicit loops over every sequence."""
    xt = list(int(v) for v in xt)
    m = joint.mask_id
    num: dict = {}
    den = 0.0
    for seq in itertools.product(range(joint.K), repeat=joint.L):
        if any(xt[i] != m and xt[i] != seq[i] for i in range(joint.L)):
            continue
        p = joint.probs[state_index(np.array(seq), joint.K)]
        den += p
        for i in range(joint.L):
            if xt[i] == m:
                num[(i, seq[i])] = num.get((i, seq[i]), 0.0) + p
    return {key: v / den for key, v in num.items()} if den > 0 else {}


# --------------------------------------------------------------------------
# Check suite
# --------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)


def _contexts(joint: TabularJoint):
    for ctx in itertools.product(range(joint.K + 1), repeat=joint.L):
        ctx = np.array(ctx)
        if np.any(ctx == joint.mask_id):
            yield ctx


def check_raw_joint(d: dict) -> list:
    """Structural invariants of a joint fixture before it is constructed."""
    probs = np.asarray(d.get("probs", []), dtype=np.float64)
    K, L = int(d.get("K", 0)), int(d.get("L", 0))
    res = [CheckResult("joint-shape", K >= 2 and L >= 1 and probs.size == K**L,
                       f"K={K} L={L} entries={probs.size}")]
    res.append(CheckResult("joint-nonnegative", bool(np.all(probs >= 0)), ""))
    res.append(CheckResult("joint-normalized", abs(probs.sum() - 1.0) <= 1e-12,
                           f"sum={probs.sum():.15g}"))
    return res


def run_joint_checks(joint: TabularJoint, seed: int = 0, mc_samples: int = 20000) -> list:
    """Engine-vs-oracle invariants for one joint (keep ``K**L`` small)."""
    results = []
    model = OracleModel(joint)
    support = [x for x in joint.states if joint.prob(x) > 0]

    worst_sum = worst_bayes = 0.0
    for ctx in _contexts(joint):
        try:
            pred = exact_conditional(joint, ctx)
        except ValueError:
            continue
        worst_sum = max(worst_sum, float(np.abs(pred.probs.sum(axis=1) - 1).max()))
        ref = enumerated_conditional(joint, ctx)
        for i, row in pred:
            for v in range(joint.K):
                worst_bayes = max(worst_bayes, abs(row[v] - ref.get((i, v), 0.0)))
    results.append(CheckResult("conditional-normalized", worst_sum <= 1e-12, f"max dev {worst_sum:.2e}"))
    results.append(CheckResult("conditional-bayes", worst_bayes <= 1e-12, f"max dev {worst_bayes:.2e}"))

    worst_chain = 0.0
    for x in support:
        worst_chain = max(worst_chain, abs(chain_rule_ll(model, [], x, EvalConfig("chain_rule"))
                                           + exact_nll(joint, x)))
    results.append(CheckResult("chain-rule-telescopes", worst_chain <= 1e-9, f"max dev {worst_chain:.2e}"))

    worst_eq = worst_tight = 0.0
    for x in support[:8]:
        a = exact_loss_expectation(model, x, "uniform-count")
        b = exact_loss_expectation(model, x, "uniform-t")
        worst_eq = max(worst_eq, abs(a - b))
        worst_tight = max(worst_tight, abs(a - exact_nll(joint, x)))
    results.append(CheckResult("estimator-equivalence", worst_eq <= 1e-10, f"max dev {worst_eq:.2e}"))
    results.append(CheckResult("elbo-tight-for-oracle", worst_tight <= 1e-10, f"max dev {worst_tight:.2e}"))

    rng = np.random.default_rng(seed)
    x = support[0]
    est = loss_estimate(model, x, rng, mc_samples)
    nll = exact_nll(joint, x)
    ok = abs(est.mean - nll) <= 4 * est.stderr + 1e-12 and not est.floored
    results.append(CheckResult("mc-elbo-matches-nll", ok,
                               f"mean {est.mean:.5f} +/- {est.stderr:.5f} vs {nll:.5f}"))

    if joint.K ** joint.L <= 81:
        sampler_model = OracleModel(joint, off_support="uniform")
        one = ancestral_output_distribution(sampler_model, 1)
        prod = marginal_product(joint)
        dev = float(np.abs(one - prod).max())
        results.append(CheckResult("ancestral-single-step-factorizes", dev <= 1e-12, f"max dev {dev:.2e}"))

        law = ancestral_output_distribution(sampler_model, joint.L)
        draws = ancestral_sample_batch(sampler_model, SampleConfig(steps=joint.L, mode="ancestral"),
                                       mc_samples, rng=np.random.default_rng(seed))
        emp = empirical_distribution(draws, joint.K)
        tv = tv_distance(emp, law)
        tol = math.sqrt(joint.K**joint.L / mc_samples)
        results.append(CheckResult("ancestral-enumeration-matches-sampler", tv <= tol,
                                   f"TV {tv:.4f} (tol {tol:.4f})"))

        fine = ancestral_output_distribution(sampler_model, 4 * joint.L)
        bias_l, bias_4l = tv_distance(law, joint.probs), tv_distance(fine, joint.probs)
        ok = bias_4l <= 1e-10 or bias_4l < 0.5 * bias_l
        results.append(CheckResult("ancestral-bias-shrinks-with-steps", ok,
                                   f"TV to data {bias_l:.4f} at N=L, {bias_4l:.4f} at N=4L"))

    L = joint.L
    for N in sorted({1, L, max(1, L // 2)}):
        trace = greedy_sample(model, SampleConfig(steps=N)).trace
        expected = [(L * (N - k + 1)) // N for k in range(N, 0, -1)]
        results.append(CheckResult(f"greedy-schedule-N{N}", trace == expected, f"{trace} vs {expected}"))
    return results


def default_joints() -> dict:
    """Shipped fixtures: uniform, a deterministic chain, and two random bigrams."""
    from maskdiff.oracle import BigramSource, joint_from_bigram

    rng = np.random.default_rng(12345)
    return {
        "uniform-K2-L2": TabularJoint.uniform(2, 2),
        "copy-chain-K2-L3": joint_from_bigram(BigramSource([0.5, 0.5], np.eye(2)), 3),
        "bigram-K2-L3": joint_from_bigram(BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]]), 3),
        "random-bigram-K3-L3": joint_from_bigram(BigramSource.random(3, rng), 3),
    }


def finite_difference_gradient(model, x0, xt, weights, h: float = 1e-5, target=None) -> np.ndarray:
    """Central differences of :func:`maskdiff.model.loss_and_grad`'s loss in every parameter."""
    from maskdiff.model import loss_and_grad

    theta = model.params
    base = theta.copy()
    out = np.empty_like(base)
    for i in range(base.size):
        theta[i] = base[i] + h
        up, _ = loss_and_grad(model, x0, xt, weights, target)
        theta[i] = base[i] - h
        down, _ = loss_and_grad(model, x0, xt, weights, target)
        theta[i] = base[i]
        out[i] = (up - down) / (2 * h)
    return out


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-10) -> float:
    """Largest ``|a - n| / max(|a|, |n|)`` over components where either exceeds ``atol``."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    live = scale > atol
    if not live.any():
        return 0.0
    return float(np.max(np.abs(analytic - numeric)[live] / scale[live]))


def max_conditional_kl(model, joint: TabularJoint) -> float:
    """``max KL(oracle || model)`` over masked positions of every positive-mass full-length context."""
    worst = 0.0
    for ctx in _contexts(joint):
        try:
            ref = exact_conditional(joint, ctx)
        except ValueError:
            continue
        got = model.probs(ctx[None])[0][ref.positions]
        p = ref.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * (np.log(p) - np.log(np.maximum(got, PROB_FLOOR))), 0.0)
        worst = max(worst, float(terms.sum(axis=1).max()))
    return worst
