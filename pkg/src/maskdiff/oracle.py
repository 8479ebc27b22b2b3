"""Exact ground truth over small sequence spaces.

A :class:`TabularJoint` stores the full probability table over ``K**L``
sequences (row-major, position 0 most significant).  Conditionals given a
masked context are computed by brute-force summation over every completion
that agrees with the unmasked tokens, which is exactly the time-independent
target of a masked data-prediction model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_STATE_CAP = 10**6
_SUM_TOL = 1e-12


class ZeroSupportError(ValueError):
    """Raised when conditioning on (or scoring) an event of probability zero."""


class StateSpaceTooLarge(MemoryError):
    """Raised when ``K**L`` exceeds the configured brute-force cap."""


def _check_space(K: int, L: int, cap: int) -> int:
    if K < 2 or L < 1:
        raise ValueError(f"need K >= 2 and L >= 1, got K={K}, L={L}")
    n = K**L
    if n > cap:
        raise StateSpaceTooLarge(f"K**L = {n} exceeds state cap {cap}")
    return n


def enumerate_states(K: int, L: int) -> np.ndarray:
    """All ``K**L`` sequences as a ``(K**L, L)`` array in table order."""
    idx = np.arange(K**L, dtype=np.int64)
    powers = K ** np.arange(L - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % K


def state_index(x, K: int) -> np.ndarray:
    """Table index of one sequence or a batch of sequences."""
    x = np.asarray(x, dtype=np.int64)
    L = x.shape[-1]
    powers = K ** np.arange(L - 1, -1, -1, dtype=np.int64)
    return x @ powers


@dataclass(frozen=True, eq=False)
class TabularJoint:
    """Explicit joint distribution over ``{0..K-1}**L``."""

    K: int
    L: int
    probs: np.ndarray
    cap: int = DEFAULT_STATE_CAP
    _states: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        n = _check_space(self.K, self.L, self.cap)
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size != n:
            raise ValueError(f"expected {n} probabilities, got {p.size}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.15g}, not 1")
        p.setflags(write=False)
        states = enumerate_states(self.K, self.L)
        states.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_states", states)

    @property
    def mask_id(self) -> int:
        return self.K

    @property
    def states(self) -> np.ndarray:
        return self._states

    def prob(self, x) -> float:
        return float(self.probs[state_index(x, self.K)])

    @classmethod
    def uniform(cls, K: int, L: int) -> "TabularJoint":
        return cls(K, L, np.full(K**L, 1.0 / K**L))

    @classmethod
    def point_mass(cls, K: int, L: int, x) -> "TabularJoint":
        p = np.zeros(K**L)
        p[state_index(x, K)] = 1.0
        return cls(K, L, p)

    @classmethod
    def from_support(cls, K: int, L: int, support, weights=None) -> "TabularJoint":
        """Joint with mass on the listed sequences (uniform unless ``weights`` given)."""
        support = np.asarray(support, dtype=np.int64).reshape(-1, L)
        w = np.ones(len(support)) if weights is None else np.asarray(weights, float)
        p = np.zeros(K**L)
        np.add.at(p, state_index(support, K), w)
        return cls(K, L, p / p.sum())

    def to_dict(self) -> dict:
        return {"K": self.K, "L": self.L, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict, cap: int = DEFAULT_STATE_CAP) -> "TabularJoint":
        unknown = set(d) - {"K", "L", "probs"}
        if unknown:
            raise ValueError(f"unknown TabularJoint fields: {sorted(unknown)}")
        return cls(int(d["K"]), int(d["L"]), np.asarray(d["probs"], dtype=np.float64), cap=cap)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularJoint":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class BigramSource:
    """First-order Markov chain used to generate non-trivial joints."""

    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        init = np.array(self.initial, dtype=np.float64)
        trans = np.array(self.transition, dtype=np.float64)
        K = init.size
        if K < 2 or trans.shape != (K, K):
            raise ValueError("initial must have K >= 2 entries and transition be K x K")
        if np.any(init < 0) or abs(init.sum() - 1) > _SUM_TOL:
            raise ValueError("initial distribution must be nonnegative and sum to 1")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1) > _SUM_TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "transition", trans)

    @property
    def K(self) -> int:
        return self.initial.size

    @classmethod
    def random(cls, K: int, rng: np.random.Generator, concentration: float = 1.0):
        """Dirichlet-random chain; all entries strictly positive almost surely."""
        init = rng.dirichlet(np.full(K, concentration))
        trans = rng.dirichlet(np.full(K, concentration), size=K)
        # Dirichlet draws sum to 1 only up to rounding.
        return cls(init / init.sum(), trans / trans.sum(axis=1, keepdims=True))

    def to_dict(self) -> dict:
        return {"K": self.K, "initial": self.initial.tolist(),
                "transition": self.transition.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BigramSource":
        unknown = set(d) - {"K", "initial", "transition"}
        if unknown:
            raise ValueError(f"unknown BigramSource fields: {sorted(unknown)}")
        src = cls(d["initial"], d["transition"])
        if "K" in d and int(d["K"]) != src.K:
            raise ValueError("K does not match the length of initial")
        return src

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BigramSource":
        return cls.from_dict(json.loads(text))


def joint_from_bigram(src: BigramSource, L: int, cap: int = DEFAULT_STATE_CAP) -> TabularJoint:
    """Tabulate the chain's distribution over length-``L`` sequences."""
    K = src.K
    _check_space(K, L, cap)
    states = enumerate_states(K, L)
    p = src.initial[states[:, 0]].copy()
    for i in range(1, L):
        p *= src.transition[states[:, i - 1], states[:, i]]
    # The product of stochastic factors sums to 1 up to rounding.
    return TabularJoint(K, L, p / p.sum(), cap=cap)


def _compatible(joint: TabularJoint, xt: np.ndarray) -> np.ndarray:
    xt = np.asarray(xt, dtype=np.int64)
    if xt.shape != (joint.L,):
        raise ValueError(f"context must have length {joint.L}, got shape {xt.shape}")
    if xt.min() < 0 or xt.max() > joint.mask_id:
        raise ValueError("context contains ids outside [0, K]")
    visible = xt != joint.mask_id
    return np.all(joint.states[:, visible] == xt[visible], axis=1)


def conditional_table(joint: TabularJoint, xt) -> np.ndarray:
    """``(L, K)`` array of ``p(x0^i | unmasked tokens of xt)`` for every position.

    Unmasked rows are the one-hot of the visible token.
    """
    xt = np.asarray(xt, dtype=np.int64)
    ok = _compatible(joint, xt)
    mass = joint.probs[ok]
    total = mass.sum()
    if total <= 0.0:
        raise ZeroSupportError(f"context {xt.tolist()} has zero probability")
    sub = joint.states[ok]
    out = np.empty((joint.L, joint.K))
    for i in range(joint.L):
        out[i] = np.bincount(sub[:, i], weights=mass, minlength=joint.K) / total
    return out


def exact_conditional(joint: TabularJoint, xt):
    """Brute-force conditionals at the masked positions of ``xt``.

    Returns:
        A :class:`maskdiff.model.Prediction` over the masked positions.

    Raises:
        ZeroSupportError: if no completion consistent with ``xt`` has mass.
    """
    from maskdiff.model import Prediction

    xt = np.asarray(xt, dtype=np.int64)
    table = conditional_table(joint, xt)
    pos = np.flatnonzero(xt == joint.mask_id)
    return Prediction(pos, table[pos])


def exact_nll(joint: TabularJoint, x0) -> float:
    """``-log p(x0)`` in nats."""
    p = joint.prob(x0)
    if p <= 0.0:
        raise ZeroSupportError(f"sequence {np.asarray(x0).tolist()} has zero probability")
    return float(-np.log(p))


def prefix_marginal(joint: TabularJoint, prefix) -> float:
    """Total mass of sequences starting with ``prefix``."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.size == 0:
        return 1.0
    ok = np.all(joint.states[:, : prefix.size] == prefix, axis=1)
    return float(joint.probs[ok].sum())


def exact_conditional_nll(joint: TabularJoint, response, prompt=()) -> float:
    """``-log p(response | prompt)`` where ``prompt`` is a prefix and ``response`` follows it."""
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    response = np.asarray(response, dtype=np.int64).reshape(-1)
    if prompt.size == 0 and response.size == joint.L:
        return exact_nll(joint, response)
    denom = prefix_marginal(joint, prompt)
    if denom <= 0.0:
        raise ZeroSupportError(f"prompt {prompt.tolist()} has zero probability")
    num = prefix_marginal(joint, np.concatenate([prompt, response]))
    if num <= 0.0:
        raise ZeroSupportError("response has zero probability given the prompt")
    return float(-(np.log(num) - np.log(denom)))


def sample_joint(joint: TabularJoint, rng: np.random.Generator, size: int | None = None):
    """Inverse-CDF draws from the flat table; one uniform per sample."""
    cdf = np.cumsum(joint.probs)
    u = rng.random() if size is None else rng.random(size)
    # Guard against u landing beyond a cdf that rounds to slightly below 1.
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    return joint.states[idx].copy()


def empirical_distribution(samples: np.ndarray, K: int) -> np.ndarray:
    """Normalised histogram of ``(n, L)`` samples in table order."""
    samples = np.asarray(samples, dtype=np.int64)
    L = samples.shape[1]
    counts = np.bincount(state_index(samples, K), minlength=K**L)
    return counts / counts.sum()


def tv_distance(p, q) -> float:
    """Total-variation distance ``0.5 * sum |p - q|``."""
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())
