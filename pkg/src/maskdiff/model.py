"""Data-prediction models, the masked ELBO objective, and training.

Every model maps a batch of masked contexts ``(B, l)`` with ``l <= L`` to
per-position categoricals ``(B, l, K)``.  A length-``l`` input is read as a
length-``l`` sequence; padding to ``L`` with masks is a separate choice made
by the caller (see :func:`maskdiff.evaluate.pad_with_masks`).

Two trainable parameterisations share one flat parameter vector layout:

``TabularModel``
    one logit row per (full masked context, position); its cross-entropy
    optimum is exactly the oracle conditional.
``CompactModel``
    token + position embeddings, one ``tanh`` hidden layer over the
    flattened sequence, and a per-position output projection.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from maskdiff.oracle import TabularJoint, ZeroSupportError, conditional_table, sample_joint
from maskdiff.process import forward_mask_frozen, mask_batch, mask_random_subset

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
DEFAULT_MC_SAMPLES = 128
ESTIMATOR_MODES = ("uniform-count", "uniform-t")
LR_SCHEDULES = ("constant", "linear")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Prediction:
    """Categoricals over the data alphabet at the masked positions of one context."""

    positions: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] != len(self.positions):
            raise ValueError("probs must have one row per masked position")
        self.probs = probs

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, position: int) -> np.ndarray:
        hit = np.flatnonzero(self.positions == position)
        if hit.size == 0:
            raise KeyError(f"position {position} is not masked")
        return self.probs[hit[0]]

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        return zip(self.positions.tolist(), self.probs)

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class PredictiveModel:
    """Interface shared by every data-prediction model.

    Subclasses implement :meth:`probs`.  Trainable subclasses also hold a flat
    ``params`` vector and implement ``forward``/``backward``.
    """

    kind = "abstract"

    def __init__(self, K: int, L: int):
        if K < 2 or L < 1:
            raise ValueError(f"need K >= 2 and L >= 1, got K={K}, L={L}")
        self.K = int(K)
        self.L = int(L)

    @property
    def mask_id(self) -> int:
        return self.K

    @property
    def parameter_count(self) -> int:
        return 0

    def check_input(self, xt) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.int64)
        if xt.ndim == 1:
            xt = xt[None, :]
        if xt.ndim != 2 or not 1 <= xt.shape[1] <= self.L:
            raise ValueError(f"contexts must have length 1..{self.L}, got shape {xt.shape}")
        if xt.size and (xt.min() < 0 or xt.max() > self.mask_id):
            raise ValueError(f"context ids must lie in [0, {self.mask_id}]")
        return xt

    def probs(self, xt) -> np.ndarray:
        raise NotImplementedError

    def metadata(self) -> dict:
        return {}


class OracleModel(PredictiveModel):
    """Exact conditionals of a :class:`TabularJoint`, memoised per context.

    A context shorter than ``L`` is a prefix whose remaining positions are
    unobserved, so it is answered as if padded with masks.

    Parallel sampling can reach contexts the joint assigns zero mass.  With
    ``off_support="raise"`` these raise :class:`ZeroSupportError`; with
    ``"uniform"`` every masked position gets a uniform prediction instead.
    """

    kind = "oracle"

    def __init__(self, joint: TabularJoint, off_support: str = "raise"):
        super().__init__(joint.K, joint.L)
        if off_support not in ("raise", "uniform"):
            raise ValueError("off_support must be 'raise' or 'uniform'")
        self.joint = joint
        self.off_support = off_support
        self._cache: dict[bytes, np.ndarray] = {}

    def _table(self, row: np.ndarray) -> np.ndarray:
        key = row.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            full = np.full(self.L, self.mask_id, dtype=np.int64)
            full[: row.size] = row
            try:
                hit = conditional_table(self.joint, full)
            except ZeroSupportError:
                if self.off_support == "raise":
                    raise
                hit = np.full((self.L, self.K), 1.0 / self.K)
                seen = full != self.mask_id
                hit[seen] = np.eye(self.K)[full[seen]]
            self._cache[key] = hit
        return hit[: row.size]

    def probs(self, xt) -> np.ndarray:
        xt = self.check_input(xt)
        return np.stack([self._table(row) for row in xt])


class TabularModel(PredictiveModel):
    """Free logit table keyed by the full masked context and position.

    Tables exist for every input length ``1..L``; length ``l`` has
    ``(K+1)**l`` contexts, each with ``l`` rows of ``K`` logits.
    """

    kind = "tabular"
    MAX_PARAMS = 10**7

    def __init__(self, K: int, L: int):
        super().__init__(K, L)
        base = K + 1
        sizes = [base**l * l * K for l in range(1, L + 1)]
        total = sum(sizes)
        if total > self.MAX_PARAMS:
            raise MemoryError(f"tabular model would need {total} logits")
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.params = np.zeros(total)

    @property
    def parameter_count(self) -> int:
        return self.params.size

    def table(self, length: int) -> np.ndarray:
        lo, hi = self._offsets[length - 1], self._offsets[length]
        return self.params[lo:hi].reshape((self.K + 1) ** length, length, self.K)

    def context_index(self, xt: np.ndarray) -> np.ndarray:
        l = xt.shape[1]
        powers = (self.K + 1) ** np.arange(l - 1, -1, -1, dtype=np.int64)
        return xt @ powers

    def forward(self, xt):
        xt = self.check_input(xt)
        idx = self.context_index(xt)
        return self.table(xt.shape[1])[idx], (xt.shape[1], idx)

    def backward(self, cache, dlogits: np.ndarray) -> np.ndarray:
        length, idx = cache
        grad = np.zeros_like(self.params)
        lo, hi = self._offsets[length - 1], self._offsets[length]
        # Flat offsets of every (row, position, token) cell; bincount sums duplicates.
        flat = (idx[:, None, None] * length + np.arange(length)[None, :, None]) * self.K \
            + np.arange(self.K)[None, None, :]
        grad[lo:hi] = np.bincount(flat.ravel(), weights=dlogits.ravel(), minlength=hi - lo)
        return grad

    def probs(self, xt) -> np.ndarray:
        return softmax(self.forward(xt)[0])


class CompactModel(PredictiveModel):
    """Embedding + single hidden layer network over the whole (bidirectional) context.

    ``z = concat_j(E[x_j] + P[j])``, ``h = tanh(z W1 + b1)``,
    ``logits_i = h W2[i] + b2[i]``.  Shorter inputs use the leading rows of
    ``W1`` and the leading output heads.
    """

    kind = "compact"

    def __init__(self, K: int, L: int, d: int = 8, hidden: int = 32, seed: int = 0,
                 init_scale: float = 1.0):
        super().__init__(K, L)
        self.d = int(d)
        self.hidden = int(hidden)
        self.seed = seed
        shapes = {
            "E": (K + 1, d),
            "P": (L, d),
            "W1": (L * d, hidden),
            "b1": (hidden,),
            "W2": (L, hidden, K),
            "b2": (L, K),
        }
        self._slices = {}
        off = 0
        for name, shp in shapes.items():
            n = int(np.prod(shp))
            self._slices[name] = (off, off + n, shp)
            off += n
        self.params = np.zeros(off)
        rng = np.random.default_rng(seed)
        s = init_scale
        self.E[...] = rng.normal(0, s / math.sqrt(d), self.E.shape)
        self.P[...] = rng.normal(0, s / math.sqrt(d), self.P.shape)
        self.W1[...] = rng.normal(0, s / math.sqrt(L), self.W1.shape)
        self.W2[...] = rng.normal(0, s / math.sqrt(hidden), self.W2.shape)

    def _view(self, vec: np.ndarray, name: str) -> np.ndarray:
        lo, hi, shp = self._slices[name]
        return vec[lo:hi].reshape(shp)

    E = property(lambda self: self._view(self.params, "E"))
    P = property(lambda self: self._view(self.params, "P"))
    W1 = property(lambda self: self._view(self.params, "W1"))
    b1 = property(lambda self: self._view(self.params, "b1"))
    W2 = property(lambda self: self._view(self.params, "W2"))
    b2 = property(lambda self: self._view(self.params, "b2"))

    @property
    def parameter_count(self) -> int:
        # Embedding tables excluded.
        return sum(self._slices[n][1] - self._slices[n][0] for n in ("W1", "b1", "W2", "b2"))

    def metadata(self) -> dict:
        return {"d": self.d, "hidden": self.hidden}

    def forward(self, xt):
        xt = self.check_input(xt)
        B, l = xt.shape
        d = self.d
        z = (self.E[xt] + self.P[:l]).reshape(B, l * d)
        h = np.tanh(z @ self.W1[: l * d] + self.b1)
        logits = np.einsum("bh,lhk->blk", h, self.W2[:l]) + self.b2[:l]
        return logits, (xt, z, h)

    def backward(self, cache, dlogits: np.ndarray) -> np.ndarray:
        xt, z, h = cache
        B, l = xt.shape
        d = self.d
        grad = np.zeros_like(self.params)
        self._view(grad, "W2")[:l] = np.einsum("bh,blk->lhk", h, dlogits)
        self._view(grad, "b2")[:l] = dlogits.sum(axis=0)
        dh = np.einsum("blk,lhk->bh", dlogits, self.W2[:l])
        da = dh * (1.0 - h * h)
        self._view(grad, "W1")[: l * d] = z.T @ da
        self._view(grad, "b1")[...] = da.sum(axis=0)
        dz = (da @ self.W1[: l * d].T).reshape(B, l, d)
        np.add.at(self._view(grad, "E"), xt, dz)
        self._view(grad, "P")[:l] = dz.sum(axis=0)
        return grad

    def probs(self, xt) -> np.ndarray:
        return softmax(self.forward(xt)[0])


def predict(model: PredictiveModel, xt) -> Prediction:
    """Model conditionals at the masked positions of a single context."""
    xt = np.asarray(xt, dtype=np.int64)
    if xt.ndim != 1:
        raise ValueError("predict takes a single 1-D context")
    probs = model.probs(xt[None, :])[0]
    pos = np.flatnonzero(xt == model.mask_id)
    return Prediction(pos, probs[pos])


def unique_probs(probs_fn, xt: np.ndarray) -> np.ndarray:
    """Evaluate ``probs_fn`` once per distinct row of ``xt`` and scatter back."""
    uniq, inverse = np.unique(xt, axis=0, return_inverse=True)
    return probs_fn(uniq)[inverse.reshape(-1)]


def flops(N: float, D: float) -> float:
    """Training compute ``C = 6 N D``."""
    if N <= 0 or D <= 0:
        raise ValueError("N and D must be positive")
    return 6.0 * N * D


# --------------------------------------------------------------------------
# Masked ELBO estimators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LossEstimate:
    """Monte-Carlo mean and standard error; unpacks as ``(mean, stderr)``."""

    mean: float
    stderr: float
    floored: bool = False
    n_samples: int = 0

    def __iter__(self):
        return iter((self.mean, self.stderr))


def draw_masks(x0: np.ndarray, n: int, rng: np.random.Generator, mode: str, mask_id: int,
               eligible: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` noisy copies of ``x0`` and their ELBO weights.

    ``uniform-t`` draws ``t ~ U(0, 1]`` then masks each eligible position
    with probability ``t`` (weight ``1/t``).  ``uniform-count`` draws a mask
    count ``k ~ U{1..L_e}`` and a uniform size-``k`` subset of the ``L_e``
    eligible positions (weight ``L_e/k``).
    """
    x0 = np.asarray(x0, dtype=np.int64)
    L = x0.size
    if eligible is None:
        eligible = np.arange(L)
    eligible = np.asarray(eligible, dtype=np.int64)
    L_e = eligible.size
    if L_e == 0:
        raise ValueError("no eligible positions to noise")
    batch = np.broadcast_to(x0, (n, L))
    if mode == "uniform-t":
        t = 1.0 - rng.random(n)
        frozen = np.setdiff1d(np.arange(L), eligible)
        xt = mask_batch(batch, t, rng, mask_id, frozen=frozen if frozen.size else None)
        w = 1.0 / t
    elif mode == "uniform-count":
        k = rng.integers(1, L_e + 1, size=n)
        xt = mask_random_subset(batch, k, rng, mask_id, eligible=eligible)
        w = L_e / k
    else:
        raise ValueError(f"unknown estimator mode {mode!r}; expected one of {ESTIMATOR_MODES}")
    return xt, w


def masked_nll_terms(probs: np.ndarray, x0: np.ndarray, xt: np.ndarray,
                     mask_id: int) -> tuple[np.ndarray, bool]:
    """Per-row ``sum_{masked i} -log p(x0^i | xt)`` with the probability floor."""
    p_true = np.take_along_axis(probs, np.broadcast_to(x0, xt.shape)[..., None], axis=-1)[..., 0]
    floored = bool(np.any((p_true < PROB_FLOOR) & (xt == mask_id)))
    nll = -np.log(np.maximum(p_true, PROB_FLOOR))
    return np.where(xt == mask_id, nll, 0.0).sum(axis=1), floored


def elbo_samples(probs_fn, x0, rng: np.random.Generator, n_samples: int, mode: str,
                 mask_id: int, eligible=None) -> tuple[np.ndarray, bool]:
    """Independent single-draw estimates of the masked ELBO loss for ``x0``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x0 = np.asarray(x0, dtype=np.int64)
    xt, w = draw_masks(x0, n_samples, rng, mode, mask_id, eligible)
    uniq, inverse = np.unique(xt, axis=0, return_inverse=True)
    terms, floored = masked_nll_terms(probs_fn(uniq), x0, uniq, mask_id)
    return w * terms[inverse.reshape(-1)], floored


def summarize(values: np.ndarray, floored: bool = False) -> LossEstimate:
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return LossEstimate(float(values.mean()), se, floored, n)


def loss_estimate(model: PredictiveModel, x0, rng: np.random.Generator,
                  n_samples: int = DEFAULT_MC_SAMPLES, mode: str = "uniform-count") -> LossEstimate:
    """Unbiased Monte-Carlo estimate of the masked ELBO loss (an NLL upper bound)."""
    x0 = np.asarray(x0, dtype=np.int64)
    vals, floored = elbo_samples(model.probs, x0, rng, n_samples, mode, model.mask_id)
    return summarize(vals, floored)


# --------------------------------------------------------------------------
# Gradients and training
# --------------------------------------------------------------------------


def loss_and_grad(model, x0, xt, weights, target=None) -> tuple[float, np.ndarray]:
    """Weighted masked cross-entropy and its exact gradient.

    Args:
        model: a :class:`TabularModel` or :class:`CompactModel`.
        x0: clean sequences ``(B, l)``.
        xt: noisy contexts ``(B, l)``.
        weights: per-row ELBO weights (``1/t`` or ``L/k``).
        target: optional boolean ``(B, l)``; only masked positions that are
            also targets contribute.

    Returns:
        ``(loss, grad)`` where loss is the batch mean of per-row weighted sums.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.int64))
    xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x0.shape[:1])
    B = x0.shape[0]
    active = xt == model.mask_id
    if target is not None:
        active &= np.atleast_2d(target)
    if not active.any():
        return 0.0, np.zeros_like(model.params)
    logits, cache = model.forward(xt)
    logp = log_softmax(logits)
    logp_true = np.take_along_axis(logp, x0[..., None], axis=-1)[..., 0]
    live = active & (logp_true > LOG_FLOOR)
    nll = np.where(active, -np.maximum(logp_true, LOG_FLOOR), 0.0)
    loss = float((w * nll.sum(axis=1)).sum() / B)
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, x0[..., None],
                      np.take_along_axis(dlogits, x0[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (live * (w / B)[:, None])[..., None]
    return loss, model.backward(cache, dlogits)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 64
    learning_rate: float = 0.5
    seed: int = 0
    variable_length_fraction: float = 0.0
    L_max: int | None = None
    t_mode: str = "uniform-count"
    prompt_dropout_prob: float = 0.0
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("steps, batch_size and learning_rate must be positive")
        for name in ("variable_length_fraction", "prompt_dropout_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.t_mode not in ESTIMATOR_MODES:
            raise ValueError(f"t_mode must be one of {ESTIMATOR_MODES}")
        if self.L_max is not None and self.L_max < 1:
            raise ValueError("L_max must be >= 1")


@dataclass
class TrainLog:
    """Per-step record; ``loss`` is per token (per-row loss divided by length)."""

    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    tokens_seen: list = field(default_factory=list)
    flops: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: {"loss_normalization": "per-token"})

    def append(self, step, loss, tokens, c, length):
        self.steps.append(step)
        self.loss.append(loss)
        self.tokens_seen.append(tokens)
        self.flops.append(c)
        self.lengths.append(length)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "tokens_seen", "flops"])
        for row in zip(self.steps, self.loss, self.tokens_seen, self.flops):
            w.writerow([row[0], repr(float(row[1])), row[2], repr(float(row[3]))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _data_sampler(data, rng):
    if isinstance(data, TabularJoint):
        return lambda n: sample_joint(data, rng, size=n)
    arr = np.asarray(data, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (n, L) array of token ids")
    return lambda n: arr[rng.integers(0, arr.shape[0], size=n)]


def _sgd(model, config: TrainConfig, make_batch, log: TrainLog):
    N = model.parameter_count
    tokens = 0
    for step in range(1, config.steps + 1):
        x0, xt, w, target = make_batch()
        loss, grad = loss_and_grad(model, x0, xt, w, target)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(
                f"non-finite loss/gradient at step {step} (loss={loss}); "
                f"try a smaller learning_rate than {config.learning_rate}")
        lr = config.learning_rate
        if config.lr_schedule == "linear":
            lr *= (config.steps - step + 1) / config.steps
        model.params -= lr * grad
        length = x0.shape[1]
        tokens += x0.size
        log.append(step, loss / length, tokens, flops(N, tokens), length)
    return model, log


def train(model, data, config: TrainConfig, rng: np.random.Generator | None = None):
    """Plain SGD on the masked ELBO loss.

    ``data`` is a :class:`TabularJoint` (sampled fresh each step) or an
    ``(n, L)`` array of training sequences (sampled with replacement).  A
    fraction ``variable_length_fraction`` of batches use a length drawn from
    ``U{1..L_max}`` (leading prefixes of the sampled sequences).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    draw = _data_sampler(data, rng)
    L_max = config.L_max or model.L
    if L_max > model.L:
        raise ValueError(f"L_max={L_max} exceeds model length {model.L}")
    B = config.batch_size

    def make_batch():
        length = L_max
        if config.variable_length_fraction > 0 and rng.random() < config.variable_length_fraction:
            length = int(rng.integers(1, L_max + 1))
        x0 = draw(B)[:, :length]
        if config.t_mode == "uniform-count":
            k = rng.integers(1, length + 1, size=B)
            xt = mask_random_subset(x0, k, rng, model.mask_id)
            w = length / k
        else:
            t = 1.0 - rng.random(B)
            xt = mask_batch(x0, t, rng, model.mask_id)
            w = 1.0 / t
        return x0, xt, w, None

    log = TrainLog()
    log.metadata.update(kind=model.kind, N=model.parameter_count, t_mode=config.t_mode)
    return _sgd(model, config, make_batch, log)


def pad_response(response, length: int, eos_id: int) -> np.ndarray:
    response = np.asarray(response, dtype=np.int64)
    if response.size > length:
        raise ValueError("response longer than pad length")
    return np.concatenate([response, np.full(length - response.size, eos_id, dtype=np.int64)])


def sft_step(model, prompt, response, t: float, rng: np.random.Generator,
             eos_id: int | None = None, pad_to: int | None = None,
             prompt_dropout_prob: float = 0.0) -> tuple[float, np.ndarray]:
    """One supervised fine-tuning step: prompt frozen, noise and loss on the response only.

    The response is padded with ``eos_id`` up to ``pad_to``.  With probability
    ``prompt_dropout_prob`` the prompt is replaced by masks, which trains the
    unconditional branch used by standard guidance.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError("sft_step needs t in (0, 1]")
    prompt = np.asarray(prompt, dtype=np.int64)
    response = np.asarray(response, dtype=np.int64)
    if pad_to is not None:
        if eos_id is None:
            raise ValueError("eos_id is required when padding")
        response = pad_response(response, pad_to, eos_id)
    seq = np.concatenate([prompt, response])
    if seq.size > model.L:
        raise ValueError(f"prompt+response length {seq.size} exceeds model length {model.L}")
    P = prompt.size
    xt = forward_mask_frozen(seq, t, range(P), rng, model.mask_id)
    if prompt_dropout_prob > 0 and rng.random() < prompt_dropout_prob:
        xt[:P] = model.mask_id
    target = np.zeros(seq.size, dtype=bool)
    target[P:] = True
    return loss_and_grad(model, seq[None], xt[None], [1.0 / t], target[None])


def train_sft(model, pairs, config: TrainConfig, eos_id: int,
              rng: np.random.Generator | None = None):
    """SGD on prompt-frozen response noising over ``(prompt, response)`` pairs.

    Prompts must share one length; responses are EOS-padded to the batch max.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    prompts = [np.asarray(p, dtype=np.int64) for p, _ in pairs]
    responses = [np.asarray(r, dtype=np.int64) for _, r in pairs]
    if not pairs:
        raise ValueError("no training pairs")
    P = prompts[0].size
    if any(p.size != P for p in prompts):
        raise ValueError("train_sft requires prompts of equal length")
    B = config.batch_size

    def make_batch():
        idx = rng.integers(0, len(pairs), size=B)
        R = max(responses[i].size for i in idx)
        x0 = np.stack([np.concatenate([prompts[i], pad_response(responses[i], R, eos_id)])
                       for i in idx])
        eligible = np.arange(P, P + R)
        if config.t_mode == "uniform-count":
            k = rng.integers(1, R + 1, size=B)
            xt = mask_random_subset(x0, k, rng, model.mask_id, eligible=eligible)
            w = R / k
        else:
            t = 1.0 - rng.random(B)
            xt = mask_batch(x0, t, rng, model.mask_id, frozen=np.arange(P))
            w = 1.0 / t
        if config.prompt_dropout_prob > 0:
            drop = rng.random(B) < config.prompt_dropout_prob
            xt[np.ix_(drop, np.arange(P))] = model.mask_id
        target = np.zeros_like(x0, dtype=bool)
        target[:, P:] = True
        return x0, xt, w, target

    log = TrainLog()
    log.metadata.update(kind=model.kind, N=model.parameter_count, t_mode=config.t_mode,
                        recipe="sft", prompt_dropout_prob=config.prompt_dropout_prob)
    return _sgd(model, config, make_batch, log)


# --------------------------------------------------------------------------
# Checkpoints: one JSON header line, then little-endian float64 parameters
# --------------------------------------------------------------------------

CHECKPOINT_FORMAT = "maskdiff-checkpoint-v1"


def save_checkpoint(model: PredictiveModel, path, seed: int | None = None) -> None:
    if isinstance(model, OracleModel):
        block = model.joint.probs
    else:
        block = model.params
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "K": model.K,
        "L": model.L,
        "N": model.parameter_count,
        "seed": seed,
        "n_values": int(block.size),
        "config": model.metadata(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[PredictiveModel, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    block = np.frombuffer(raw[nl + 1:], dtype="<f8").astype(np.float64)
    if block.size != header["n_values"]:
        raise ValueError(f"{path}: expected {header['n_values']} values, found {block.size}")
    K, L, kind = header["K"], header["L"], header["kind"]
    if kind == "oracle":
        model = OracleModel(TabularJoint(K, L, block))
    elif kind == "tabular":
        model = TabularModel(K, L)
        model.params[...] = block
    elif kind == "compact":
        model = CompactModel(K, L, **header["config"])
        model.params[...] = block
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    return model, header
