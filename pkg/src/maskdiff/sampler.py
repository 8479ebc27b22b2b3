"""Reverse-process generation.

``ancestral_*`` follows the exact reverse transition: from time ``t`` to
``s`` every masked position independently stays masked with probability
``s/t`` and is otherwise filled with a draw from the (optionally guided)
prediction.  ``greedy_sample`` is the deterministic confidence-ordered
variant: after the step landing at ``s`` exactly ``floor(L_g (1 - s))`` of the
``L_g`` generated positions are unmasked, choosing the most confident
argmax predictions first.

Prompts are either a prefix (``prompt=``) or a full-length template with
masks marking the region to generate (``template=``).  Condition positions
are never re-noised and serve as the guidance condition.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from maskdiff.guidance import GuidanceConfig, guided_probs
from maskdiff.model import unique_probs

SAMPLER_MODES = ("ancestral", "greedy")


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 8
    length: int | None = None
    guidance: GuidanceConfig = GuidanceConfig()
    seed: int = 0
    mode: str = "greedy"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}")
        if self.length is not None and self.length < 1:
            raise ValueError("length must be >= 1")


@dataclass
class SampleResult:
    tokens: np.ndarray
    nfe: int
    seconds: float
    trace: list = field(default_factory=list)


def initial_state(model, length: int | None = None, prompt=None, template=None):
    """Starting context and the condition positions.

    Returns:
        ``(x1, condition)`` where ``x1`` has every generated position masked.
    """
    m = model.mask_id
    if template is not None:
        if prompt is not None:
            raise ValueError("pass either prompt or template, not both")
        x = np.array(template, dtype=np.int64)
        if x.ndim != 1 or x.size > model.L or x.min() < 0 or x.max() > m:
            raise ValueError("template must be a 1-D context no longer than the model length")
        return x, np.flatnonzero(x != m)
    length = model.L if length is None else int(length)
    if length > model.L:
        raise ValueError(f"length {length} exceeds model length {model.L}")
    x = np.full(length, m, dtype=np.int64)
    if prompt is None or len(prompt) == 0:
        return x, np.arange(0)
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.size >= length:
        raise ValueError("prompt must be shorter than the sample length")
    if prompt.min() < 0 or prompt.max() >= model.K:
        raise ValueError("prompt ids must lie in the data alphabet")
    x[: prompt.size] = prompt
    return x, np.arange(prompt.size)


def _fill_probs(model, xt, condition, guidance):
    fn = lambda x: unique_probs(model.probs, x)
    return guided_probs(model, xt, condition, guidance, probs_fn=fn)


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    tok = (u[..., None] * cdf[..., -1:] >= cdf).sum(axis=-1)
    return np.minimum(tok, probs.shape[-1] - 1)


def ancestral_step(model, xt, t: float, s: float, guidance: GuidanceConfig | None = None,
                   rng: np.random.Generator | None = None, condition=()) -> np.ndarray:
    """One reverse transition ``t -> s`` on a context or a ``(B, l)`` batch.

    Two uniforms are drawn per position: one decides fill versus stay, one
    picks the token by inverse CDF.
    """
    if not 0.0 <= s < t <= 1.0:
        raise ValueError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    guidance = GuidanceConfig() if guidance is None else guidance
    rng = np.random.default_rng() if rng is None else rng
    xt = np.asarray(xt, dtype=np.int64)
    single = xt.ndim == 1
    batch = np.atleast_2d(xt)
    masked = batch == model.mask_id
    u_fill = rng.random(batch.shape)
    u_tok = rng.random(batch.shape)
    if not masked.any():
        return xt.copy()
    probs = _fill_probs(model, batch, condition, guidance)
    fill = masked & (u_fill < (t - s) / t)
    out = np.where(fill, _categorical(probs, u_tok), batch)
    return out[0] if single else out


def ancestral_sample_batch(model, config: SampleConfig, n: int, prompt=None, template=None,
                           rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` independent ancestral samples as an ``(n, length)`` array."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    x1, condition = initial_state(model, config.length, prompt, template)
    x = np.tile(x1, (n, 1))
    N = config.steps
    for k in range(N, 0, -1):
        x = ancestral_step(model, x, k / N, (k - 1) / N, config.guidance, rng, condition)
    if np.any(x == model.mask_id):
        raise RuntimeError("masks remain after the final reverse step")
    return x


def ancestral_sample(model, config: SampleConfig, prompt=None, template=None,
                     rng: np.random.Generator | None = None) -> SampleResult:
    start = time.monotonic()
    x = ancestral_sample_batch(model, config, 1, prompt, template, rng)[0]
    nfe = config.steps * config.guidance.evaluations_per_step
    return SampleResult(x, nfe, time.monotonic() - start)


def greedy_sample(model, config: SampleConfig, prompt=None, template=None) -> SampleResult:
    """Deterministic confidence-ordered unmasking on a uniform time grid.

    Ties: argmax picks the lowest token id; among equally confident masked
    positions the lowest index is unmasked first.  ``trace`` records the
    number of unmasked generated positions after each step.
    """
    start = time.monotonic()
    x, condition = initial_state(model, config.length, prompt, template)
    m = model.mask_id
    generated = np.flatnonzero(x == m)
    Lg = generated.size
    N = config.steps
    trace = []
    for k in range(N, 0, -1):
        # l = floor(Lg * (1 - s)) with s = (k - 1)/N, in exact integer arithmetic.
        target = (Lg * (N - k + 1)) // N
        masked = generated[x[generated] == m]
        if masked.size:
            probs = guided_probs(model, x[None], condition, config.guidance)[0]
            cand = probs[masked]
            tok = np.argmax(cand, axis=1)
            conf = cand[np.arange(masked.size), tok]
            # Already-unmasked positions have confidence 1 and always stay.
            need = max(target - (Lg - masked.size), 0)
            order = np.lexsort((masked, -conf))[:need]
            x[masked[order]] = tok[order]
        trace.append(int(np.count_nonzero(x[generated] != m)))
    nfe = N * config.guidance.evaluations_per_step
    return SampleResult(x, nfe, time.monotonic() - start, trace)


def generate(model, config: SampleConfig, prompt=None, template=None,
             rng: np.random.Generator | None = None) -> SampleResult:
    if config.mode == "greedy":
        return greedy_sample(model, config, prompt, template)
    return ancestral_sample(model, config, prompt, template, rng)


def strip_eos(x, eos_id: int, trailing_only: bool = False) -> np.ndarray:
    """Drop EOS padding; interior EOS tokens too unless ``trailing_only``."""
    x = np.asarray(x, dtype=np.int64)
    if not trailing_only:
        return x[x != eos_id]
    keep = np.flatnonzero(x != eos_id)
    return x[: keep[-1] + 1] if keep.size else x[:0]
