"""Classifier-free guidance on factorised data-prediction outputs.

Both the standard and the unsupervised variant sharpen the conditional
prediction against a reference prediction::

    p_guided(x) ∝ p_cond(x)**(1 + w) / p_ref(x)**w

In the unsupervised variant the reference is the *same* model evaluated with
the condition tokens replaced by masks, so it needs no paired training data.
The standard variant uses identical inference mechanics; it differs only in
the training recipe (prompt dropout during fine-tuning), which is recorded
in :attr:`GuidanceConfig.recipe`.  Guidance is applied independently at each
masked position and renormalised per position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskdiff.model import PROB_FLOOR, Prediction

MODES = ("none", "standard", "unsupervised")
# Scales searched for generation experiments; a default grid, not a tuner.
DEFAULT_SCALE_GRID = (0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "none"
    scale: float = 0.0
    recipe: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"guidance mode must be one of {MODES}, got {self.mode!r}")
        if not self.scale >= 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale}")

    @property
    def active(self) -> bool:
        return self.mode != "none" and self.scale != 0

    @property
    def evaluations_per_step(self) -> int:
        return 2 if self.active else 1

    def to_dict(self) -> dict:
        return {"mode": self.mode, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict | None) -> "GuidanceConfig":
        if not d:
            return cls()
        unknown = set(d) - {"mode", "scale", "recipe"}
        if unknown:
            raise ValueError(f"unknown guidance fields: {sorted(unknown)}")
        return cls(d.get("mode", "none"), float(d.get("scale", 0.0)), d.get("recipe"))


def combine(p_cond, p_uncond, w: float) -> np.ndarray:
    """Guided categorical(s) along the last axis, computed in log space."""
    lc = np.log(np.maximum(np.asarray(p_cond, dtype=np.float64), PROB_FLOOR))
    lu = np.log(np.maximum(np.asarray(p_uncond, dtype=np.float64), PROB_FLOOR))
    z = (1.0 + w) * lc - w * lu
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _span_indices(condition_span, length: int) -> np.ndarray:
    if isinstance(condition_span, range):
        idx = np.arange(condition_span.start, condition_span.stop, condition_span.step or 1)
    elif isinstance(condition_span, tuple) and len(condition_span) == 2 and all(
            isinstance(v, (int, np.integer)) for v in condition_span):
        idx = np.arange(condition_span[0], condition_span[1])
    else:
        idx = np.asarray(list(condition_span), dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= length):
        raise ValueError(f"condition span {idx.tolist()} out of bounds for length {length}")
    return idx.astype(np.int64)


def masked_condition_input(xt, condition_span, mask_id: int) -> np.ndarray:
    """Copy of ``xt`` with every condition position replaced by ``mask_id``.

    ``condition_span`` may be a ``range``, a half-open ``(start, stop)`` pair or
    an iterable of indices.  Works on a single context or a ``(B, L)`` batch.
    """
    out = np.array(xt, dtype=np.int64, copy=True)
    idx = _span_indices(condition_span, out.shape[-1])
    out[..., idx] = mask_id
    return out


def guided_probs(model, xt, condition_span, cfg: GuidanceConfig, probs_fn=None) -> np.ndarray:
    """Batch version of :func:`guided_predict`: ``(B, l, K)`` for every position."""
    probs_fn = model.probs if probs_fn is None else probs_fn
    xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
    cond = probs_fn(xt)
    if not cfg.active:
        return cond
    idx = _span_indices(condition_span, xt.shape[-1])
    if np.any(xt[:, idx] == model.mask_id):
        raise ValueError("guidance needs the condition positions unmasked")
    uncond = probs_fn(masked_condition_input(xt, idx, model.mask_id))
    return combine(cond, uncond, cfg.scale)


def guided_predict(model, xt, condition_span, cfg: GuidanceConfig) -> Prediction:
    """Guided predictions at the masked positions of one context.

    With ``mode="none"`` or ``scale=0`` this returns the plain model
    prediction unchanged (bit-identical).
    """
    xt = np.asarray(xt, dtype=np.int64)
    probs = guided_probs(model, xt[None], condition_span, cfg)[0]
    pos = np.flatnonzero(xt == model.mask_id)
    return Prediction(pos, probs[pos])
