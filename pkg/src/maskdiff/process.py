"""Forward absorbing-mask process with the linear schedule ``alpha_t = 1 - t``.

Token ids ``0..K-1`` form the data alphabet; the mask symbol is always ``K``.
Every sampler consumes exactly one uniform variate per position, in index
order, so frozen and unfrozen noising with the same generator state agree on
every eligible position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Vocabulary:
    """Data alphabet ``{0..size-1}`` plus one absorbing mask id."""

    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")

    @property
    def mask_id(self) -> int:
        return self.size

    def check(self, tokens, allow_mask: bool = False) -> np.ndarray:
        """Return ``tokens`` as an int64 array, raising on out-of-alphabet ids."""
        x = np.asarray(tokens, dtype=np.int64)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("a sequence must be a non-empty 1-D array")
        hi = self.size if allow_mask else self.size - 1
        if x.min() < 0 or x.max() > hi:
            raise ValueError(f"token ids must lie in [0, {hi}]")
        return x


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0 or np.isnan(t):
        raise ValueError(f"noise level must lie in [0, 1], got {t}")
    return t


def alpha(t: float) -> float:
    """Survival probability of an unmasked token at noise level ``t``."""
    return 1.0 - _check_t(t)


def masked_positions(xt, mask_id: int) -> np.ndarray:
    """Indices of ``xt`` carrying the mask id."""
    return np.flatnonzero(np.asarray(xt) == mask_id)


def forward_mask(x0, t: float, rng: np.random.Generator, mask_id: int) -> np.ndarray:
    """Mask each position of ``x0`` independently with probability ``t``.

    Args:
        x0: clean sequence of data token ids.
        t: noise level in ``[0, 1]``.
        rng: numpy generator; exactly ``len(x0)`` uniforms are drawn.
        mask_id: id written into masked positions.

    Returns:
        A new array whose entries are either ``x0[i]`` or ``mask_id``.
    """
    t = _check_t(t)
    x0 = np.asarray(x0, dtype=np.int64)
    u = rng.random(x0.shape[-1])
    return np.where(u < t, mask_id, x0)


def forward_mask_frozen(x0, t: float, frozen, rng: np.random.Generator,
                        mask_id: int) -> np.ndarray:
    """Like :func:`forward_mask` but positions in ``frozen`` are copied verbatim.

    The generator is advanced identically to :func:`forward_mask`; frozen
    positions simply discard their draw.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    frozen = np.asarray(sorted(frozen), dtype=np.int64)
    if frozen.size and (frozen.min() < 0 or frozen.max() >= x0.shape[-1]):
        raise ValueError("frozen index out of range")
    xt = forward_mask(x0, t, rng, mask_id)
    xt[frozen] = x0[frozen]
    return xt


def mask_batch(x0: np.ndarray, t, rng: np.random.Generator, mask_id: int,
               frozen=None) -> np.ndarray:
    """Vectorised forward process over a ``(B, L)`` batch with per-row levels ``t``."""
    x0 = np.asarray(x0, dtype=np.int64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x0.shape[:1])
    u = rng.random(x0.shape)
    xt = np.where(u < t[:, None], mask_id, x0)
    if frozen is not None:
        xt[:, frozen] = x0[:, frozen]
    return xt


def mask_random_subset(x0: np.ndarray, counts, rng: np.random.Generator,
                       mask_id: int, eligible=None) -> np.ndarray:
    """Mask a uniformly random subset of ``counts[b]`` eligible positions in each row.

    Draws one uniform key per position (index order) and masks the
    ``counts[b]`` smallest keys among eligible positions.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    B, L = x0.shape
    keys = rng.random((B, L))
    if eligible is not None:
        keep = np.ones(L, dtype=bool)
        keep[eligible] = False
        keys[:, keep] = np.inf
    rank = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    masked = rank < np.asarray(counts)[:, None]
    return np.where(masked, mask_id, x0)
