"""CutMix corruption of a mini-batch: borrow cells from another row of the batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import derive_rng


@dataclass(frozen=True)
class CutMixPlan:
    keep: np.ndarray      # (b, n) 1 = keep own value
    partner: np.ndarray   # (b,) donor row for each row
    p_cutmix: float


def cutmix(batch: np.ndarray, p_cutmix: float, seed=None, rng: np.random.Generator | None = None):
    """Return ``(corrupted, plan)`` with ``corrupted = where(keep, X, X[partner])``.

    Partners are drawn uniformly from the other rows of the batch, so
    ``partner[i] != i`` whenever the batch has more than one row. Either a
    ``seed`` (int or label tuple) or a generator must be supplied.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"cutmix expects a non-empty (b, n) batch, got shape {x.shape}")
    if not 0.0 <= p_cutmix < 1.0:
        raise ValueError(f"p_cutmix must lie in [0, 1), got {p_cutmix}")
    if rng is None:
        if seed is None:
            raise ValueError("cutmix needs a seed or a generator")
        rng = derive_rng(*seed) if isinstance(seed, tuple) else derive_rng(seed, "cutmix")
    b = x.shape[0]
    keep = (rng.random(x.shape) >= p_cutmix).astype(np.uint8)
    if b > 1:
        draw = rng.integers(0, b - 1, size=b)
        partner = draw + (draw >= np.arange(b))
    else:
        partner = np.zeros(1, dtype=np.int64)
    return apply_plan(x, keep, partner), CutMixPlan(keep, partner, p_cutmix)


def apply_plan(x: np.ndarray, keep: np.ndarray, partner: np.ndarray) -> np.ndarray:
    return np.where(keep == 1, x, x[partner])
