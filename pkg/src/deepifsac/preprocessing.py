"""Train-split statistics: standardization and median initialization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEGENERATE_STD = 1e-12


class MissingColumnError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature statistics computed from observed train values.

    ``means``/``stds`` are in raw units; ``medians`` are in standardized units.
    """

    means: np.ndarray
    stds: np.ndarray
    medians: np.ndarray

    def to_standard(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.means) / self.stds

    def to_raw(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.stds + self.means


def observed_medians(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Column medians over observed cells; even counts average the middle pair."""
    mask = np.asarray(mask).astype(bool)
    empty = np.flatnonzero(~mask.any(axis=0))
    if empty.size:
        raise MissingColumnError(f"no observed training values in column(s) {empty.tolist()}")
    return np.array([np.median(values[mask[:, j], j]) for j in range(values.shape[1])])


def fit_standardizer(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Population mean/std of observed cells per column; near-constant columns get std 1."""
    mask = np.asarray(mask).astype(bool)
    values = np.asarray(values, dtype=np.float64)
    counts = mask.sum(axis=0)
    if (counts == 0).any():
        raise MissingColumnError(f"no observed training values in column(s) {np.flatnonzero(counts == 0).tolist()}")
    safe = np.where(mask, values, 0.0)
    means = safe.sum(axis=0) / counts
    centred = np.where(mask, values - means, 0.0)
    stds = np.sqrt((centred * centred).sum(axis=0) / counts)
    degenerate = stds < DEGENERATE_STD
    if degenerate.any():
        warnings.warn(f"near-constant training column(s) {np.flatnonzero(degenerate).tolist()}; std set to 1",
                      RuntimeWarning, stacklevel=2)
        stds = np.where(degenerate, 1.0, stds)
    return means, stds


def fit_stats(values: np.ndarray, mask: np.ndarray) -> FeatureStats:
    means, stds = fit_standardizer(values, mask)
    z = (np.asarray(values, dtype=np.float64) - means) / stds
    return FeatureStats(means, stds, observed_medians(z, mask))


def median_initialize(values: np.ndarray, mask: np.ndarray, medians: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask) == 1, values, medians)
