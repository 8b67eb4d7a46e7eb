"""Median and KNN reference imputers.

Both take a train split and a target split as DataMatrix objects and return
the target's values with missing cells filled; observed cells are returned
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataMatrix
from .preprocessing import observed_medians


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    chunk_rows: int = 256

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")


def impute_median(train: DataMatrix, target: DataMatrix) -> np.ndarray:
    medians = observed_medians(train.values, train.mask)
    return np.where(target.mask == 1, target.values, medians)


def overlap_distances(target_values, target_mask, train_values, train_mask) -> np.ndarray:
    """sqrt(sum of squared differences over mutually observed features / overlap count).

    Pairs without any mutually observed feature get ``inf``.
    """
    tm = target_mask.astype(bool)[:, None, :]
    rm = train_mask.astype(bool)[None, :, :]
    both = tm & rm
    diff = np.where(both, target_values[:, None, :] - train_values[None, :, :], 0.0)
    sq = (diff * diff).sum(axis=-1)
    overlap = both.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(sq / overlap)
    dist[overlap == 0] = np.inf
    return dist


def impute_knn(train: DataMatrix, target: DataMatrix, config: KnnConfig = KnnConfig()) -> np.ndarray:
    """Mean of the j-values of the k nearest train rows that observe feature j.

    Distance ties go to the lower train-row index; when no train row with
    finite distance observes j, the train median of j is used.
    """
    n_train = train.values.shape[0]
    if config.k > n_train:
        raise ValueError(f"k={config.k} exceeds the {n_train} training rows")
    if train.values.shape[1] != target.values.shape[1]:
        raise ValueError("train and target must have the same features")
    medians = observed_medians(train.values, train.mask)
    train_obs = train.mask.astype(bool)
    out = np.where(target.mask == 1, target.values, 0.0)
    for start in range(0, target.values.shape[0], config.chunk_rows):
        stop = min(start + config.chunk_rows, target.values.shape[0])
        dist = overlap_distances(target.values[start:stop], target.mask[start:stop], train.values, train.mask)
        for local, i in enumerate(range(start, stop)):
            missing = np.flatnonzero(target.mask[i] == 0)
            if missing.size == 0:
                continue
            order = np.argsort(dist[local], kind="stable")
            order = order[np.isfinite(dist[local, order])]
            for j in missing:
                donors = order[train_obs[order, j]][: config.k]
                out[i, j] = train.values[donors, j].sum() / donors.size if donors.size else medians[j]
    return out
