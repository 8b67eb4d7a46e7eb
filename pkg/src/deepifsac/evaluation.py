"""Five-fold imputation benchmark: masks, folds, NRMSE scoring and rank tables."""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.stats import rankdata

from .baselines import KnnConfig, impute_knn, impute_median
from .data import DataMatrix, atomic_write_text, format_float
from .missingness import KINDS, MissingnessSpec, generate_mask
from .model import ModelConfig, train
from .preprocessing import FeatureStats, fit_stats, median_initialize
from .rng import derive_rng

N_FOLDS = 5


# ---------------------------------------------------------------- primitives

@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[np.ndarray, ...]
    seed: int

    def train_test(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[k]
        train = np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != k]))
        return train, test


def make_folds(b: int, seed: int, n_folds: int = N_FOLDS) -> FoldSplit:
    """Seeded shuffle, then contiguous near-equal parts (larger parts first)."""
    if b < n_folds:
        raise ValueError(f"need at least {n_folds} rows for {n_folds}-fold splitting, got {b}")
    perm = derive_rng(seed, "folds").permutation(b)
    return FoldSplit(tuple(np.array_split(perm, n_folds)), seed)


def standardize(train: DataMatrix, target: DataMatrix) -> tuple[np.ndarray, np.ndarray, FeatureStats]:
    """Scale both splits with the train split's observed mean and population std."""
    stats = fit_stats(train.values, train.mask)
    return stats.to_standard(train.values), stats.to_standard(target.values), stats


def nrmse(imputed: np.ndarray, truth: np.ndarray, variances: np.ndarray | None = None) -> float:
    """Mean over features of sqrt(mean squared error over all cells / feature variance)."""
    imputed = np.asarray(imputed, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if imputed.shape != truth.shape:
        raise ValueError(f"nrmse: shapes {imputed.shape} and {truth.shape} differ")
    if variances is None:
        variances = truth.var(axis=0)
    variances = np.asarray(variances, dtype=np.float64)
    usable = variances > 1e-12
    if not usable.all():
        warnings.warn(f"nrmse: dropping zero-variance feature(s) {np.flatnonzero(~usable).tolist()}",
                      RuntimeWarning, stacklevel=2)
    if not usable.any():
        return float("nan")
    mse = ((truth - imputed) ** 2).mean(axis=0)
    return float(np.mean(np.sqrt(mse[usable] / variances[usable])))


# ------------------------------------------------------------------- methods

class Method(Protocol):
    name: str

    def fit_impute(self, train: DataMatrix, test: DataMatrix) -> np.ndarray: ...


@dataclass(frozen=True)
class MedianMethod:
    name: str = "median"

    def fit_impute(self, train: DataMatrix, test: DataMatrix) -> np.ndarray:
        return impute_median(train, test)


@dataclass(frozen=True)
class KnnMethod:
    config: KnnConfig = KnnConfig()
    name: str = "knn"

    def fit_impute(self, train: DataMatrix, test: DataMatrix) -> np.ndarray:
        return impute_knn(train, test, self.config)


@dataclass(frozen=True)
class DeepIFSACMethod:
    config: ModelConfig = ModelConfig()
    name: str = "deepifsac"

    def fit_impute(self, train_split: DataMatrix, test: DataMatrix) -> np.ndarray:
        imputer = train(train_split.values, train_split.mask, self.config)
        return imputer.impute(test.values, test.mask)


# ------------------------------------------------------------------- reports

@dataclass
class EvaluationReport:
    dataset: str
    kind: str
    rate: float
    method: str
    fold_nrmse: list[float]
    failures: list[str | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(f is not None for f in self.failures) or not self.fold_nrmse

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for s in self.fold_nrmse if math.isfinite(s)])

    @property
    def mean(self) -> float:
        s = self.scores
        return float(s.mean()) if s.size else float("nan")

    @property
    def std(self) -> float:
        s = self.scores
        return float(s.std()) if s.size else float("nan")

    def summary(self) -> dict:
        return {"dataset": self.dataset, "kind": self.kind, "rate": self.rate, "method": self.method,
                "fold_nrmse": self.fold_nrmse, "mean": self.mean, "std": self.std,
                "failures": self.failures}


@dataclass(frozen=True)
class _FoldJob:
    dataset_id: str
    kind: str
    rate: float
    fold: int
    method_index: int


def _fold_inputs(values, mask, split: FoldSplit, k: int):
    train_idx, test_idx = split.train_test(k)
    stats = fit_stats(values[train_idx], mask[train_idx])
    ztr = median_initialize(stats.to_standard(values[train_idx]), mask[train_idx], stats.medians)
    zte = median_initialize(stats.to_standard(values[test_idx]), mask[test_idx], stats.medians)
    truth = stats.to_standard(values[test_idx])
    return DataMatrix(ztr, mask[train_idx]), DataMatrix(zte, mask[test_idx]), truth


def _score_fold(method, values, mask, split, k):
    train_split, test_split, truth = _fold_inputs(values, mask, split, k)
    started = time.perf_counter()
    try:
        imputed = method.fit_impute(train_split, test_split)
        imputed = np.where(test_split.mask == 1, test_split.values, imputed)
        score, failure = nrmse(imputed, truth), None
        if not math.isfinite(score):
            failure = "non-finite NRMSE"
    except Exception as exc:  # a failing method must not sink the benchmark
        score, failure = float("nan"), f"{type(exc).__name__}: {exc}"
    return score, failure, time.perf_counter() - started


_WORKER_STATE: dict = {}


def _worker_init(values, masks, splits, methods):
    _WORKER_STATE.update(values=values, masks=masks, splits=splits, methods=methods)


def _worker_run(job: _FoldJob):
    st = _WORKER_STATE
    return _score_fold(st["methods"][job.method_index], st["values"], st["masks"][(job.kind, job.rate)],
                       st["splits"], job.fold)


def run_benchmark(dataset: DataMatrix, methods: Sequence[Method], kinds: Sequence[str] = ("MCAR",),
                  rates: Sequence[float] = (0.3,), seed: int = 0, dataset_id: str = "data",
                  mask_options: dict | None = None, workers: int = 1,
                  n_folds: int = N_FOLDS) -> list[EvaluationReport]:
    """Score every method on every (kind, rate) with one mask per cell shared across folds."""
    if (np.asarray(dataset.mask) == 0).any():
        raise ValueError("benchmark datasets must be fully observed (ground truth required)")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError(f"method names must be unique, got {names}")
    values = dataset.values
    options = dict(mask_options or {})
    masks = {(kind.upper(), rate): generate_mask(values, MissingnessSpec(kind, rate, seed, **options))
             for kind in kinds for rate in rates}
    split = make_folds(values.shape[0], seed, n_folds)
    jobs = [_FoldJob(dataset_id, kind, rate, k, mi)
            for (kind, rate) in masks for mi in range(len(methods)) for k in range(n_folds)]

    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init,
                                 initargs=(values, masks, split, list(methods))) as pool:
            results = list(pool.map(_worker_run, jobs))
    else:
        results = [_score_fold(methods[j.method_index], values, masks[(j.kind, j.rate)], split, j.fold)
                   for j in jobs]

    grouped: dict[tuple, EvaluationReport] = {}
    for job, (score, failure, seconds) in zip(jobs, results):
        key = (job.kind, job.rate, job.method_index)
        rep = grouped.setdefault(key, EvaluationReport(dataset_id, job.kind, job.rate, names[job.method_index], []))
        rep.fold_nrmse.append(score)
        rep.failures.append(failure)
        rep.seconds.append(seconds)
    order = sorted(grouped, key=lambda key: (KINDS.index(key[0]), key[1], key[2]))
    return [grouped[key] for key in order]


# ---------------------------------------------------------------- rank table

@dataclass
class RankSummary:
    methods: list[str]
    group_ranks: dict[tuple, dict[str, float]]
    cells: dict[tuple[str, float], dict[str, tuple[float, float]]]
    averages: dict[str, dict[str, tuple[float, float]]]


def rank_table(reports: Sequence[EvaluationReport]) -> RankSummary:
    """Rank methods within each (dataset, kind, rate) group by mean NRMSE.

    Failed or missing entries share the worst rank; ties get average ranks.
    Means and population stds of the ranks are reported per (kind, rate) and
    pooled per kind.
    """
    methods: list[str] = []
    groups: dict[tuple, dict[str, float]] = {}
    for rep in reports:
        if rep.method not in methods:
            methods.append(rep.method)
        score = rep.mean if not rep.failed else math.inf
        groups.setdefault((rep.dataset, rep.kind, rep.rate), {})[rep.method] = score
    group_ranks = {}
    for key in sorted(groups, key=lambda g: (g[0], KINDS.index(g[1]) if g[1] in KINDS else 99, g[2])):
        scores = [groups[key].get(m, math.inf) for m in methods]
        scores = [math.inf if not math.isfinite(s) else s for s in scores]
        group_ranks[key] = dict(zip(methods, rankdata(scores, method="average").tolist()))

    def _agg(keys):
        return {m: (float(np.mean([group_ranks[g][m] for g in keys])),
                    float(np.std([group_ranks[g][m] for g in keys]))) for m in methods}

    kinds = sorted({g[1] for g in group_ranks}, key=lambda k: KINDS.index(k) if k in KINDS else 99)
    cells, averages = {}, {}
    for kind in kinds:
        rates = sorted({g[2] for g in group_ranks if g[1] == kind})
        for rate in rates:
            cells[(kind, rate)] = _agg([g for g in group_ranks if g[1] == kind and g[2] == rate])
        averages[kind] = _agg([g for g in group_ranks if g[1] == kind])
    return RankSummary(methods, group_ranks, cells, averages)


def _pair(mean: float, std: float) -> str:
    return f"{mean:.2f} ({std:.2f})"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    rule = "-" * max(len(line) for line in lines)
    return "\n".join([lines[0], rule, *lines[1:]]) + "\n"


def render_rank_table(summary: RankSummary) -> str:
    """Average-rank table: one block per missing kind, one row per rate plus an Avg. row."""
    rows = [["Type", "%", *summary.methods]]
    for kind, avg in summary.averages.items():
        for (k, rate), cell in summary.cells.items():
            if k == kind:
                rows.append([kind, f"{round(rate * 100):d}", *[_pair(*cell[m]) for m in summary.methods]])
        rows.append([kind, "Avg.", *[_pair(*avg[m]) for m in summary.methods]])
    return _align(rows)


def render_nrmse_table(reports: Sequence[EvaluationReport], kind: str) -> str:
    """Mean (std) NRMSE per dataset and rate for one missing kind."""
    methods: list[str] = []
    cells: dict[tuple, dict[str, str]] = {}
    for rep in reports:
        if rep.kind != kind:
            continue
        if rep.method not in methods:
            methods.append(rep.method)
        text = "failed" if rep.failed else _pair(rep.mean, rep.std)
        cells.setdefault((rep.dataset, rep.rate), {})[rep.method] = text
    rows = [["Data set", "%", *methods]]
    for (ds, rate) in sorted(cells):
        rows.append([ds, f"{round(rate * 100):d}", *[cells[(ds, rate)].get(m, "-") for m in methods]])
    return f"{kind}\n" + _align(rows)


def folds_csv(reports: Sequence[EvaluationReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "kind", "rate", "method", "fold", "nrmse", "status"])
    for rep in reports:
        for k, (score, failure) in enumerate(zip(rep.fold_nrmse, rep.failures)):
            w.writerow([rep.dataset, rep.kind, format_float(rep.rate), rep.method, k,
                        format_float(score), "ok" if failure is None else f"failed: {failure}"])
    return buf.getvalue()


def write_reports(reports: Sequence[EvaluationReport], outdir) -> dict[str, Path]:
    """Write the deterministic report set; wall-clock timings go to a separate ``timings.json``."""
    outdir = Path(outdir)
    summary = rank_table(reports)
    kinds = [k for k in KINDS if any(r.kind == k for r in reports)]
    files = {
        "folds": outdir / "folds.csv",
        "summary": outdir / "summary.json",
        "ranks": outdir / "rank_table.txt",
        "nrmse": outdir / "nrmse_tables.txt",
    }
    atomic_write_text(files["folds"], folds_csv(reports))
    payload = {
        "reports": [r.summary() for r in reports],
        "ranks": {kind: {m: {"mean": v[0], "std": v[1]} for m, v in avg.items()}
                  for kind, avg in summary.averages.items()},
    }
    atomic_write_text(files["summary"], json.dumps(payload, indent=2, sort_keys=True) + "\n")
    atomic_write_text(files["ranks"], render_rank_table(summary))
    atomic_write_text(files["nrmse"], "\n".join(render_nrmse_table(reports, k) for k in kinds))
    timings = [{"dataset": r.dataset, "kind": r.kind, "rate": r.rate, "method": r.method, "seconds": r.seconds}
               for r in reports]
    timing_path = outdir / "timings.json"
    atomic_write_text(timing_path, json.dumps(timings, indent=2) + "\n")
    return {**files, "timings": timing_path}
