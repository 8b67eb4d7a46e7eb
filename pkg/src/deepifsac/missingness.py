"""MCAR / MAR / MNAR observation-mask simulation over a complete matrix.

Masks use 1 for observed and 0 for missing. MAR and MNAR use logistic
mechanisms whose per-column intercepts are found by bisection so that the
expected missing fraction hits the requested rate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import derive_rng

KINDS = ("MCAR", "MAR", "MNAR")
BENCHMARK_RATES = (0.1, 0.3, 0.5, 0.7, 0.9)

BISECTION_ITERS = 40
BISECTION_TOL = 1e-4


class InfeasibleRateError(ValueError):
    pass


@dataclass(frozen=True)
class MissingnessSpec:
    kind: str = "MCAR"
    rate: float = 0.3
    seed: int = 0
    driver_fraction: float = 0.1
    direction: str = "high"
    steepness: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        if self.kind not in KINDS:
            raise ValueError(f"unknown missing kind {self.kind!r}; expected one of {KINDS}")
        if self.direction not in ("high", "low", "both"):
            raise ValueError(f"direction must be high, low or both, got {self.direction!r}")


def _check_rate(rate: float) -> None:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"missing rate must lie strictly between 0 and 1, got {rate}")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def calibrate_intercept(scores: np.ndarray, target: float, steepness: float = 1.0) -> float:
    """Intercept ``c`` with ``mean(sigmoid(steepness * scores + c)) ~= target``."""
    span = steepness * float(np.max(np.abs(scores))) if scores.size else 0.0
    lo, hi = -span - 40.0, span + 40.0
    mid = 0.0
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        gap = float(np.mean(_sigmoid(steepness * scores + mid))) - target
        if abs(gap) < BISECTION_TOL:
            break
        if gap > 0:
            hi = mid
        else:
            lo = mid
    return mid


def _restore_rows(observed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    empty = np.flatnonzero(observed.sum(axis=1) == 0)
    if empty.size:
        cols = rng.integers(0, observed.shape[1], size=empty.size)
        observed[empty, cols] = 1
    return observed


def _standardize_columns(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    degenerate = sd < 1e-12
    return (x - mu) / np.where(degenerate, 1.0, sd), degenerate


def generate_mcar(data, spec: MissingnessSpec) -> np.ndarray:
    x = np.asarray(getattr(data, "values", data), dtype=np.float64)
    _check_rate(spec.rate)
    rng = derive_rng(spec.seed, "mask", "MCAR")
    observed = (rng.random(x.shape) >= spec.rate).astype(np.uint8)
    return _restore_rows(observed, rng)


def mar_drivers(n: int, spec: MissingnessSpec) -> np.ndarray:
    n_drivers = max(1, math.ceil(spec.driver_fraction * n))
    rng = derive_rng(spec.seed, "mask", "MAR", "drivers")
    return np.sort(rng.choice(n, size=n_drivers, replace=False))


def generate_mar(data, spec: MissingnessSpec) -> np.ndarray:
    """Driver columns stay observed; other columns go missing via a logistic model of the drivers."""
    x = np.asarray(getattr(data, "values", data), dtype=np.float64)
    _check_rate(spec.rate)
    b, n = x.shape
    if n < 2:
        raise ValueError("MAR simulation needs at least two features")
    drivers = mar_drivers(n, spec)
    targets = np.setdiff1d(np.arange(n), drivers)
    max_rate = targets.size / n
    if spec.rate * n > targets.size:
        raise InfeasibleRateError(
            f"MAR rate {spec.rate} infeasible with {drivers.size} fully observed driver column(s); "
            f"maximum achievable rate is {max_rate:.4f}"
        )
    column_rate = spec.rate * n / targets.size
    z, _ = _standardize_columns(x[:, drivers])
    prob = np.zeros((b, n))
    for j, w in mar_weights(n, spec).items():
        score = z @ w
        c = calibrate_intercept(score, column_rate, spec.steepness)
        prob[:, j] = _sigmoid(spec.steepness * score + c)
    rng = derive_rng(spec.seed, "mask", "MAR", "cells")
    observed = (rng.random((b, n)) >= prob).astype(np.uint8)
    observed[:, drivers] = 1
    return _restore_rows(observed, rng)


def mar_weights(n: int, spec: MissingnessSpec) -> dict[int, np.ndarray]:
    """Unit driver-weight vector for every non-driver column."""
    drivers = mar_drivers(n, spec)
    rng = derive_rng(spec.seed, "mask", "MAR", "weights")
    out = {}
    for j in np.setdiff1d(np.arange(n), drivers):
        w = rng.standard_normal(drivers.size)
        out[int(j)] = w / np.linalg.norm(w)
    return out


def generate_mnar(data, spec: MissingnessSpec) -> np.ndarray:
    """Self-masking: each column's own standardized value drives its missingness."""
    x = np.asarray(getattr(data, "values", data), dtype=np.float64)
    _check_rate(spec.rate)
    b, n = x.shape
    z, degenerate = _standardize_columns(x)
    if spec.direction == "both":
        z = np.abs(z)
    elif spec.direction == "low":
        z = -z
    rng = derive_rng(spec.seed, "mask", "MNAR")
    uniform = rng.random((b, n))
    prob = np.empty((b, n))
    for j in range(n):
        if degenerate[j]:
            warnings.warn(f"MNAR: column {j} is constant; using MCAR for it", RuntimeWarning, stacklevel=2)
            prob[:, j] = spec.rate
            continue
        c = calibrate_intercept(z[:, j], spec.rate, spec.steepness)
        prob[:, j] = _sigmoid(spec.steepness * z[:, j] + c)
    observed = (uniform >= prob).astype(np.uint8)
    return _restore_rows(observed, rng)


_GENERATORS = {"MCAR": generate_mcar, "MAR": generate_mar, "MNAR": generate_mnar}


def generate_mask(data, spec: MissingnessSpec) -> np.ndarray:
    return _GENERATORS[spec.kind](data, spec)
