"""Data container, CSV ingestion/emission and the bundled synthetic generator."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import derive_rng

NA_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "none", "?"})


class CSVFormatError(ValueError):
    pass


@dataclass
class DataMatrix:
    """A (b, n) float table with an aligned 0/1 observation mask (1 = observed).

    Values under ``mask == 0`` are placeholders; consumers must not read them.
    """

    values: np.ndarray
    mask: np.ndarray
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError(f"values {self.values.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        if not self.columns:
            self.columns = [f"x{j}" for j in range(self.values.shape[1])]
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("one column name per feature is required")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def complete(cls, values, columns=None) -> "DataMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=np.uint8), list(columns or []))

    def rows(self, index) -> "DataMatrix":
        return DataMatrix(self.values[index], self.mask[index], list(self.columns))

    def with_mask(self, mask) -> "DataMatrix":
        return DataMatrix(self.values.copy(), np.asarray(mask, dtype=np.uint8), list(self.columns))

    def masked_values(self) -> np.ndarray:
        """Values with NaN at missing cells."""
        return np.where(self.mask == 1, self.values, np.nan)


def _parse_cell(token: str):
    token = token.strip()
    if token.lower() in NA_TOKENS:
        return None
    return float(token)


def _is_numeric_row(cells: list[str]) -> bool:
    try:
        for c in cells:
            _parse_cell(c)
    except ValueError:
        return False
    return True


def load_csv(path, header: bool | None = None, label_column: str | int | None = None,
             delimiter: str = ",") -> DataMatrix:
    """Read a numeric CSV file into a DataMatrix.

    ``header=None`` auto-detects a header when the first row is not numeric.
    ``label_column`` (name or index) is dropped before returning. NA tokens
    (empty, NA, NaN, ?, ...) become missing cells.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise CSVFormatError(f"{path}: no data rows")
    if header is None:
        header = not _is_numeric_row(rows[0])
    names = [c.strip() for c in rows[0]] if header else [f"x{j}" for j in range(len(rows[0]))]
    body = rows[1:] if header else rows
    width = len(names)

    drop = None
    if label_column is not None:
        if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.lstrip("-").isdigit()
                                             and label_column not in names):
            drop = int(label_column) % width
        elif label_column in names:
            drop = names.index(label_column)
        else:
            raise CSVFormatError(f"{path}: label column {label_column!r} not found in header")

    values = np.zeros((len(body), width))
    mask = np.ones((len(body), width), dtype=np.uint8)
    first_line = 2 if header else 1
    for i, row in enumerate(body):
        if len(row) != width:
            raise CSVFormatError(f"{path}: line {first_line + i} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            if j == drop:
                continue
            try:
                v = _parse_cell(cell)
            except ValueError:
                raise CSVFormatError(
                    f"{path}: non-numeric value {cell!r} at line {first_line + i}, column {j + 1} ({names[j]})"
                ) from None
            if v is None or not math.isfinite(v):
                mask[i, j] = 0
            else:
                values[i, j] = v
    if drop is not None:
        keep = [j for j in range(width) if j != drop]
        values, mask, names = values[:, keep], mask[:, keep], [names[j] for j in keep]
    return DataMatrix(values, mask, names)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(v: float) -> str:
    return repr(float(v))


def matrix_to_csv(values: np.ndarray, columns: list[str] | None = None, mask: np.ndarray | None = None,
                  na_token: str = "NA") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if columns:
        w.writerow(columns)
    for i, row in enumerate(values):
        w.writerow([na_token if mask is not None and not mask[i, j] else format_float(v)
                    for j, v in enumerate(row)])
    return buf.getvalue()


def write_csv(path, data: DataMatrix, with_missing: bool = True) -> None:
    """Write values as CSV; missing cells become ``NA`` when ``with_missing``."""
    atomic_write_text(path, matrix_to_csv(data.values, data.columns, data.mask if with_missing else None))


def write_mask_csv(path, mask: np.ndarray) -> None:
    lines = [",".join(str(int(v)) for v in row) for row in np.asarray(mask)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_mask_csv(path) -> np.ndarray:
    rows = [r for r in csv.reader(open(path, newline="")) if r]
    mask = np.array([[int(c) for c in r] for r in rows], dtype=np.uint8)
    if not np.isin(mask, (0, 1)).all():
        raise CSVFormatError(f"{path}: mask entries must be 0 or 1")
    return mask


def synthetic_dataset(rows: int = 500, features: int = 10, factors: int = 3, noise: float = 0.3,
                      seed: int = 0) -> DataMatrix:
    """Correlated Gaussian table: ``x = z @ A + noise * e`` with ``factors`` latent dimensions.

    Loadings ``A`` are standard normal; per-column offsets and scales are
    drawn so that raw columns are not already standardized.
    """
    rng = derive_rng(seed, "synthetic", rows, features, factors)
    z = rng.standard_normal((rows, factors))
    loadings = rng.standard_normal((factors, features))
    x = z @ loadings + noise * rng.standard_normal((rows, features))
    offset = rng.uniform(-5.0, 5.0, features)
    scale = rng.uniform(0.5, 3.0, features)
    return DataMatrix.complete(x * scale + offset)
