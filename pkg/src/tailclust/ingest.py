"""Loading, marginal standardization and extreme-subset selection.

The standardization maps every column to the unit-Pareto scale through its
empirical distribution function, using the strict rank count
``c[i, j] = #{i' : x[i', j] < x[i, j]}`` so that ties share a rank.  The
extreme sub-sample is then the set of rows whose sum-norm radius exceeds a
high threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, EmptyExtremeSet


@dataclass(frozen=True)
class RawDataset:
    """Observed feature matrix with column labels."""

    rows: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if rows.ndim != 2:
            raise DataFormatError(f"expected a 2-d matrix, got shape {rows.shape}")
        n, d = rows.shape
        if n < 2 or d < 1:
            raise DataFormatError(f"need at least 2 rows and 1 column, got {n}x{d}")
        if len(self.feature_names) != d:
            raise DataFormatError(
                f"{len(self.feature_names)} feature names for {d} columns"
            )
        bad = ~np.isfinite(rows)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataFormatError(
                f"non-finite value in row {i}, column {self.feature_names[j]!r}"
            )

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class StandardizedDataset:
    """Unit-Pareto-scale matrix; every entry lies in [1, n]."""

    v: np.ndarray
    source: str = "empirical-ranks"

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def d(self) -> int:
        return self.v.shape[1]

    def radii(self) -> np.ndarray:
        """Sum-norm radius of every row."""
        return self.v.sum(axis=1)


@dataclass(frozen=True)
class ExtremeSubset:
    """Rows whose radius exceeds the threshold ``r0``."""

    indices: np.ndarray
    r0: float
    n0: int = field(init=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "n0", int(idx.size))


def load_csv(path) -> RawDataset:
    """Read a numeric CSV with a header row into a :class:`RawDataset`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        names = tuple(name.strip() for name in header)
        data = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(names):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(names)} cells, "
                    f"got {len(record)}"
                )
            try:
                data.append([float(cell) for cell in record])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not data:
        raise DataFormatError(f"{path}: no data rows")
    return RawDataset(np.array(data, dtype=float), names)


def write_csv(path, rows: np.ndarray, feature_names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(feature_names)
        for row in np.asarray(rows):
            writer.writerow([repr(float(x)) for x in row])


def sign_double(raw: RawDataset) -> RawDataset:
    """Split every feature into positive and negative deviations from its mean.

    Column ``f`` becomes ``f+`` = max(x - mean, 0) and ``f-`` = max(mean - x, 0),
    so unusually large and unusually small values turn into separate
    heavy-tailed directions.
    """
    x = raw.rows
    mean = x.mean(axis=0)
    pos = np.maximum(x - mean, 0.0)
    neg = np.maximum(mean - x, 0.0)
    doubled = np.empty((raw.n, 2 * raw.d))
    doubled[:, 0::2] = pos
    doubled[:, 1::2] = neg
    names = []
    for name in raw.feature_names:
        names.extend([name + "+", name + "-"])
    return RawDataset(doubled, tuple(names))


def _strict_rank_counts(column: np.ndarray) -> np.ndarray:
    """For each entry, the number of entries strictly smaller than it."""
    order = np.sort(column)
    return np.searchsorted(order, column, side="left")


def empirical_pareto_transform(raw: RawDataset) -> StandardizedDataset:
    """Map each column to the unit-Pareto scale via empirical ranks.

    Entry (i, j) becomes ``n / (n - c)`` with ``c`` the strict rank count,
    so the column minimum maps to 1 and the maximum to n.
    """
    x = raw.rows
    n = x.shape[0]
    v = np.empty_like(x)
    for j in range(x.shape[1]):
        c = _strict_rank_counts(x[:, j])
        v[:, j] = n / (n - c)
    return StandardizedDataset(v)


def pareto_transform_new(train: RawDataset, new_rows: np.ndarray) -> np.ndarray:
    """Standardize held-out rows with the ranks learned on ``train``.

    Counts of strictly smaller training values are reused; values above the
    training maximum are capped at rank n - 1 so the output stays in [1, n].
    """
    x = train.rows
    n = x.shape[0]
    new_rows = np.atleast_2d(np.asarray(new_rows, dtype=float))
    if new_rows.shape[1] != train.d:
        raise DataFormatError(
            f"held-out rows have {new_rows.shape[1]} columns, expected {train.d}"
        )
    v = np.empty_like(new_rows)
    for j in range(train.d):
        order = np.sort(x[:, j])
        c = np.searchsorted(order, new_rows[:, j], side="left")
        c = np.minimum(c, n - 1)
        v[:, j] = n / (n - c)
    return v


def select_extremes(
    std: StandardizedDataset,
    quantile: float | None = None,
    r0: float | None = None,
    n_extremes: int | None = None,
) -> ExtremeSubset:
    """Pick the rows whose sum-norm radius exceeds a high threshold.

    Exactly one of ``quantile`` (radius quantile in (0, 1)), ``r0`` (absolute
    threshold) or ``n_extremes`` (keep the top-n rows by radius) may be given;
    with none, the quantile defaults to 1 - ceil(sqrt(n))/n.
    """
    given = sum(arg is not None for arg in (quantile, r0, n_extremes))
    if given > 1:
        raise ValueError("pass at most one of quantile, r0, n_extremes")
    radii = std.radii()
    n = radii.size

    if n_extremes is not None:
        if not 1 <= n_extremes <= n:
            raise ValueError(f"n_extremes must be in [1, {n}], got {n_extremes}")
        order = np.argsort(-radii, kind="stable")
        chosen = order[:n_extremes]
        r0 = float(np.nextafter(radii[chosen].min(), -np.inf))
        return ExtremeSubset(np.sort(chosen), r0)

    if r0 is None:
        if quantile is None:
            k = math.ceil(math.sqrt(n))
            quantile = 1.0 - k / n
        if not 0.0 < quantile < 1.0:
            raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
        r0 = float(np.quantile(radii, quantile))

    indices = np.nonzero(radii > r0)[0]
    if indices.size == 0:
        raise EmptyExtremeSet(f"no row has radius above r0={r0}")
    return ExtremeSubset(indices, float(r0))
