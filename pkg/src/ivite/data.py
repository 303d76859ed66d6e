"""Dataset ingestion, validation and stratification by discrete covariate cells.

Observations carry an outcome Y, a binary treatment D, a binary instrument Z
and an optional tuple of discrete covariate labels. Covariate labels are
opaque: no ordering is assumed. Datasets are immutable after construction and
safe to share across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    EmptyArmError,
    EmptyFileError,
    MissingColumnError,
    UnknownCellError,
)

CellKey = tuple

#: Cell key used when no covariates are supplied.
EMPTY_CELL: CellKey = ()


@dataclass(frozen=True)
class Observation:
    """One sampled unit."""

    id: int
    y: float
    d: int
    z: int
    x: CellKey = EMPTY_CELL


@dataclass(frozen=True)
class ColumnSchema:
    """Mapping from CSV column names to model roles."""

    outcome: str = "y"
    treatment: str = "d"
    instrument: str = "z"
    covariates: tuple[str, ...] = ()

    def required_columns(self) -> tuple[str, ...]:
        return (self.outcome, self.treatment, self.instrument) + tuple(self.covariates)


@dataclass(frozen=True)
class Dataset:
    """Validated, cell-indexed observational data.

    Arrays are positionally aligned; ``ids`` preserves the original row order
    of the source (rows dropped during validation leave gaps). ``cell_index``
    maps each covariate cell key to the positional indices of its members, so
    the cells partition ``range(len(y))``.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    ids: np.ndarray
    cells: tuple[CellKey, ...]  # cell key per observation
    cell_index: Mapping[CellKey, np.ndarray] = field(repr=False)
    n_dropped: int = 0

    def __post_init__(self):
        for arr in (self.y, self.d, self.z, self.ids):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def cell_keys(self) -> list[CellKey]:
        return list(self.cell_index.keys())

    def cell_view(self, cell: CellKey) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(y, d, z) arrays restricted to one cell."""
        idx = self._cell_indices(cell)
        return self.y[idx], self.d[idx], self.z[idx]

    def cell_ids(self, cell: CellKey) -> np.ndarray:
        return self.ids[self._cell_indices(cell)]

    def _cell_indices(self, cell: CellKey) -> np.ndarray:
        try:
            return self.cell_index[tuple(cell)]
        except KeyError:
            raise UnknownCellError(f"unknown cell {cell!r}") from None

    def observations(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield Observation(
                id=int(self.ids[i]),
                y=float(self.y[i]),
                d=int(self.d[i]),
                z=int(self.z[i]),
                x=self.cells[i],
            )


@dataclass(frozen=True)
class CellStats:
    """Exact finite-sample frequencies for one cell."""

    cell: CellKey
    n_dz: Mapping[tuple[int, int], int]
    p_hat: Mapping[int, float]  # z -> estimated propensity p(x, z)
    pr_z: Mapping[int, float]  # z -> sample frequency of Z = z in the cell

    @property
    def n(self) -> int:
        return sum(self.n_dz.values())

    @property
    def propensity_gap(self) -> float:
        return self.p_hat[1] - self.p_hat[0]


def from_arrays(
    y: Sequence[float],
    d: Sequence[int],
    z: Sequence[int],
    cells: Sequence[CellKey] | None = None,
    ids: Sequence[int] | None = None,
    n_dropped: int = 0,
) -> Dataset:
    """Build a validated Dataset from aligned columns."""
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d)
    z = np.asarray(z)
    if not (len(y) == len(d) == len(z)):
        raise DataError("y, d, z must have equal length")
    if len(y) == 0:
        raise DataError("empty dataset")
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise DataError(f"non-finite outcome at position {bad}")
    for name, arr in (("treatment", d), ("instrument", z)):
        vals = np.unique(arr)
        if not np.isin(vals, (0, 1)).all():
            raise DataError(f"{name} values must be 0/1, got {vals.tolist()}")
    d = d.astype(np.int8)
    z = z.astype(np.int8)
    if cells is None:
        cells_t = tuple(EMPTY_CELL for _ in range(len(y)))
    else:
        if len(cells) != len(y):
            raise DataError("cells must align with y")
        cells_t = tuple(tuple(c) for c in cells)
    if ids is None:
        ids = np.arange(len(y), dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)

    index: dict[CellKey, list[int]] = {}
    for i, key in enumerate(cells_t):
        index.setdefault(key, []).append(i)
    cell_index = {k: np.asarray(v, dtype=np.int64) for k, v in index.items()}
    for arr in cell_index.values():
        arr.setflags(write=False)
    return Dataset(
        y=y, d=d, z=z, ids=ids, cells=cells_t, cell_index=cell_index, n_dropped=n_dropped
    )


def load_csv(path, schema: ColumnSchema | None = None) -> Dataset:
    """Load and validate a CSV file.

    Rows with a missing value in any used column are dropped and counted in
    ``Dataset.n_dropped``. Row numbers in error messages are 1-based data rows
    (header excluded). Remaining ids preserve the original row order.
    """
    schema = schema or ColumnSchema()
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise EmptyFileError(f"empty file: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if len(frame) == 0:
        raise EmptyFileError(f"no data rows in {path}")
    for col in schema.required_columns():
        if col not in frame.columns:
            raise MissingColumnError(f"missing column {col!r} in {path}")

    used = list(schema.required_columns())
    rows = np.arange(1, len(frame) + 1)
    keep = ~frame[used].isna().any(axis=1).to_numpy()
    n_dropped = int((~keep).sum())
    frame = frame.loc[keep]
    rows = rows[keep]
    if len(frame) == 0:
        raise DataError(f"all rows of {path} have missing values")

    y = pd.to_numeric(frame[schema.outcome], errors="coerce").to_numpy(dtype=np.float64)
    if np.isnan(y).any():
        bad = rows[np.isnan(y)][0]
        raise DataError(f"non-numeric outcome in row {bad}")
    if not np.isfinite(y).all():
        bad = rows[~np.isfinite(y)][0]
        raise DataError(f"non-finite outcome in row {bad}")

    def binary(colname: str, role: str) -> np.ndarray:
        vals = pd.to_numeric(frame[colname], errors="coerce").to_numpy()
        ok = np.isin(vals, (0.0, 1.0))
        if not ok.all():
            bad = rows[~ok][0]
            raise DataError(f"non-binary {role} value in row {bad}")
        return vals.astype(np.int8)

    d = binary(schema.treatment, "treatment")
    z = binary(schema.instrument, "instrument")

    if schema.covariates:
        cov = frame[list(schema.covariates)].astype(str)
        cells = [tuple(row) for row in cov.itertuples(index=False, name=None)]
    else:
        cells = None
    return from_arrays(y, d, z, cells=cells, ids=rows - 1, n_dropped=n_dropped)


def cell_stats(dataset: Dataset, cell: CellKey) -> CellStats:
    """Exact counts, propensity scores and instrument frequencies for a cell."""
    _, d, z = dataset.cell_view(cell)
    n_dz = {
        (dd, zz): int(((d == dd) & (z == zz)).sum()) for dd in (0, 1) for zz in (0, 1)
    }
    p_hat, pr_z = {}, {}
    n = len(d)
    for zz in (0, 1):
        n_z = n_dz[(0, zz)] + n_dz[(1, zz)]
        if n_z == 0:
            raise EmptyArmError(f"cell {cell!r} has no observations with z={zz}")
        p_hat[zz] = n_dz[(1, zz)] / n_z
        pr_z[zz] = n_z / n
    return CellStats(cell=tuple(cell), n_dz=n_dz, p_hat=p_hat, pr_z=pr_z)


def check_cell_size(
    stats: CellStats, min_cell: int = 50, min_arm: int = 5
) -> list[str]:
    """Diagnostics for cells too small to estimate; empty list means OK."""
    problems = []
    if stats.n < min_cell:
        problems.append(f"cell size {stats.n} below minimum {min_cell}")
    for (dd, zz), count in stats.n_dz.items():
        if count < min_arm:
            problems.append(f"(d={dd}, z={zz}) arm has {count} < {min_arm} observations")
    return problems
