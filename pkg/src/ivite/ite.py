"""Per-observation treatment effect construction and summaries.

Each observation's counterfactual outcome is the estimated map of the
opposite arm evaluated at its observed outcome; the effect estimate is the
signed difference (observed minus counterfactual for treated units, the
reverse for untreated ones). A Wald-ratio LATE and a sign classification
report summarize the pseudo sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .counterfactual import CounterfactualMap
from .data import CellKey, Dataset
from .errors import EstimationError, WeakInstrumentError


@dataclass(frozen=True)
class IteRecord:
    id: int
    cell: CellKey
    d: int
    y_observed: float
    y_counterfactual: float  # NaN when out of support
    delta_hat: float  # NaN when out of support
    out_of_support: bool = False


@dataclass(frozen=True)
class LateEstimate:
    value: float
    cell: CellKey | None = None  # None means pooled


def estimate_ite(
    dataset: Dataset, maps: Mapping[tuple[CellKey, int], CounterfactualMap]
) -> list[IteRecord]:
    """One record per observation, ordered by observation id.

    ``maps`` is keyed by (cell, target_arm); the map imputing arm 1-d must
    contain each in-support observation's outcome among its exact query
    points. Observations outside the map's query support are flagged and get
    NaN estimates.
    """
    records = []
    for i in np.argsort(dataset.ids, kind="stable"):
        cell = dataset.cells[i]
        d = int(dataset.d[i])
        y = float(dataset.y[i])
        key = (cell, 1 - d)
        if key not in maps:
            raise EstimationError(f"no counterfactual map for cell {cell!r}, arm {1 - d}")
        cf_map = maps[key]
        lo, hi = cf_map.query_support
        if y < lo or y > hi:
            records.append(
                IteRecord(
                    id=int(dataset.ids[i]),
                    cell=cell,
                    d=d,
                    y_observed=y,
                    y_counterfactual=float("nan"),
                    delta_hat=float("nan"),
                    out_of_support=True,
                )
            )
            continue
        y_cf = cf_map.value_at(y)
        delta = (y - y_cf) if d == 1 else (y_cf - y)
        records.append(
            IteRecord(
                id=int(dataset.ids[i]),
                cell=cell,
                d=d,
                y_observed=y,
                y_counterfactual=y_cf,
                delta_hat=delta,
            )
        )
    return records


def deltas_from_records(records: Sequence[IteRecord]) -> np.ndarray:
    """Effect estimates of in-support records, for density estimation."""
    return np.asarray([r.delta_hat for r in records if not r.out_of_support])


def late(
    dataset: Dataset, cell: CellKey | None = None, gap_tol: float = 0.02
) -> LateEstimate:
    """Wald ratio of instrument-arm mean differences, pooled or per cell."""
    if cell is None:
        y, d, z = dataset.y, dataset.d, dataset.z
    else:
        y, d, z = dataset.cell_view(cell)
    for zz in (0, 1):
        if (z == zz).sum() == 0:
            raise EstimationError(f"no observations with z={zz}")
    gap = d[z == 1].mean() - d[z == 0].mean()
    if abs(gap) < gap_tol:
        raise WeakInstrumentError(
            f"treatment uptake gap {gap:.4f} below tolerance {gap_tol}"
        )
    value = (y[z == 1].mean() - y[z == 0].mean()) / gap
    return LateEstimate(value=float(value), cell=tuple(cell) if cell is not None else None)


def sign_classification(
    records: Sequence[IteRecord], dataset: Dataset | None = None
) -> dict:
    """Counts, shares and means of effect signs, overall and per (z, d) stratum.

    The per-stratum breakdown (instrument arm by participation, the
    eligibility-tree view when the instrument encodes eligibility) requires
    the dataset to recover each record's instrument value.
    """
    valid = [r for r in records if not r.out_of_support]
    deltas = np.asarray([r.delta_hat for r in valid])

    def summarize(values: np.ndarray) -> dict:
        n = len(values)
        pos = int((values > 0).sum())
        neg = int((values < 0).sum())
        return {
            "n": n,
            "n_positive": pos,
            "n_negative": neg,
            "n_zero": n - pos - neg,
            "share_negative": (neg / n) if n else 0.0,
            "mean_delta": float(values.mean()) if n else float("nan"),
        }

    report = summarize(deltas)
    report["n_out_of_support"] = len(records) - len(valid)
    if dataset is not None:
        z_by_id = {int(i): int(zz) for i, zz in zip(dataset.ids, dataset.z)}
        strata = {}
        for zz in (0, 1):
            for dd in (0, 1):
                sub = np.asarray(
                    [r.delta_hat for r in valid if z_by_id[r.id] == zz and r.d == dd]
                )
                strata[f"z={zz},d={dd}"] = summarize(sub)
        report["strata"] = strata
    return report
