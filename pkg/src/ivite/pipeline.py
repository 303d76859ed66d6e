"""Orchestration of the per-cell estimation pipeline.

Builds counterfactual maps for every estimable cell, evaluates them at the
observed outcomes, and collects effects, Wald ratios and warnings. Cells
failing the size or instrument-strength policy are skipped and reported, not
fatal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ite as ite_mod
from .counterfactual import CounterfactualMap, MapInference, estimate_map, map_inference
from .data import CellKey, Dataset, cell_stats, check_cell_size
from .empirical import PROPENSITY_GAP_TOL
from .errors import EstimationError, WeakInstrumentError
from .ite import IteRecord, LateEstimate


@dataclass(frozen=True)
class PipelineConfig:
    propensity_tol: float = PROPENSITY_GAP_TOL
    min_cell: int = 50
    min_arm: int = 5
    monotonize: bool = False
    sign_adjust: bool = True
    with_inference: bool = False
    kde_bandwidth: float | None = None
    # (cell, arm) -> (lower, upper); overrides the sample-range default
    support_overrides: dict = field(default_factory=dict)


@dataclass
class EstimationResult:
    records: list[IteRecord]
    maps: dict[tuple[CellKey, int], CounterfactualMap]
    inference: dict[tuple[CellKey, int], MapInference]
    lates: dict
    skipped_cells: list[tuple[CellKey, str]]
    warnings: list[str]


def build_cell_maps(
    dataset: Dataset, cell: CellKey, config: PipelineConfig
) -> dict[tuple[CellKey, int], CounterfactualMap]:
    """Both counterfactual maps on a cell, queried at the observed outcomes."""
    y, d, _ = dataset.cell_view(cell)
    maps = {}
    for target_arm in (0, 1):
        query_arm = 1 - target_arm
        support = config.support_overrides.get((tuple(cell), target_arm))
        query_support = config.support_overrides.get((tuple(cell), query_arm))
        queries = np.unique(y[d == query_arm])
        if len(queries) == 0:
            raise EstimationError(f"cell {cell!r}: no observations in arm {query_arm}")
        if query_support is not None:
            queries = queries[(queries >= query_support[0]) & (queries <= query_support[1])]
        maps[(tuple(cell), target_arm)] = estimate_map(
            dataset,
            cell,
            target_arm,
            queries,
            support=support,
            query_support=query_support,
            sign_adjust=config.sign_adjust,
            propensity_tol=config.propensity_tol,
            monotonize=config.monotonize,
        )
    return maps


def run_estimation(dataset: Dataset, config: PipelineConfig | None = None) -> EstimationResult:
    """Run the two-step pipeline on every estimable cell of a dataset."""
    config = config or PipelineConfig()
    maps: dict[tuple[CellKey, int], CounterfactualMap] = {}
    inference: dict[tuple[CellKey, int], MapInference] = {}
    skipped: list[tuple[CellKey, str]] = []
    warnings: list[str] = []
    usable_cells = []

    for cell in dataset.cell_keys:
        try:
            stats = cell_stats(dataset, cell)
            problems = check_cell_size(stats, config.min_cell, config.min_arm)
            if problems:
                raise EstimationError("; ".join(problems))
            cell_maps = build_cell_maps(dataset, cell, config)
        except (EstimationError, WeakInstrumentError) as exc:
            skipped.append((tuple(cell), str(exc)))
            warnings.append(f"cell {cell!r} skipped: {exc}")
            continue
        maps.update(cell_maps)
        usable_cells.append(tuple(cell))
        if config.with_inference:
            for (ck, arm), m in cell_maps.items():
                inference[(ck, arm)] = map_inference(
                    dataset,
                    ck,
                    arm,
                    m,
                    kde_bandwidth=config.kde_bandwidth,
                    sign_adjust=config.sign_adjust,
                )

    if not usable_cells:
        raise EstimationError("no estimable cells in the dataset")

    # restrict records to cells with maps; other cells' observations are skipped
    records: list[IteRecord] = []
    for cell in usable_cells:
        idx = dataset.cell_index[cell]
        sub = type(dataset)(
            y=dataset.y[idx],
            d=dataset.d[idx],
            z=dataset.z[idx],
            ids=dataset.ids[idx],
            cells=tuple(dataset.cells[i] for i in idx),
            cell_index={cell: np.arange(len(idx))},
        )
        records.extend(ite_mod.estimate_ite(sub, maps))
    records.sort(key=lambda r: r.id)

    lates: dict = {}
    for cell in usable_cells:
        try:
            lates[cell] = ite_mod.late(dataset, cell, gap_tol=config.propensity_tol)
        except EstimationError as exc:
            warnings.append(f"cell {cell!r} LATE unavailable: {exc}")
    try:
        lates["pooled"] = ite_mod.late(dataset, None, gap_tol=config.propensity_tol)
    except EstimationError as exc:
        warnings.append(f"pooled LATE unavailable: {exc}")

    return EstimationResult(
        records=records,
        maps=maps,
        inference=inference,
        lates=lates,
        skipped_cells=skipped,
        warnings=warnings,
    )
