"""Empirical complier distributions, probability ranks and model diagnostics.

The complier CDF of outcome level y in treatment arm d is the ratio of the
between-instrument-arm difference of joint frequencies Pr(Y <= y; D = d | Z)
to the between-arm difference of Pr(D = d | Z). Raw ratios can leave [0, 1]
and dip in finite samples; a pool-adjacent-violators projection restores a
valid CDF for inversion while the raw values are kept for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from sklearn.isotonic import isotonic_regression

from .data import CellKey, Dataset
from .errors import EmptyArmError, EstimationError, WeakInstrumentError

if TYPE_CHECKING:  # pragma: no cover
    from .counterfactual import CounterfactualMap

#: Default guard for the propensity gap in the Eq-ratio denominator.
PROPENSITY_GAP_TOL = 0.02


@dataclass(frozen=True)
class ComplierCdf:
    """Estimated complier outcome distribution for one (cell, arm).

    ``values`` are the clamped, monotone projection used for inversion;
    ``raw_values`` are the unprojected ratios. ``denom`` is the empirical
    Pr(D=d|Z=0) - Pr(D=d|Z=1) after any internal instrument-label swap, and
    ``swapped`` records whether that swap was applied.
    """

    cell: CellKey
    d: int
    grid: np.ndarray
    values: np.ndarray
    raw_values: np.ndarray
    support: tuple[float, float]
    denom: float
    swapped: bool = False

    def __post_init__(self):
        for arr in (self.grid, self.values, self.raw_values):
            arr.setflags(write=False)

    def cdf(self, y) -> np.ndarray:
        """Right-continuous step evaluation; 0 left of the grid, 1 right of it."""
        y = np.asarray(y, dtype=np.float64)
        idx = np.searchsorted(self.grid, y, side="right")
        padded = np.concatenate(([0.0], self.values))
        out = padded[idx]
        return out if out.ndim else float(out)

    def quantile(self, u) -> np.ndarray:
        """Left-continuous generalized inverse: smallest grid y with C(y) >= u."""
        u = np.asarray(u, dtype=np.float64)
        # small slack absorbs float noise from the isotonic projection
        idx = np.searchsorted(self.values, u - 1e-12, side="left")
        idx = np.minimum(idx, len(self.grid) - 1)
        out = self.grid[idx]
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class RankFunction:
    """Empirical probability rank of outcome levels in one treatment arm.

    Evaluates Pr(Y <= y; D = d | cell) + Pr(Y <= phi(y); D = d' | cell) where
    phi imputes the opposite-arm outcome.
    """

    cell: CellKey
    d: int
    _y_d_sorted: np.ndarray = field(repr=False)
    _y_dp_sorted: np.ndarray = field(repr=False)
    _n: int = 0
    _phi_queries: np.ndarray = field(repr=False, default=None)
    _phi_values: np.ndarray = field(repr=False, default=None)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        own = np.searchsorted(self._y_d_sorted, y, side="right")
        # monotone interpolation of the estimated map; outside the query
        # range the map is extended to -/+ infinity so the rank hits 0 and 1
        phi_y = np.interp(y, self._phi_queries, self._phi_values)
        phi_y = np.where(y < self._phi_queries[0], -np.inf, phi_y)
        phi_y = np.where(y > self._phi_queries[-1], np.inf, phi_y)
        other = np.searchsorted(self._y_dp_sorted, phi_y, side="right")
        out = (own + other) / self._n
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class MonotonicityReport:
    """Departure of raw complier-CDF ratios from a valid CDF."""

    cell: CellKey
    d: int
    max_violation: float
    violating_fraction: float
    n_below_zero: int
    n_above_one: int


@dataclass(frozen=True)
class SupportReport:
    """Gap between the complier support and the conditional outcome support."""

    cell: CellKey
    d: int
    arm_support: tuple[float, float]
    complier_support: tuple[float, float]
    lower_gap: float
    upper_gap: float
    hausdorff_gap: float
    overlay_grid: np.ndarray = field(repr=False, default=None)
    complier_density: np.ndarray = field(repr=False, default=None)
    conditional_density: np.ndarray = field(repr=False, default=None)


def _maybe_swap(z: np.ndarray, d: np.ndarray, sign_adjust: bool) -> tuple[np.ndarray, bool]:
    """Swap instrument labels so that p(x,0) < p(x,1) when requested."""
    for zz in (0, 1):
        if (z == zz).sum() == 0:
            raise EmptyArmError(f"no observations with z={zz}")
    p0 = d[z == 0].mean()
    p1 = d[z == 1].mean()
    if sign_adjust and p0 > p1:
        return 1 - z, True
    return z, False


def complier_cdf(
    dataset: Dataset,
    cell: CellKey,
    d: int,
    sign_adjust: bool = True,
    propensity_tol: float = PROPENSITY_GAP_TOL,
    support: tuple[float, float] | None = None,
) -> ComplierCdf:
    """Estimate the complier outcome CDF for arm ``d`` on one cell.

    The grid holds the observed outcomes of the (cell, d) arm plus the support
    bounds (sample min/max unless overridden).
    """
    y, dd, z = dataset.cell_view(cell)
    z, swapped = _maybe_swap(z, dd, sign_adjust)
    p0 = dd[z == 0].mean()
    p1 = dd[z == 1].mean()
    if abs(p1 - p0) < propensity_tol:
        raise WeakInstrumentError(
            f"cell {cell!r}: propensity gap {p1 - p0:.4f} below tolerance {propensity_tol}"
        )
    arm_y = y[dd == d]
    if len(arm_y) == 0:
        raise EstimationError(f"cell {cell!r}: no observations in arm d={d}")
    if support is None:
        support = (float(arm_y.min()), float(arm_y.max()))
    grid = np.unique(np.concatenate([arm_y, np.asarray(support, dtype=np.float64)]))

    n0 = (z == 0).sum()
    n1 = (z == 1).sum()
    y_d0 = np.sort(y[(dd == d) & (z == 0)])
    y_d1 = np.sort(y[(dd == d) & (z == 1)])
    num = (
        np.searchsorted(y_d0, grid, side="right") / n0
        - np.searchsorted(y_d1, grid, side="right") / n1
    )
    denom = len(y_d0) / n0 - len(y_d1) / n1
    raw = num / denom
    values = isotonic_regression(raw, y_min=0.0, y_max=1.0)
    return ComplierCdf(
        cell=tuple(cell),
        d=d,
        grid=grid,
        values=values,
        raw_values=raw,
        support=support,
        denom=float(denom),
        swapped=swapped,
    )


def rank_function(
    dataset: Dataset, cell: CellKey, d: int, phi: "CounterfactualMap"
) -> RankFunction:
    """Probability rank estimator for arm ``d`` using the opposite-arm map."""
    if tuple(phi.cell) != tuple(cell):
        raise EstimationError(f"map cell {phi.cell!r} does not match {cell!r}")
    if phi.target_arm != 1 - d:
        raise EstimationError(
            f"need a map imputing arm {1 - d}, got target_arm={phi.target_arm}"
        )
    y, dd, _ = dataset.cell_view(cell)
    order = np.argsort(phi.query_points, kind="stable")
    return RankFunction(
        cell=tuple(cell),
        d=d,
        _y_d_sorted=np.sort(y[dd == d]),
        _y_dp_sorted=np.sort(y[dd == 1 - d]),
        _n=len(y),
        _phi_queries=np.asarray(phi.query_points, dtype=np.float64)[order],
        _phi_values=np.asarray(phi.values, dtype=np.float64)[order],
    )


def monotonicity_diagnostic(c: ComplierCdf) -> MonotonicityReport:
    """Quantify how far the raw ratios are from a monotone [0, 1] sequence."""
    raw = c.raw_values
    running_max = np.maximum.accumulate(raw)
    max_violation = float(np.max(running_max - raw, initial=0.0))
    if len(raw) > 1:
        steps = np.diff(raw)
        violating_fraction = float((steps < 0).sum() / len(steps))
    else:
        violating_fraction = 0.0
    return MonotonicityReport(
        cell=c.cell,
        d=c.d,
        max_violation=max_violation,
        violating_fraction=violating_fraction,
        n_below_zero=int((raw < 0).sum()),
        n_above_one=int((raw > 1).sum()),
    )


def silverman_bandwidth(sample: np.ndarray) -> float:
    """Gaussian-kernel rule of thumb 1.06 * sigma * m^(-1/5)."""
    m = len(sample)
    sigma = float(np.std(sample, ddof=1)) if m > 1 else 1.0
    if sigma == 0.0:
        sigma = 1.0
    return 1.06 * sigma * m ** (-0.2)


def _gaussian_kde(sample: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    u = (sample[None, :] - points[:, None]) / h
    k = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    return np.add.reduce(k, axis=1) / (len(sample) * h)


def complier_density_cstar(
    dataset: Dataset,
    cell: CellKey,
    d: int,
    points,
    bandwidth: float | None = None,
    sign_adjust: bool = True,
) -> np.ndarray:
    """Scale-adjusted complier density c_d(y) * [p(x,1) - p(x,0)].

    Obtained by differentiating the complier-CDF ratio: a propensity-weighted
    difference of kernel density estimates of Y within the (d, z) arms, with
    the sign factor (-1)^d. Each arm uses its own Silverman bandwidth unless
    ``bandwidth`` fixes one for both.
    """
    points = np.atleast_1d(np.asarray(points, dtype=np.float64))
    y, dd, z = dataset.cell_view(cell)
    z, _ = _maybe_swap(z, dd, sign_adjust)
    terms = np.zeros(len(points))
    for zz, sgn in ((0, 1.0), (1, -1.0)):
        mask_z = z == zz
        sub = y[mask_z & (dd == d)]
        if len(sub) == 0:
            # one-sided compliance: the (d, z) sub-density is identically zero
            continue
        pr_d = len(sub) / mask_z.sum()
        h = bandwidth if bandwidth is not None else silverman_bandwidth(sub)
        terms += sgn * _gaussian_kde(sub, points, h) * pr_d
    return ((-1.0) ** d) * terms


def support_condition_diagnostic(
    dataset: Dataset,
    cell: CellKey,
    d: int,
    tail: float = 0.01,
    overlay_points: int = 256,
    sign_adjust: bool = True,
    propensity_tol: float = PROPENSITY_GAP_TOL,
) -> SupportReport:
    """Compare the complier support against the support of Y given D = d.

    The complier support is read off the monotonized complier CDF as the range
    where it moves from ``tail`` to ``1 - tail``; the conditional support is
    the arm's sample range. The report carries both endpoint gaps, their
    maximum, and density overlays on a common grid. No pass/fail verdict is
    attached.
    """
    c = complier_cdf(
        dataset, cell, d, sign_adjust=sign_adjust, propensity_tol=propensity_tol
    )
    y, dd, _ = dataset.cell_view(cell)
    arm_y = y[dd == d]
    arm_support = (float(arm_y.min()), float(arm_y.max()))

    above = np.flatnonzero(c.values >= tail)
    below = np.flatnonzero(c.values >= 1.0 - tail)
    lo_c = float(c.grid[above[0]]) if len(above) else arm_support[1]
    hi_c = float(c.grid[below[0]]) if len(below) else arm_support[1]

    grid = np.linspace(arm_support[0], arm_support[1], overlay_points)
    c_hat = complier_density_cstar(dataset, cell, d, grid, sign_adjust=sign_adjust)
    gap = abs(c.denom)
    c_hat = c_hat / gap if gap > 0 else c_hat
    f_hat = _gaussian_kde(arm_y, grid, silverman_bandwidth(arm_y))

    lower_gap = abs(lo_c - arm_support[0])
    upper_gap = abs(arm_support[1] - hi_c)
    return SupportReport(
        cell=tuple(cell),
        d=d,
        arm_support=arm_support,
        complier_support=(lo_c, hi_c),
        lower_gap=lower_gap,
        upper_gap=upper_gap,
        hausdorff_gap=max(lower_gap, upper_gap),
        overlay_grid=grid,
        complier_density=c_hat,
        conditional_density=f_hat,
    )
