"""Counterfactual mapping estimation and pointwise inference.

The map sending an outcome in one treatment arm to the outcome the same unit
would realize in the other arm is estimated, per query point, as the exact
minimizer of a piecewise-linear empirical objective built from check-function
style sums. Because the kinks sit only at observed outcomes of the target
arm, minimizing over those outcomes plus the support bounds is exact and no
grid-resolution error is incurred.

Orientation: with the convention p(x,0) < p(x,1), the convex objective for
target arm d' is (-1)^d' [rho(.; z=0) - rho(.; z=1)]. When the propensity
ranking is unknown the objective is multiplied by the sign of the estimated
gap, which restores convexity without affecting the minimizer's location.

A quantile-inversion plug-in composing the two complier CDFs provides an
independent check of the minimizer, and pointwise standard errors follow the
asymptotic variance driven by the probability rank and the scale-adjusted
complier density.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CellKey, Dataset
from .empirical import (
    PROPENSITY_GAP_TOL,
    ComplierCdf,
    complier_density_cstar,
    rank_function,
)
from .errors import EmptyArmError, EstimationError, WeakInstrumentError

#: Relative floor on the scale-adjusted complier density below which the
#: standard error is reported as unavailable rather than fabricated.
C_STAR_FLOOR_REL = 1e-6

_QUERY_CHUNK = 512

#: Relative tolerance for recognizing ties in the piecewise-linear objective.
#: Mathematically flat segments evaluate with ~1e-16 float noise while genuine
#: slope steps are orders of magnitude larger, so candidates within this
#: relative distance of the row minimum are treated as exact ties.
_TIE_TOL_REL = 1e-11


@dataclass(frozen=True)
class CounterfactualMap:
    """Estimated counterfactual mapping into ``target_arm`` on one cell.

    ``query_points`` live in the opposite arm's support; ``values`` are the
    imputed outcomes, each drawn from ``candidates`` (observed target-arm
    outcomes plus the support bounds). ``flat_widths`` give the spread of the
    exact minimizer set per query; positive widths signal locally weak
    identification.
    """

    cell: CellKey
    target_arm: int
    query_points: np.ndarray
    values: np.ndarray
    support: tuple[float, float]
    query_support: tuple[float, float]
    candidates: np.ndarray = field(repr=False)
    flat_widths: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for arr in (self.query_points, self.values, self.candidates):
            np.asarray(arr).setflags(write=False)

    def value_at(self, y: float) -> float:
        """Value at an exact query point (no interpolation)."""
        hits = np.flatnonzero(self.query_points == y)
        if len(hits) == 0:
            raise KeyError(f"{y!r} is not a query point of this map")
        return float(self.values[hits[0]])

    def grid_step_at(self, value: float) -> float:
        """Local spacing of the candidate grid around a returned value."""
        cands = self.candidates
        idx = np.clip(np.searchsorted(cands, value), 1, len(cands) - 1)
        lo = cands[idx - 1]
        hi = cands[min(idx + 1, len(cands) - 1)]
        return float(max(value - lo, hi - value, hi - lo) or np.inf)


@dataclass(frozen=True)
class MapInference:
    """Pointwise asymptotic inference for an estimated map."""

    cell: CellKey
    target_arm: int
    query_points: np.ndarray
    phi: np.ndarray
    se: np.ndarray
    r_hat: np.ndarray
    c_star: np.ndarray
    pr_z0: float
    pr_z1: float
    se_unavailable: np.ndarray  # True where |c*| fell below the floor


class _Objective:
    """Shared machinery for the piecewise-linear empirical objective.

    For target arm d' at fixed query y_d, the objective as a function of the
    candidate c decomposes into orient * (F(c) - g(y_d) * c) where F collects
    the absolute-deviation sums over the target arm and g the sign sums over
    the query arm, each as between-instrument-arm differences.
    """

    def __init__(
        self,
        dataset: Dataset,
        cell: CellKey,
        target_arm: int,
        sign_adjust: bool = True,
        propensity_tol: float = PROPENSITY_GAP_TOL,
    ):
        y, d, z = dataset.cell_view(cell)
        self.cell = tuple(cell)
        self.target_arm = target_arm
        query_arm = 1 - target_arm
        self.n_z = {zz: int((z == zz).sum()) for zz in (0, 1)}
        for zz, n in self.n_z.items():
            if n == 0:
                raise EmptyArmError(f"cell {cell!r} has no observations with z={zz}")
        p = {zz: float(d[z == zz].mean()) for zz in (0, 1)}
        gap = p[1] - p[0]
        if abs(gap) < propensity_tol:
            raise WeakInstrumentError(
                f"cell {cell!r}: propensity gap {gap:.4f} below tolerance {propensity_tol}"
            )
        sign = np.sign(gap) if sign_adjust else 1.0
        self.orient = ((-1.0) ** target_arm) * sign
        self.y_target = {zz: np.sort(y[(d == target_arm) & (z == zz)]) for zz in (0, 1)}
        self.y_query = {zz: np.sort(y[(d == query_arm) & (z == zz)]) for zz in (0, 1)}
        self.target_sample = np.sort(y[d == target_arm])
        self.query_sample = np.sort(y[d == query_arm])

    def abs_profile(self, cands: np.ndarray) -> np.ndarray:
        """F(c): between-arm difference of mean absolute deviations."""
        out = np.zeros(len(cands))
        for zz, sgn in ((0, 1.0), (1, -1.0)):
            dev = np.abs(cands[:, None] - self.y_target[zz][None, :])
            out += sgn * np.add.reduce(dev, axis=1) / self.n_z[zz]
        return out

    def sign_coeff(self, queries: np.ndarray) -> np.ndarray:
        """g(y_d): between-arm difference of mean sign(Y - y_d) in the query arm."""
        out = np.zeros(len(queries))
        for zz, sgn in ((0, 1.0), (1, -1.0)):
            arm = self.y_query[zz]
            # sign(u) = 2*1(u > 0) - 1, so sign(0) counts as -1
            n_le = np.searchsorted(arm, queries, side="right")
            out += sgn * (len(arm) - 2 * n_le) / self.n_z[zz]
        return out

    def profile(self, y_d: float, cands: np.ndarray) -> np.ndarray:
        g = self.sign_coeff(np.asarray([y_d], dtype=np.float64))[0]
        return self.orient * (self.abs_profile(cands) - g * cands)


def empirical_objective(
    dataset: Dataset,
    cell: CellKey,
    target_arm: int,
    y_d: float,
    y_target,
    sign_adjust: bool = True,
    propensity_tol: float = PROPENSITY_GAP_TOL,
):
    """Evaluate the empirical objective for target arm at (y_d, y_target).

    ``y_target`` may be a scalar or an array of candidate values; the result
    matches the internal evaluation used by :func:`estimate_map` exactly.
    """
    obj = _Objective(dataset, cell, target_arm, sign_adjust, propensity_tol)
    cands = np.atleast_1d(np.asarray(y_target, dtype=np.float64))
    out = obj.profile(float(y_d), cands)
    return out if np.ndim(y_target) else float(out[0])


def _candidates(obj: _Objective, support: tuple[float, float]) -> np.ndarray:
    lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise EstimationError(f"degenerate support [{lo}, {hi}]")
    sample = obj.target_sample
    inside = sample[(sample >= lo) & (sample <= hi)]
    cands = np.unique(np.concatenate([inside, [lo, hi]]))
    return cands


def estimate_map(
    dataset: Dataset,
    cell: CellKey,
    target_arm: int,
    query_points,
    support: tuple[float, float] | None = None,
    query_support: tuple[float, float] | None = None,
    sign_adjust: bool = True,
    propensity_tol: float = PROPENSITY_GAP_TOL,
    monotonize: bool = False,
) -> CounterfactualMap:
    """Exact arg-min estimation of the counterfactual map at each query point.

    ``support`` bounds the target arm (default: its sample range) and defines
    the candidate set; ``query_support`` bounds the admissible queries. Ties
    resolve to the smallest candidate and the width of the tied set is kept
    per query. With ``monotonize`` the per-point minimizers are replaced by
    their monotone rearrangement.
    """
    obj = _Objective(dataset, cell, target_arm, sign_adjust, propensity_tol)
    if support is None:
        if len(obj.target_sample) == 0:
            raise EstimationError(f"cell {cell!r}: empty target arm {target_arm}")
        support = (float(obj.target_sample[0]), float(obj.target_sample[-1]))
    if query_support is None:
        if len(obj.query_sample) == 0:
            raise EstimationError(f"cell {cell!r}: empty query arm {1 - target_arm}")
        query_support = (float(obj.query_sample[0]), float(obj.query_sample[-1]))

    queries = np.asarray(query_points, dtype=np.float64)
    if queries.ndim != 1:
        raise EstimationError("query_points must be one-dimensional")
    out_of_support = (queries < query_support[0]) | (queries > query_support[1])
    if out_of_support.any():
        bad = float(queries[out_of_support][0])
        raise EstimationError(
            f"query {bad!r} outside the query-arm support {query_support}"
        )

    cands = _candidates(obj, support)
    if len(cands) == 0:
        raise EstimationError(f"cell {cell!r}: empty candidate set")
    F = obj.abs_profile(cands)
    G = obj.sign_coeff(queries)

    values = np.empty(len(queries))
    flat = np.empty(len(queries))
    for i in range(0, len(queries), _QUERY_CHUNK):
        g = G[i : i + _QUERY_CHUNK]
        vals = obj.orient * (F[None, :] - g[:, None] * cands[None, :])
        tol = _TIE_TOL_REL * np.maximum(1.0, np.abs(vals).max(axis=1, keepdims=True))
        tied = vals <= vals.min(axis=1, keepdims=True) + tol
        best = np.argmax(tied, axis=1)  # first tied index = smallest candidate
        values[i : i + _QUERY_CHUNK] = cands[best]
        tied_hi = len(cands) - 1 - np.argmax(tied[:, ::-1], axis=1)
        flat[i : i + _QUERY_CHUNK] = cands[tied_hi] - cands[best]

    if monotonize:
        order = np.argsort(queries, kind="stable")
        values[order] = np.sort(values)

    return CounterfactualMap(
        cell=tuple(cell),
        target_arm=target_arm,
        query_points=queries,
        values=values,
        support=(float(support[0]), float(support[1])),
        query_support=(float(query_support[0]), float(query_support[1])),
        candidates=cands,
        flat_widths=flat,
    )


def plugin_map_oracle(
    c_query: ComplierCdf, c_target: ComplierCdf, query_points
) -> CounterfactualMap:
    """Quantile-inversion plug-in: target quantile of the query arm's CDF level.

    Serves as an independent oracle for :func:`estimate_map`; both CDFs must
    be monotonized estimates on the same cell for opposite arms.
    """
    if tuple(c_query.cell) != tuple(c_target.cell):
        raise EstimationError("complier CDFs come from different cells")
    if c_query.d == c_target.d:
        raise EstimationError("complier CDFs must cover opposite treatment arms")
    queries = np.asarray(query_points, dtype=np.float64)
    u = np.atleast_1d(c_query.cdf(queries))
    values = np.atleast_1d(c_target.quantile(u))
    return CounterfactualMap(
        cell=tuple(c_query.cell),
        target_arm=c_target.d,
        query_points=queries,
        values=values,
        support=c_target.support,
        query_support=c_query.support,
        candidates=c_target.grid,
        flat_widths=np.zeros(len(queries)),
    )


def pointwise_se(n: int, r_hat, c_star, pr_z0: float, pr_z1: float):
    """Asymptotic standard error from its ingredients.

    se = [sqrt(n) |c_star|]^{-1} * sqrt(r (1 - r) / (pr_z0 * pr_z1)); exactly
    zero where the variance factor r (1 - r) vanishes.
    """
    r_hat = np.asarray(r_hat, dtype=np.float64)
    c_star = np.asarray(c_star, dtype=np.float64)
    var_factor = np.clip(r_hat * (1.0 - r_hat), 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(var_factor / (pr_z0 * pr_z1)) / (np.sqrt(n) * np.abs(c_star))
    se = np.where(var_factor == 0.0, 0.0, se)
    return se if se.ndim else float(se)


def map_inference(
    dataset: Dataset,
    cell: CellKey,
    target_arm: int,
    cf_map: CounterfactualMap,
    kde_bandwidth: float | None = None,
    sign_adjust: bool = True,
) -> MapInference:
    """Pointwise standard errors for an estimated counterfactual map.

    se(y) = [sqrt(n) |c*(phi(y))|]^{-1} sqrt(R(y)(1 - R(y)) / (pr0 * pr1))
    with R the query arm's probability rank and c* the scale-adjusted
    complier density of the target arm. Where |c*| falls below a floor of
    ``C_STAR_FLOOR_REL`` times the cell's outcome range, the standard error
    is flagged unavailable (NaN) instead of being extrapolated.
    """
    if tuple(cf_map.cell) != tuple(cell) or cf_map.target_arm != target_arm:
        raise EstimationError("map does not match the requested cell/arm")
    y, _, z = dataset.cell_view(cell)
    n = len(y)
    pr1 = float(z.mean())
    pr0 = 1.0 - pr1
    d_query = 1 - target_arm

    rank = rank_function(dataset, cell, d_query, cf_map)
    r_hat = np.atleast_1d(rank(cf_map.query_points))
    c_star = complier_density_cstar(
        dataset,
        cell,
        target_arm,
        cf_map.values,
        bandwidth=kde_bandwidth,
        sign_adjust=sign_adjust,
    )
    scale = float(y.max() - y.min()) or 1.0
    floor = C_STAR_FLOOR_REL * scale
    unavailable = np.abs(c_star) < floor

    var_factor = np.clip(r_hat * (1.0 - r_hat), 0.0, None)
    se = np.atleast_1d(pointwise_se(n, r_hat, c_star, pr0, pr1))
    se = np.where(unavailable & (var_factor > 0.0), np.nan, se)

    return MapInference(
        cell=tuple(cell),
        target_arm=target_arm,
        query_points=cf_map.query_points,
        phi=cf_map.values,
        se=se,
        r_hat=r_hat,
        c_star=c_star,
        pr_z0=pr0,
        pr_z1=pr1,
        se_unavailable=unavailable,
    )


def covariance_kernel(
    r_y: float, r_yprime: float, r_min: float, pr_z0: float, pr_z1: float
) -> float:
    """Asymptotic covariance kernel value from rank levels at two queries.

    Exposed as a formula evaluation only; uniform bands are not constructed.
    """
    return (r_min - r_y * r_yprime) / (pr_z0 * pr_z1)


def mass_point_diagnostic(cf_map: CounterfactualMap, slope_tol: float = 0.05):
    """Longest run of near-unit slope in the map, as a share of its domain.

    A counterfactual map with slope one over an interval produces a mass
    point in the treatment-effect distribution; this emits the run length
    without a formal test.
    """
    q = cf_map.query_points
    order = np.argsort(q, kind="stable")
    q = q[order]
    v = cf_map.values[order]
    dq = np.diff(q)
    ok = dq > 0
    slopes = np.full(len(dq), np.nan)
    slopes[ok] = np.diff(v)[ok] / dq[ok]
    near_one = np.abs(slopes - 1.0) <= slope_tol

    best = 0.0
    run = 0.0
    for width, hit in zip(dq, near_one):
        run = run + width if hit else 0.0
        best = max(best, run)
    span = float(q[-1] - q[0]) if len(q) > 1 else 0.0
    return {
        "max_unit_slope_run": float(best),
        "domain_span": span,
        "run_share": float(best / span) if span > 0 else 0.0,
    }
