"""Heterogeneous individual treatment effects with a binary instrument.

Estimates, for each observation, the outcome it would realize under the
opposite treatment status by exact minimization of a piecewise-linear
quantile-matching objective within discrete covariate cells, then the
individual effect, its density, asymptotic standard errors, and a seedable
Monte Carlo harness for the estimator's finite-sample performance.
"""

from .counterfactual import (
    CounterfactualMap,
    MapInference,
    empirical_objective,
    estimate_map,
    map_inference,
    plugin_map_oracle,
    pointwise_se,
)
from .data import (
    CellStats,
    ColumnSchema,
    Dataset,
    Observation,
    cell_stats,
    from_arrays,
    load_csv,
)
from .density import DensityBand, DensityEstimate, bandwidth, bootstrap_band, kde
from .empirical import (
    ComplierCdf,
    RankFunction,
    complier_cdf,
    monotonicity_diagnostic,
    rank_function,
    support_condition_diagnostic,
)
from .errors import (
    DataError,
    EstimationError,
    IviteError,
    WeakInstrumentError,
)
from .ite import IteRecord, LateEstimate, estimate_ite, late, sign_classification
from .pipeline import PipelineConfig, run_estimation
from .simulate import (
    RmseReport,
    SimConfig,
    draw_sample,
    table1_harness,
    truth_oracle,
)

__version__ = "0.1.0"
