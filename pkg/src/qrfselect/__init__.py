"""Forward variable selection for honest quantile random forests under the
continuous ranked probability score, with backward-permutation (backMSE) and
Gaussian-regression (NGR) baselines and a simulation benchmark."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .data import (
    Dataset,
    ForestParams,
    IndexSet,
    RunConfig,
    complement,
    load_csv,
    write_csv,
)
from .forest import (
    QuantileForest,
    best_split,
    fit,
    oob_predict_quantiles,
    predict_quantiles,
    relabel,
    validate_forest,
    weighted_quantile,
    weights,
)
from .scoring import (
    QuantileGrid,
    StepCDF,
    crps_cdf_form,
    crps_from_quantiles,
    crps_gaussian,
    pinball,
)
from .selection import (
    RiskTable,
    SelectionTrace,
    binomial_critical,
    estimate_risk,
    forward_step,
    select,
    test_statistic,
)
from .baselines import (
    MeanForestParams,
    NgrModel,
    backward_select_mse,
    fit_mean_forest,
    ngr_bic_stepwise,
    ngr_fit,
    permutation_importance,
)
from .simulation import (
    ExperimentSummary,
    SimulationConfig,
    run_experiment,
    sample_block_mvn,
    simulate_model,
)
from .verification import (
    BinnedDiagram,
    pit_histogram,
    quantile_reliability,
    randomized_pit,
    reliability_diagram,
)

__all__ = [
    "BACKEND",
    "__version__",
    "Dataset",
    "IndexSet",
    "ForestParams",
    "RunConfig",
    "complement",
    "load_csv",
    "write_csv",
    "QuantileForest",
    "fit",
    "relabel",
    "best_split",
    "weights",
    "weighted_quantile",
    "predict_quantiles",
    "oob_predict_quantiles",
    "validate_forest",
    "QuantileGrid",
    "StepCDF",
    "pinball",
    "crps_from_quantiles",
    "crps_cdf_form",
    "crps_gaussian",
    "RiskTable",
    "SelectionTrace",
    "estimate_risk",
    "forward_step",
    "test_statistic",
    "binomial_critical",
    "select",
    "MeanForestParams",
    "NgrModel",
    "fit_mean_forest",
    "permutation_importance",
    "backward_select_mse",
    "ngr_fit",
    "ngr_bic_stepwise",
    "SimulationConfig",
    "ExperimentSummary",
    "sample_block_mvn",
    "simulate_model",
    "run_experiment",
    "BinnedDiagram",
    "pit_histogram",
    "reliability_diagram",
    "quantile_reliability",
    "randomized_pit",
]
