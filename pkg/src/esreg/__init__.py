"""Two-step l1-penalized expected shortfall regression with debiased
inference, refitted cross-validation variance estimation, and a Monte
Carlo harness."""

from .estimators import TwoStepESRegressor
from .exceptions import (
    DataValidationError,
    DegenerateProjectionError,
    DegenerateTailWarning,
    EsregError,
    RankDeficiencyError,
    RcvCardinalityError,
    SolverError,
    VarianceDegenerateError,
)
from .harness import ExperimentConfig, MetricsRow, bootstrap_estimator, oracle_two_step, run_experiment
from .inference import (
    InferenceResult,
    ProjectionFit,
    constrained_es_fit,
    debias,
    fit_projection,
    infer_coefficient,
    score_Sn,
    score_test,
    wald_ci,
)
from .model import (
    Dataset,
    QuantileLevel,
    StandardizationInfo,
    adjusted_response,
    check_loss,
    destandardize_coefs,
    standardize,
)
from .simulate import (
    SimScenario,
    SimTruth,
    gen_design,
    gen_response,
    make_dataset,
    make_truth,
    normal_tail_es,
    normal_tail_quantile,
)
from .solvers import (
    PenaltySpec,
    SolveReport,
    SolverConfig,
    lambda_path_max,
    lasso_ls_fit,
    reference_prox_solve,
    sqr_fit,
)
from .tuning import CvConfig, HbicConfig, LambdaPath, cv_select, fit_lambda_path, hbic_e, hbic_q
from .twostep import (
    TwoStepFit,
    fit_es_stage,
    fit_quantile_stage,
    fit_two_step,
    refit_on_support,
    upper_tail_transform,
)
from .variance import RcvEstimate, naive_variance, rcv_split, rcv_variance

__version__ = "0.1.0"

__all__ = [
    "TwoStepESRegressor",
    "Dataset",
    "QuantileLevel",
    "StandardizationInfo",
    "check_loss",
    "adjusted_response",
    "standardize",
    "destandardize_coefs",
    "PenaltySpec",
    "SolverConfig",
    "SolveReport",
    "lasso_ls_fit",
    "sqr_fit",
    "reference_prox_solve",
    "lambda_path_max",
    "TwoStepFit",
    "fit_quantile_stage",
    "fit_es_stage",
    "fit_two_step",
    "refit_on_support",
    "upper_tail_transform",
    "ProjectionFit",
    "InferenceResult",
    "fit_projection",
    "constrained_es_fit",
    "score_Sn",
    "score_test",
    "debias",
    "wald_ci",
    "infer_coefficient",
    "RcvEstimate",
    "rcv_split",
    "rcv_variance",
    "naive_variance",
    "CvConfig",
    "HbicConfig",
    "LambdaPath",
    "cv_select",
    "fit_lambda_path",
    "hbic_q",
    "hbic_e",
    "SimScenario",
    "SimTruth",
    "normal_tail_quantile",
    "normal_tail_es",
    "make_truth",
    "gen_design",
    "gen_response",
    "make_dataset",
    "ExperimentConfig",
    "MetricsRow",
    "run_experiment",
    "oracle_two_step",
    "bootstrap_estimator",
    "EsregError",
    "DataValidationError",
    "SolverError",
    "RankDeficiencyError",
    "RcvCardinalityError",
    "DegenerateProjectionError",
    "VarianceDegenerateError",
    "DegenerateTailWarning",
]
