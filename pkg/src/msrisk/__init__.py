"""Markov-switching mixture models for multi-asset return panels:
EM fitting, analytic predictive tail-risk measures (VaR, ES, and their
multiple-conditioning extensions), and exact Shapley attribution of
systemic risk."""

__version__ = "0.1.0"

from .core import (
    Component,
    ConditioningSpec,
    DegenerateStateError,
    DivergentTailError,
    DofConvention,
    FitFailureError,
    FittedModel,
    InfeasibleSlabError,
    MixtureDistribution,
    ModelFamily,
    MsmParams,
    MsriskError,
    NotPositiveDefiniteError,
    NumericalError,
    PanelError,
    ParamError,
    ReturnPanel,
    RiskMeasure,
    ShapleyReport,
    TailUnderflowError,
    UnsupportedDimensionError,
    model_from_json,
    model_to_json,
    params_from_json,
    params_to_json,
    validate,
)
from .dist import (
    TruncationBox,
    mahalanobis_sq,
    mixture_cdf,
    mixture_logpdf,
    mixture_quantile,
    mvn_cdf,
    mvn_logpdf,
    mvt_cdf,
    mvt_logpdf,
    t_cdf,
    t_quantile,
    tce_gaussian_uni,
    tce_mixture_mv,
    tce_mixture_uni,
    tce_mvn,
    tce_mvt,
    tce_student_uni,
)
from .inference import (
    FitOptions,
    NuUpdate,
    SelectionRow,
    SelectionTable,
    SufficientStats,
    e_step,
    fit,
    forward_loglik,
    m_step,
    n_params_count,
    select,
    update_nu_bisection,
    update_nu_shoham,
    viterbi,
)
from .predictive import (
    PredictiveSpec,
    condition,
    marginalize,
    predictive_mixture,
    predictive_weights,
)
from .risk import (
    RiskPoint,
    delta_mcoes,
    delta_mcovar,
    es_mixture,
    mcoes,
    mcovar,
    risk_path,
    var_mixture,
)
from .shapley import (
    AttributionPath,
    SubsetValueTable,
    attribution_path,
    build_value_table,
    make_report,
    shapley_values,
)
from .sim import SimOutput, simulate, slab_conditional_sample

__all__ = [
    "__version__",
    # core carriers and errors
    "Component",
    "ConditioningSpec",
    "DegenerateStateError",
    "DivergentTailError",
    "DofConvention",
    "FitFailureError",
    "FittedModel",
    "InfeasibleSlabError",
    "MixtureDistribution",
    "ModelFamily",
    "MsmParams",
    "MsriskError",
    "NotPositiveDefiniteError",
    "NumericalError",
    "PanelError",
    "ParamError",
    "ReturnPanel",
    "RiskMeasure",
    "ShapleyReport",
    "TailUnderflowError",
    "UnsupportedDimensionError",
    "model_from_json",
    "model_to_json",
    "params_from_json",
    "params_to_json",
    "validate",
    # distributions
    "TruncationBox",
    "mahalanobis_sq",
    "mixture_cdf",
    "mixture_logpdf",
    "mixture_quantile",
    "mvn_cdf",
    "mvn_logpdf",
    "mvt_cdf",
    "mvt_logpdf",
    "t_cdf",
    "t_quantile",
    "tce_gaussian_uni",
    "tce_mixture_mv",
    "tce_mixture_uni",
    "tce_mvn",
    "tce_mvt",
    "tce_student_uni",
    # inference
    "FitOptions",
    "NuUpdate",
    "SelectionRow",
    "SelectionTable",
    "SufficientStats",
    "e_step",
    "fit",
    "forward_loglik",
    "m_step",
    "n_params_count",
    "select",
    "update_nu_bisection",
    "update_nu_shoham",
    "viterbi",
    # predictive mixtures
    "PredictiveSpec",
    "condition",
    "marginalize",
    "predictive_mixture",
    "predictive_weights",
    # risk measures
    "RiskPoint",
    "delta_mcoes",
    "delta_mcovar",
    "es_mixture",
    "mcoes",
    "mcovar",
    "risk_path",
    "var_mixture",
    # attribution
    "AttributionPath",
    "SubsetValueTable",
    "attribution_path",
    "build_value_table",
    "make_report",
    "shapley_values",
    # simulation
    "SimOutput",
    "simulate",
    "slab_conditional_sample",
]
