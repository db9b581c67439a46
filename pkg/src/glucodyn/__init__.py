"""Distributional analytics for continuous glucose monitoring time series.

The pipeline turns raw CGM records into classic variability metrics and
distributional representations (quantile profiles and kernel density
estimates of glucose level, speed, and acceleration), and fits penalized
scalar-on-distribution additive regression models to predict clinical
outcomes, including a five-model comparison of increasing complexity.
"""

__version__ = "0.1.0"

from .cgm import (
    CalibrationLog,
    GlucoseSeries,
    SubjectRecord,
    ValidationReport,
    parse_calibration_csv,
    parse_cgm_csv,
    parse_subject_csv,
    validate_series,
    write_cgm_csv,
    write_subject_csv,
)
from .distributions import (
    DensityEstimate,
    Ecdf,
    MultivariateDensityGrid,
    QuantileProfile,
    build_channels,
    ecdf,
    kde_multivariate,
    kde_univariate,
    quantile_profile,
)
from .errors import GlucodynError
from .metrics import MetricPanel, auc, conga, mage, metric_panel, modd, tar
from .pipeline import Cohort, SmoothingOptions, build_cohort
from .regression import (
    DistRegressionModel,
    ModelSpec,
    build_design,
    fit,
    ladder_spec,
    penalty_matrix,
    predict,
    run_model_ladder,
)
from .simulate import CohortScenario, OutcomeLink, generate_cohort, load_scenario
from .smoothing import SmoothedTrajectory, derivative_series, evaluate, fit_spline

__all__ = [
    "__version__",
    "CalibrationLog",
    "Cohort",
    "CohortScenario",
    "DensityEstimate",
    "DistRegressionModel",
    "Ecdf",
    "GlucodynError",
    "GlucoseSeries",
    "MetricPanel",
    "ModelSpec",
    "MultivariateDensityGrid",
    "OutcomeLink",
    "QuantileProfile",
    "SmoothedTrajectory",
    "SmoothingOptions",
    "SubjectRecord",
    "ValidationReport",
    "auc",
    "build_channels",
    "build_cohort",
    "build_design",
    "conga",
    "derivative_series",
    "ecdf",
    "evaluate",
    "fit",
    "fit_spline",
    "generate_cohort",
    "kde_multivariate",
    "kde_univariate",
    "ladder_spec",
    "load_scenario",
    "mage",
    "metric_panel",
    "modd",
    "parse_calibration_csv",
    "parse_cgm_csv",
    "parse_subject_csv",
    "penalty_matrix",
    "predict",
    "quantile_profile",
    "run_model_ladder",
    "tar",
    "validate_series",
    "write_cgm_csv",
    "write_subject_csv",
]
