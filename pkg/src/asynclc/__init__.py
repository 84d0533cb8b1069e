"""Varying-coefficient regression for mixed synchronous and asynchronous
longitudinal covariates: kernel-weighted local-linear estimators, sandwich
variances, wild-bootstrap simultaneous confidence bands, cross-validated
bandwidths, and a Monte Carlo harness."""

from .bandwidth import CvPlan, CvResult, aspe_beta, aspe_gamma, default_plan, fold_indices, select
from .data import (
    CenteredDataset,
    LongitudinalDataset,
    MeanCurve,
    SubjectRecord,
    ValidationReport,
    pair_iterator,
    validate,
)
from .errors import (
    AsynclcError,
    CovarianceNotPD,
    DegenerateScale,
    EmptyInput,
    EstimationFailed,
    FoldDegenerate,
    InvalidBandwidth,
    InvalidDataset,
    InvalidParameter,
    InvalidSampleSize,
    NoLocalData,
    OrphanSubject,
    ParseError,
    SelectionFailed,
    SingularFit,
    SingularLocalFit,
)
from .estimators import (
    CoefficientEstimate,
    ConstantCoefficients,
    CurveEstimate,
    DesignLayout,
    METHODS,
    center,
    default_grid,
    fit_centering,
    fit_constant_coefficients,
    fit_curve,
    fit_gamma_second_step,
    fit_one_step,
    fit_vcm,
    normalize_longitudinal,
    nw_mean,
)
from .io import emit_curve_csv, emit_cv_csv, emit_plot_data, emit_report, ingest, write_dataset
from .kernels import (
    Bandwidths,
    KernelFamily,
    KernelSpec,
    bandwidth_rule,
    eval_bi,
    eval_scaled_bi,
    eval_scaled_uni,
    eval_uni,
)
from .scb import (
    MultiplierLaw,
    ResidualBundle,
    ScbResult,
    bootstrap_band,
    bootstrap_replicate,
    kernel_weighted_residuals,
    percentile_order_stat,
    q_hat,
    subject_terms,
)
from .simulation import (
    DgpConfig,
    EstimatorConfig,
    McConfig,
    SimulationReport,
    generate_dataset,
    rase,
    run_monte_carlo,
    sample_gp,
)

__version__ = "0.1.0"
