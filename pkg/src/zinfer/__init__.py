"""Zero-inflated count models with a continuum of inflation types."""

from .expfam import BaseCount, DomainError, SamplingError, log_pmf, moments, sample, sample_truncated_positive
from .fit import (
    ConvergenceError,
    DataError,
    FitOptions,
    FitResult,
    NonMonotoneTypeError,
    TypeNotIdentifiable,
    estimate_tau,
    fit_alpha_given_beta,
    fit_beta_given_alpha,
    fit_iid,
    fit_joint,
    fit_mixture_alpha,
)
from .modelsel import ComparisonRow, MixedDataError, compare, diagnostics_pairs, log_likelihood
from .score import (
    Dataset,
    NearSingularWarning,
    expected_info,
    observed_info,
    regression_expected_info,
    regression_score,
    score_obs,
)
from .zicore import (
    ADDITIVE,
    HURDLE,
    MIXTURE,
    MULTIPLICATIVE,
    PRESETS,
    InflationOverflow,
    ZiModel,
    ZiType,
    derived,
    latent_m_distribution,
    omega_and_derivs,
    simulate,
    zi_log_pmf,
    zi_moments,
)

__version__ = "0.1.0"
