"""Bivariate linear mixed models fitted through a profiled, Cholesky-factored deviance."""

from .deviance import loglik, ml_deviance, reml_criterion, solve
from .em import EmOptions, EmState, em_fit
from .exceptions import (
    BuilderError,
    DataError,
    EmNumericalError,
    InitError,
    LoadError,
    NotPositiveDefinite,
    ParameterShapeError,
    RankDeficientFixedDesign,
)
from .fitter import FitOptions, FitResult, advised_init, fit, naive_init
from .model import (
    FixedEffects,
    GroupedBivariateData,
    VarianceParams,
    assemble_gamma_bar,
    assemble_sigma_u,
    params_from_gamma_bar,
)
from .simulator import SimConfig, default_config, simulate

__version__ = "0.1.0"
