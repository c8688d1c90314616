"""Negative binomial overdispersion estimation and a Bayesian test for
differential expression between two groups of count samples."""
from .degtest import BayesianDETest, run_de_test
from .errors import NBDispError, NumericalError, ValidationError
from .estimators import DispersionEstimator, GammaHyper, fit_gamma_mle, marginal_mle, mle, quasi_likelihood
from .libnorm import CountMatrix, MedianRatioNormalizer, estimate_abundances
from .nbcore import CountVector, NBModel, PriorConfig, log_marginal_likelihood, log_nb_pmf

__version__ = "0.1.0"

__all__ = [
    "BayesianDETest",
    "CountMatrix",
    "CountVector",
    "DispersionEstimator",
    "GammaHyper",
    "MedianRatioNormalizer",
    "NBDispError",
    "NBModel",
    "NumericalError",
    "PriorConfig",
    "ValidationError",
    "estimate_abundances",
    "fit_gamma_mle",
    "log_marginal_likelihood",
    "log_nb_pmf",
    "marginal_mle",
    "mle",
    "quasi_likelihood",
    "run_de_test",
]
