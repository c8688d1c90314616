"""Bayesian two-group differential expression test."""
from .mcmc import (
    alpha_log_conditional,
    f_proposal_beta,
    log_bf_mcmc,
    mh_step_alpha,
    mh_step_mu_f_proposal,
    mh_step_mu_random_walk,
)
from .model import GeneTestResult, HypothesisModel, McmcConfig, McmcDiagnostics
from .pipeline import BayesianDETest, DETestRun, fit_hyperparameters, run_de_test
from .quadrature import log_bf_quadrature, log_evidences_quadrature
from .selection import Selection, estimate_pi0, posterior_probs, select_genes

__all__ = [
    "BayesianDETest",
    "DETestRun",
    "GeneTestResult",
    "HypothesisModel",
    "McmcConfig",
    "McmcDiagnostics",
    "Selection",
    "alpha_log_conditional",
    "estimate_pi0",
    "f_proposal_beta",
    "fit_hyperparameters",
    "log_bf_mcmc",
    "log_bf_quadrature",
    "log_evidences_quadrature",
    "mh_step_alpha",
    "mh_step_mu_f_proposal",
    "mh_step_mu_random_walk",
    "posterior_probs",
    "run_de_test",
    "select_genes",
]
