from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameterError
from ..estimators import GammaHyper
from ..nbcore import PriorConfig

MU_KERNELS = ("f_proposal", "random_walk")


@dataclass(frozen=True)
class HypothesisModel:
    """Priors for the no-difference (H0) and two-mean (H1) models of one gene."""

    hyper_h0: GammaHyper
    hyper_h1: GammaHyper
    prior_cfg: PriorConfig = PriorConfig()
    pi1: float = 0.5

    def __post_init__(self):
        if not 0 < self.pi1 < 1:
            raise InvalidParameterError(f"pi1 must lie in (0, 1), got {self.pi1}")


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 50_000
    burn_in: int = 5_000
    thin: int = 1
    seed: int = 0
    mu_kernel: str = "f_proposal"
    rw_sd_scale: float = 1.0

    def __post_init__(self):
        if self.n_iter < 1 or self.thin < 1 or self.burn_in < 0:
            raise InvalidParameterError("n_iter and thin must be >= 1, burn_in >= 0")
        if self.burn_in >= self.n_iter:
            raise InvalidParameterError("burn_in must be smaller than n_iter")
        if self.mu_kernel not in MU_KERNELS:
            raise InvalidParameterError(f"mu_kernel must be one of {MU_KERNELS}")
        if not self.rw_sd_scale > 0:
            raise InvalidParameterError("rw_sd_scale must be > 0")


@dataclass
class McmcDiagnostics:
    acceptance: dict
    n_draws: int
    log_evidence_h0: float
    log_evidence_h1: float
    max_weight_h0: float
    max_weight_h1: float
    ess_h0: float
    ess_h1: float
    alpha_step_h0: float
    alpha_step_h1: float
    nonfinite_beta: int = 0
    warnings: list = field(default_factory=list)


@dataclass
class GeneTestResult:
    gene_id: str
    log_bf10: float
    post_prob_h1: float
    mu1_hat: float
    mu2_hat: float
    method: str
    mcmc_diagnostics: McmcDiagnostics = None

    @property
    def testable(self):
        return self.method != "untestable"

    @property
    def log2_fold_change(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.log2(self.mu2_hat) - np.log2(self.mu1_hat))
