"""Negative binomial densities in the (mean, overdispersion) parameterization.

Everything here works in log space.  ``Var(k) = mu + alpha * mu**2``; the
conjugate prior on ``mu`` given ``alpha`` is an F(2 a_mu, 2 a_mu / alpha)
distribution, which lets ``mu`` be integrated out in closed form.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, xlogy

from ._validation import check_abundances, check_count_vector
from .errors import InvalidParameterError, UnsupportedAbundanceError

#: Below this overdispersion the Poisson limit is used.
POISSON_THRESHOLD = 1e-8
DEFAULT_A_MU = 0.01


@dataclass(frozen=True)
class NBModel:
    mu: float
    alpha: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.alpha)):
            raise InvalidParameterError(f"non-finite parameters mu={self.mu}, alpha={self.alpha}")
        if self.mu <= 0:
            raise InvalidParameterError(f"mu must be > 0, got {self.mu}")
        if self.alpha < 0:
            raise InvalidParameterError(f"alpha must be >= 0, got {self.alpha}")

    @property
    def variance(self):
        return self.mu + self.alpha * self.mu**2


@dataclass(frozen=True)
class PriorConfig:
    """Shape constant of the conditional F prior on the mean."""

    a_mu: float = DEFAULT_A_MU

    def __post_init__(self):
        if not (np.isfinite(self.a_mu) and self.a_mu > 0):
            raise InvalidParameterError(f"a_mu must be > 0, got {self.a_mu}")


@dataclass(frozen=True)
class CountVector:
    """Counts for one gene with per-sample abundances (library sizes)."""

    counts: np.ndarray
    abundances: np.ndarray = field(default=None)

    def __post_init__(self):
        k = check_count_vector(self.counts)
        object.__setattr__(self, "counts", k)
        object.__setattr__(self, "abundances", check_abundances(self.abundances, k.size))

    def __len__(self):
        return self.counts.size

    @property
    def unit_abundances(self):
        return bool(np.all(self.abundances == 1.0))

    def subset(self, index):
        return CountVector(self.counts[index], self.abundances[index])


def nb_logpmf(k, mu, alpha):
    """Vectorized log pmf; broadcasts ``k``, ``mu`` and ``alpha``.

    ``alpha`` below :data:`POISSON_THRESHOLD` evaluates the Poisson limit.
    """
    k, mu, alpha = np.broadcast_arrays(
        np.asarray(k, dtype=np.float64),
        np.asarray(mu, dtype=np.float64),
        np.asarray(alpha, dtype=np.float64),
    )
    poisson = alpha < POISSON_THRESHOLD
    a = np.where(poisson, 1.0, alpha)
    r = 1.0 / a
    amu = a * mu
    with np.errstate(divide="ignore", invalid="ignore"):
        out_nb = -betaln(k + 1.0, r) - np.log(k + r) + xlogy(k, amu) - (k + r) * np.log1p(amu)
        out_pois = xlogy(k, mu) - mu - gammaln(k + 1.0)
    out = np.where(poisson, out_pois, out_nb)
    return out[()] if out.ndim == 0 else out


def log_nb_pmf(k, model):
    """Log probability of count ``k`` under ``model``."""
    if not isinstance(model, NBModel):
        model = NBModel(*model)
    if np.any(np.asarray(k) < 0):
        raise InvalidParameterError("counts must be non-negative")
    return nb_logpmf(k, model.mu, model.alpha)


def log_cond_prior_mu(mu, alpha, cfg=PriorConfig()):
    """Log density of the F(2 a_mu, 2 a_mu / alpha) prior on ``mu``."""
    mu = np.asarray(mu, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InvalidParameterError("the conditional prior on mu needs alpha > 0")
    if np.any(mu <= 0):
        raise InvalidParameterError("mu must be > 0")
    a = cfg.a_mu
    out = -betaln(a, a / alpha) + a * np.log(alpha) + (a - 1.0) * np.log(mu) - (a + a / alpha) * np.log1p(alpha * mu)
    return out[()] if out.ndim == 0 else out


def marginal_loglik(counts, alpha, a_mu=DEFAULT_A_MU):
    """Closed-form log p(k | alpha) with the mean integrated out.

    ``counts`` holds iid samples along its last axis; ``alpha`` broadcasts
    against ``counts.shape[:-1]``.  No validation: this is the inner loop of
    the optimizers and quadratures.
    """
    k = np.asarray(counts, dtype=np.float64)
    r = 1.0 / np.asarray(alpha, dtype=np.float64)
    n = k.shape[-1]
    total = k.sum(axis=-1)
    per_obs = -betaln(k + 1.0, r[..., None]) - np.log(k + r[..., None])
    return per_obs.sum(axis=-1) + betaln(a_mu + total, (n + a_mu) * r) - betaln(a_mu, a_mu * r)


def log_marginal_likelihood(data, alpha, cfg=PriorConfig()):
    """Log integrated likelihood of ``data`` at overdispersion ``alpha``.

    Only defined for unit abundances; other abundances have no closed form.
    """
    if not isinstance(data, CountVector):
        data = CountVector(data)
    if not data.unit_abundances:
        raise UnsupportedAbundanceError(
            "closed-form marginal likelihood requires all abundances equal to 1; "
            "use the quadrature or MCMC Bayes-factor routines instead"
        )
    if not np.all(np.isfinite(alpha)) or np.any(np.asarray(alpha) <= 0):
        raise InvalidParameterError(f"alpha must be > 0, got {alpha}")
    out = marginal_loglik(data.counts, alpha, cfg.a_mu)
    return out[()] if np.ndim(out) == 0 else out
