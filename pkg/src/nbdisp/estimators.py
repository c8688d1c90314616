"""Overdispersion estimators and the gamma MLE used for empirical Bayes.

Three estimators of ``alpha`` are provided for iid negative binomial counts:

* :func:`mle` -- profile maximum likelihood, truncated at zero,
* :func:`marginal_mle` -- maximizer of the likelihood with ``mu``
  integrated out against the conjugate F prior,
* :func:`quasi_likelihood` -- the Pearson moment estimator, as a comparator.

Each has a ``*_batch`` twin that takes a ``(n_problems, n_obs)`` array and
solves all problems in one vectorized pass.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma
from sklearn.base import BaseEstimator

from . import _optimize
from ._validation import check_counts
from .errors import DegenerateDataError, DispersionDegenerateError, ValidationError
from .nbcore import DEFAULT_A_MU, CountVector, PriorConfig, marginal_loglik, nb_logpmf

ALPHA_MIN = _optimize.LOWER
ALPHA_MAX = _optimize.UPPER
GAMMA_FIT_FLOOR = 1e-6


@dataclass(frozen=True)
class EstimateResult:
    alpha_hat: float
    mu_hat: float = float("nan")
    truncated: bool = False
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if self.alpha_hat < 0:
            raise ValueError("alpha_hat must be >= 0")
        if self.truncated and self.alpha_hat != 0:
            raise ValueError("a truncated estimate must be 0")

    @property
    def sd(self):
        """Estimated standard deviation of a single count."""
        return float(np.sqrt(self.mu_hat + self.alpha_hat * self.mu_hat**2))


@dataclass(frozen=True)
class GammaHyper:
    """Gamma(shape ``u``, rate ``v``) prior on overdispersion."""

    u: float
    v: float

    def __post_init__(self):
        if not (self.u > 0 and self.v > 0 and np.isfinite(self.u) and np.isfinite(self.v)):
            raise ValueError(f"gamma hyperparameters must be positive, got u={self.u}, v={self.v}")

    @property
    def mean(self):
        return self.u / self.v


@dataclass
class BatchEstimate:
    alpha: np.ndarray
    mu: np.ndarray
    truncated: np.ndarray
    converged: np.ndarray
    iterations: int


def _as_unit_counts(data, min_len):
    if isinstance(data, CountVector):
        if not data.unit_abundances:
            raise ValidationError("estimators require unit abundances")
        k = data.counts
    else:
        k = CountVector(data).counts
    if k.size < min_len:
        raise ValidationError(f"need at least {min_len} observations, got {k.size}")
    return k


def profile_score_at_zero(counts):
    """Derivative of the profile log-likelihood as ``alpha -> 0+``.

    With ``mu`` at the sample mean this is ``(sum((k - kbar)**2) - sum(k)) / 2``;
    a non-positive value means the likelihood equations have no positive root.
    """
    k = np.asarray(counts, dtype=np.float64)
    m = k.mean(axis=-1, keepdims=True)
    return 0.5 * (((k - m) ** 2).sum(axis=-1) - k.sum(axis=-1))


def mle_batch(counts):
    """Profile MLE for each row of ``counts``.

    All-zero rows are left at ``alpha = 0`` without being flagged as
    truncated; callers decide whether that is an error.
    """
    k = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    mu = k.mean(axis=1)
    truncated = (profile_score_at_zero(k) <= 0) & (mu > 0)
    todo = np.flatnonzero(~truncated & (mu > 0))
    alpha = np.zeros(k.shape[0])
    converged = np.ones(k.shape[0], dtype=bool)
    iterations = 0
    if todo.size:
        sub, mu_sub = k[todo], mu[todo][:, None]
        res = _optimize.maximize_log_scale(
            lambda a: nb_logpmf(sub, mu_sub, a[:, None]).sum(axis=1), todo.size
        )
        alpha[todo] = res.x
        converged[todo] = res.converged
        iterations = res.iterations
    return BatchEstimate(alpha, mu, truncated, converged, iterations)


def marginal_mle_batch(counts, a_mu=DEFAULT_A_MU):
    """Marginal MLE for each row of ``counts`` (no validation)."""
    k = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    res = _optimize.maximize_log_scale(lambda a: marginal_loglik(k, a, a_mu), k.shape[0])
    return BatchEstimate(res.x, k.mean(axis=1), np.zeros(k.shape[0], bool), res.converged, res.iterations)


def quasi_likelihood_batch(counts):
    """Pearson moment estimator ``(S^2 - kbar) / kbar^2`` clamped at zero.

    Rows with zero mean give 0.
    """
    k = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    m = k.mean(axis=1)
    s2 = k.var(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (s2 - m) / m**2
    raw = np.where(m > 0, raw, 0.0)
    return BatchEstimate(np.maximum(raw, 0.0), m, raw < 0, np.ones(k.shape[0], bool), 0)


def mle(data):
    """Profile maximum likelihood estimate of ``alpha``, truncated at zero."""
    k = _as_unit_counts(data, 2)
    if not np.any(k > 0):
        raise DegenerateDataError("all counts are zero; the MLE of mu lies outside the parameter space")
    b = mle_batch(k[None, :])
    return EstimateResult(
        alpha_hat=float(b.alpha[0]),
        mu_hat=float(b.mu[0]),
        truncated=bool(b.truncated[0]),
        converged=bool(b.converged[0]),
        iterations=b.iterations,
    )


def marginal_mle(data, cfg=PriorConfig()):
    """Maximizer of the marginal likelihood over ``[ALPHA_MIN, ALPHA_MAX]``."""
    k = _as_unit_counts(data, 1)
    if not np.any(k > 0):
        raise DegenerateDataError("all counts are zero")
    b = marginal_mle_batch(k[None, :], cfg.a_mu)
    return EstimateResult(
        alpha_hat=float(b.alpha[0]),
        mu_hat=float(b.mu[0]),
        converged=bool(b.converged[0]),
        iterations=b.iterations,
    )


def quasi_likelihood(data):
    """Moment estimator solving ``sum((k - kbar)^2) / (kbar + alpha kbar^2) = J - 1``."""
    k = _as_unit_counts(data, 2)
    if k.mean() == 0:
        raise DegenerateDataError("sample mean is zero")
    b = quasi_likelihood_batch(k[None, :])
    return EstimateResult(alpha_hat=float(b.alpha[0]), mu_hat=float(b.mu[0]), truncated=bool(b.truncated[0]))


def fit_gamma_mle(values, *, tol=1e-12, max_iter=100):
    """Maximum likelihood gamma (shape, rate) for strictly positive ``values``.

    Solves ``log u - digamma(u) = log(mean) - mean(log)`` by safeguarded
    Newton iteration from the moment estimate, then sets ``v = u / mean``.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValidationError("need at least 2 values to fit a gamma distribution")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValidationError("gamma fit needs finite, strictly positive values")
    mean = x.mean()
    s = np.log(mean) - np.log(x).mean()
    if not s > 0 or np.ptp(x) == 0:
        raise DispersionDegenerateError("all values identical; the gamma shape MLE diverges")
    var = x.var()
    u = mean**2 / var if var > 0 else 1.0 / (2.0 * s)
    for _ in range(max_iter):
        g = np.log(u) - digamma(u) - s
        dg = 1.0 / u - polygamma(1, u)
        step = g / dg
        u_new = u - step
        if u_new <= 0:
            u_new = u / 2.0
        if abs(u_new - u) <= tol * u:
            u = u_new
            break
        u = u_new
    else:
        raise DispersionDegenerateError("gamma shape Newton iteration did not converge")
    return GammaHyper(u=float(u), v=float(u / mean))


class DispersionEstimator(BaseEstimator):
    """Per-gene overdispersion estimates in scikit-learn form.

    Parameters
    ----------
    method : {"marginal", "mle", "quasi"}
        Which estimator to apply to each gene.
    a_mu : float
        Shape constant of the F prior (``method="marginal"`` only).

    Attributes
    ----------
    alpha_ : ndarray of shape (n_genes,)
    mu_ : ndarray of shape (n_genes,)
    truncated_ : ndarray of bool
    converged_ : ndarray of bool

    Notes
    -----
    ``X`` is samples by genes, the scikit-learn convention.  Genes whose
    counts are all zero get ``nan``.
    """

    _methods = {"marginal", "mle", "quasi"}

    def __init__(self, method="marginal", a_mu=DEFAULT_A_MU):
        self.method = method
        self.a_mu = a_mu

    def fit(self, X, y=None):
        if self.method not in self._methods:
            raise ValueError(f"method must be one of {sorted(self._methods)}, got {self.method!r}")
        PriorConfig(self.a_mu)
        k = check_counts(X).T
        if self.method != "marginal" and k.shape[1] < 2:
            raise ValidationError(f"method {self.method!r} needs at least 2 samples")
        ok = k.sum(axis=1) > 0
        est = {
            "marginal": lambda c: marginal_mle_batch(c, self.a_mu),
            "mle": mle_batch,
            "quasi": quasi_likelihood_batch,
        }[self.method](k[ok]) if ok.any() else None
        n = k.shape[0]
        self.alpha_ = np.full(n, np.nan)
        self.mu_ = k.mean(axis=1)
        self.truncated_ = np.zeros(n, dtype=bool)
        self.converged_ = np.zeros(n, dtype=bool)
        if est is not None:
            self.alpha_[ok] = est.alpha
            self.truncated_[ok] = est.truncated
            self.converged_[ok] = est.converged
        self.n_features_in_ = n
        return self
