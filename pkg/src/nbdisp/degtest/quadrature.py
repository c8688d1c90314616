"""Bayes factors for unit-abundance genes by one-dimensional quadrature.

With every abundance equal to one the mean integrates out in closed form,
leaving a single integral over ``alpha`` against its gamma prior.  The
integral is taken over ``x = log(alpha)``, which absorbs the
``alpha**(u - 1)`` endpoint singularity of the prior, and is split at the
integrand's peak.
"""
import numpy as np
from scipy import integrate
from scipy.special import gammaln

from ..errors import NumericalIntegrationError, UnsupportedAbundanceError, ValidationError
from ..nbcore import CountVector, marginal_loglik

EPS_ABS = 1e-8
EPS_REL = 1e-8
LIMIT = 2000
# the marginal likelihood is flat in alpha to ~1e-12 below this
ALPHA_FLOOR = 1e-12
_GRID = np.linspace(np.log(ALPHA_FLOOR), np.log(1e5), 600)


def log_evidence(log_ml, hyper):
    """``log of the integral of exp(log_ml(alpha)) Gamma(alpha; u, v) d alpha``.

    ``log_ml`` must accept an array of ``alpha`` values.  The part of the
    integral below ``ALPHA_FLOOR`` is added in closed form.
    """
    u, v = hyper.u, hyper.v

    def h(x):
        a = np.exp(x)
        return log_ml(np.maximum(a, ALPHA_FLOOR)) + u * x - v * a

    hg = h(_GRID)
    if not np.any(np.isfinite(hg)):
        raise NumericalIntegrationError("integrand is not finite anywhere on the search grid")
    i = int(np.nanargmax(hg))
    x_peak, h_peak = _GRID[i], hg[i]

    def f(x):
        return float(np.exp(h(np.asarray(x)) - h_peak))

    # below the floor log_ml is constant, so that tail is exp(c + u x) / u
    x_floor = _GRID[0]
    total = float(np.exp(h(x_floor) - h_peak)) / u
    x_top = np.log(np.exp(x_peak) + 1000.0 / v)
    diagnostics = {"x_peak": float(x_peak), "h_peak": float(h_peak), "left_tail": total, "pieces": []}
    for lo, hi in ((x_floor, x_peak), (x_peak, x_top)):
        if hi <= lo:
            continue
        out = integrate.quad(f, lo, hi, epsabs=EPS_ABS, epsrel=EPS_REL, limit=LIMIT, full_output=1)
        value, abserr, info = out[0], out[1], out[2]
        diagnostics["pieces"].append({"value": value, "abserr": abserr, "neval": info["neval"]})
        if len(out) > 3 and abserr > 1e-6 * max(abs(value), 1e-300):
            diagnostics["message"] = out[3]
            raise NumericalIntegrationError(f"quadrature over alpha did not converge: {out[3]}", diagnostics)
        total += value
    if not total > 0:
        raise NumericalIntegrationError("quadrature returned a non-positive evidence", diagnostics)
    return float(h_peak + np.log(total) + u * np.log(v) - gammaln(u))


def _check_split(data, split):
    j1, j2 = (int(s) for s in split)
    if j1 < 1 or j2 < 1 or j1 + j2 != len(data):
        raise ValidationError(f"split {split} does not match {len(data)} samples")
    return j1, j2


def log_evidences_quadrature(data, split, model):
    """Log marginal likelihoods ``(log p(k | H0), log p(k | H1))``."""
    if not isinstance(data, CountVector):
        data = CountVector(data)
    if not data.unit_abundances:
        raise UnsupportedAbundanceError("quadrature Bayes factors need unit abundances; use log_bf_mcmc")
    j1, _ = _check_split(data, split)
    k = data.counts
    k1, k2 = k[:j1], k[j1:]
    a_mu = model.prior_cfg.a_mu
    log_h0 = log_evidence(lambda a: marginal_loglik(k, a, a_mu), model.hyper_h0)
    log_h1 = log_evidence(
        lambda a: marginal_loglik(k1, a, a_mu) + marginal_loglik(k2, a, a_mu), model.hyper_h1
    )
    return log_h0, log_h1


def log_bf_quadrature(data, split, model):
    """``log BF10 = log p(k | H1) - log p(k | H0)`` for one gene."""
    log_h0, log_h1 = log_evidences_quadrature(data, split, model)
    return log_h1 - log_h0
