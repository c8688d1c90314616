"""Gibbs/Metropolis sampler and harmonic-mean Bayes factors for genes with
arbitrary abundances.

Two chains run per gene: one under H0 over ``(mu0, alpha0)`` and one under
H1 over ``(mu1, mu2, alpha1)``.  Each mean is updated by Metropolis-Hastings
against its complete conditional, either with a Gaussian random walk or
with an independence proposal drawn from the exact conditional that would
hold if every abundance were one (an F distribution).  ``alpha`` moves by a
random walk on the log scale whose step is tuned during burn-in and then
frozen.

The kernels are compiled with numba.  They take their random variates as
arguments so the same code serves the compiled chain and the Python-level
single-step functions.
"""
import math
from dataclasses import replace
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.special import logsumexp

from ..errors import ChainFailureError, InvalidParameterError, ValidationError
from ..nbcore import CountVector, PriorConfig
from .model import McmcConfig, McmcDiagnostics

KERNEL_CODES = {"f_proposal": 0, "random_walk": 1}
ALPHA_STEP0 = 0.5
ADAPT_WINDOW = 50
TARGET_ACCEPT = (0.30, 0.45)
LOG_ALPHA_BOUNDS = (-575.0, math.log(1e8))
ACCEPT_WARN = (0.05, 0.95)
MAX_WEIGHT_WARN = 0.5


@njit(cache=True, nogil=True)
def _lbeta(a, b):
    lo = min(a, b)
    hi = max(a, b)
    if hi > 1e6 * lo and hi > 1e6:
        # lgamma(hi) - lgamma(hi + lo) by Stirling; exact to O(lo**3 / hi**2)
        return math.lgamma(lo) - lo * math.log(hi) - lo * (lo - 1.0) / (2.0 * hi)
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


@njit(cache=True, nogil=True)
def _nb_loglik(k, s, lo, hi, mu, alpha):
    r = 1.0 / alpha
    tot = 0.0
    for j in range(lo, hi):
        kj = k[j]
        amu = alpha * s[j] * mu
        t = -_lbeta(kj + 1.0, r) - math.log(kj + r) - (kj + r) * math.log1p(amu)
        if kj > 0.0:
            t += kj * math.log(amu)
        tot += t
    return tot


@njit(cache=True, nogil=True)
def _log_mu_target(k, s, lo, hi, mu, alpha, a_mu):
    r = 1.0 / alpha
    tot = 0.0
    for j in range(lo, hi):
        tot += k[j]
    out = (tot + a_mu - 1.0) * math.log(mu) - (a_mu + a_mu * r) * math.log1p(alpha * mu)
    for j in range(lo, hi):
        out -= (k[j] + r) * math.log1p(alpha * s[j] * mu)
    return out


@njit(cache=True, nogil=True)
def _f_beta(k, s, lo, hi, mu_t, mu_c, alpha):
    # the abundance-free part is folded into each term so s_j == 1 gives exactly 0
    r = 1.0 / alpha
    base = math.log1p(alpha * mu_t) - math.log1p(alpha * mu_c)
    b = 0.0
    for j in range(lo, hi):
        b += (k[j] + r) * ((math.log1p(alpha * s[j] * mu_t) - math.log1p(alpha * s[j] * mu_c)) - base)
    return b


@njit(cache=True, nogil=True)
def _f_step(k, s, lo, hi, mu_t, alpha, a_mu, f_draw, log_u):
    """Returns (new mu, accepted, beta)."""
    tot = 0.0
    for j in range(lo, hi):
        tot += k[j]
    mu_c = f_draw * (a_mu + tot) / ((hi - lo) + a_mu)
    beta = _f_beta(k, s, lo, hi, mu_t, mu_c, alpha)
    if not math.isfinite(beta):
        return mu_t, False, beta
    if log_u < beta:
        return mu_c, True, beta
    return mu_t, False, beta


@njit(cache=True, nogil=True)
def _rw_step(k, s, lo, hi, mu_t, alpha, a_mu, proposal, log_u):
    if proposal <= 0.0:
        return mu_t, False, -np.inf
    ratio = _log_mu_target(k, s, lo, hi, proposal, alpha, a_mu) - _log_mu_target(k, s, lo, hi, mu_t, alpha, a_mu)
    if not math.isfinite(ratio):
        return mu_t, False, ratio
    if log_u < ratio:
        return proposal, True, ratio
    return mu_t, False, ratio


@njit(cache=True, nogil=True)
def _log_alpha_target(k, s, j1, two, mu1, mu2, alpha, a_mu, u, v):
    n = k.shape[0]
    r = 1.0 / alpha
    la = math.log(alpha)
    n_mu = 2.0 if two else 1.0
    tot = 0.0
    out = 0.0
    for j in range(n):
        mu = mu2 if (two and j >= j1) else mu1
        out -= _lbeta(k[j] + 1.0, r) + math.log(k[j] + r)
        out -= (k[j] + r) * math.log1p(alpha * mu * s[j])
        tot += k[j]
    out += (n_mu * a_mu + tot) * la
    out -= n_mu * _lbeta(a_mu, a_mu * r)
    prior_mu = math.log1p(alpha * mu1)
    if two:
        prior_mu += math.log1p(alpha * mu2)
    out -= a_mu * (1.0 + r) * prior_mu
    out += (u - 1.0) * la - v * alpha
    return out


@njit(cache=True, nogil=True)
def _alpha_step(k, s, j1, two, mu1, mu2, alpha, a_mu, u, v, step, z, log_u):
    la_new = math.log(alpha) + step * z
    if la_new < LOG_ALPHA_BOUNDS[0] or la_new > LOG_ALPHA_BOUNDS[1]:
        return alpha, False, -np.inf
    a_new = math.exp(la_new)
    ratio = (
        _log_alpha_target(k, s, j1, two, mu1, mu2, a_new, a_mu, u, v)
        - _log_alpha_target(k, s, j1, two, mu1, mu2, alpha, a_mu, u, v)
        + (la_new - math.log(alpha))
    )
    if not math.isfinite(ratio):
        return alpha, False, ratio
    if log_u < ratio:
        return a_new, True, ratio
    return alpha, False, ratio


@njit(cache=True, nogil=True)
def _run_chain(k, s, j1, two, a_mu, u, v, n_iter, burn, thin, seed, kernel, rw_sd1, rw_sd2, mu1, mu2, alpha, step):
    np.random.seed(seed)
    n = k.shape[0]
    n_keep = (n_iter - burn + thin - 1) // thin
    loglik = np.empty(n_keep)
    alphas = np.empty(n_keep)
    mu1s = np.empty(n_keep)
    mu2s = np.empty(n_keep)
    # rows: mu1, mu2, alpha; columns: accepted, tried (post burn-in)
    counts = np.zeros((3, 2))
    bad_beta = 0
    win_acc = 0
    win_n = 0
    hi1 = j1 if two else n
    k1 = 0.0
    k2 = 0.0
    for j in range(n):
        if j < hi1:
            k1 += k[j]
        else:
            k2 += k[j]
    keep = 0
    for it in range(n_iter):
        post = it >= burn
        for g in range(2 if two else 1):
            lo = 0 if g == 0 else j1
            hi = hi1 if g == 0 else n
            mu_t = mu1 if g == 0 else mu2
            kg = k1 if g == 0 else k2
            log_u = math.log(np.random.random())
            if kernel == 0:
                f_draw = np.random.f(2.0 * (a_mu + kg), 2.0 * ((hi - lo) + a_mu) / alpha)
                mu_new, acc, beta = _f_step(k, s, lo, hi, mu_t, alpha, a_mu, f_draw, log_u)
                if not math.isfinite(beta):
                    bad_beta += 1
            else:
                sd = rw_sd1 if g == 0 else rw_sd2
                mu_new, acc, beta = _rw_step(k, s, lo, hi, mu_t, alpha, a_mu, mu_t + sd * np.random.standard_normal(), log_u)
            if g == 0:
                mu1 = mu_new
            else:
                mu2 = mu_new
            if post:
                counts[g, 1] += 1
                if acc:
                    counts[g, 0] += 1
        z = np.random.standard_normal()
        log_u = math.log(np.random.random())
        alpha, acc, _ = _alpha_step(k, s, j1, two, mu1, mu2, alpha, a_mu, u, v, step, z, log_u)
        if post:
            counts[2, 1] += 1
            if acc:
                counts[2, 0] += 1
            if (it - burn) % thin == 0:
                ll = 0.0
                if two:
                    ll = _nb_loglik(k, s, 0, j1, mu1, alpha) + _nb_loglik(k, s, j1, n, mu2, alpha)
                else:
                    ll = _nb_loglik(k, s, 0, n, mu1, alpha)
                loglik[keep] = ll
                alphas[keep] = alpha
                mu1s[keep] = mu1
                mu2s[keep] = mu2
                keep += 1
        else:
            win_n += 1
            if acc:
                win_acc += 1
            if win_n == ADAPT_WINDOW:
                rate = win_acc / win_n
                if rate < TARGET_ACCEPT[0]:
                    step *= 0.8
                elif rate > TARGET_ACCEPT[1]:
                    step *= 1.25
                win_acc = 0
                win_n = 0
    return loglik, alphas, mu1s, mu2s, counts, bad_beta, step


class StepResult(NamedTuple):
    value: float
    accepted: bool
    log_ratio: float


def _arrays(data):
    if not isinstance(data, CountVector):
        data = CountVector(data)
    return data.counts, data.abundances


def rw_sd(data):
    """Random-walk scale: sd of ``k / s``, or ``max(1, mean / 10)`` if that is 0."""
    k, s = _arrays(data)
    ratios = k / s
    sd = float(np.std(ratios, ddof=1)) if ratios.size > 1 else 0.0
    if not sd > 0:
        sd = max(1.0, float(ratios.mean()) / 10.0)
    return sd


def mh_step_mu_random_walk(mu, data, alpha, cfg=PriorConfig(), rng=None, *, sd=None, proposal=None):
    """One random-walk Metropolis update of a group mean.

    ``data`` holds only the samples of the group being updated.  Pass
    ``proposal`` to fix the candidate instead of drawing it.
    """
    k, s = _arrays(data)
    rng = np.random.default_rng(rng)
    if proposal is None:
        proposal = mu + (rw_sd(data) if sd is None else sd) * rng.standard_normal()
    log_u = math.log(rng.random())
    return StepResult(*_rw_step(k, s, 0, k.size, float(mu), float(alpha), cfg.a_mu, float(proposal), log_u))


def f_proposal_beta(data, mu_t, mu_c, alpha):
    """Log acceptance ratio of the F independence proposal."""
    k, s = _arrays(data)
    return float(_f_beta(k, s, 0, k.size, float(mu_t), float(mu_c), float(alpha)))


def mh_step_mu_f_proposal(mu, data, alpha, cfg=PriorConfig(), rng=None):
    """One independence-sampler update of a group mean with the F proposal."""
    k, s = _arrays(data)
    rng = np.random.default_rng(rng)
    a = cfg.a_mu
    f_draw = rng.f(2.0 * (a + k.sum()), 2.0 * (k.size + a) / alpha)
    log_u = math.log(rng.random())
    return StepResult(*_f_step(k, s, 0, k.size, float(mu), float(alpha), a, f_draw, log_u))


def _group_layout(data, mus, split):
    k, s = _arrays(data)
    mus = tuple(float(m) for m in np.atleast_1d(mus))
    if len(mus) == 1:
        return k, s, k.size, False, mus[0], mus[0]
    if split is None or len(mus) != 2:
        raise InvalidParameterError("two means need a (J1, J2) split")
    j1, j2 = split
    if j1 + j2 != k.size:
        raise ValidationError(f"split {split} does not match {k.size} samples")
    return k, s, int(j1), True, mus[0], mus[1]


def alpha_log_conditional(alpha, data, mus, hyper, cfg=PriorConfig(), split=None):
    """Log complete conditional of ``alpha`` up to an additive constant.

    One mean gives the H0 form over all samples; two means with a
    ``(J1, J2)`` split give the H1 form.
    """
    k, s, j1, two, m1, m2 = _group_layout(data, mus, split)
    return float(_log_alpha_target(k, s, j1, two, m1, m2, float(alpha), cfg.a_mu, hyper.u, hyper.v))


def mh_step_alpha(alpha, data, mus, hyper, cfg=PriorConfig(), rng=None, *, split=None, step=ALPHA_STEP0, z=None):
    """Random-walk Metropolis update of ``alpha`` on the log scale."""
    if not alpha > 0:
        raise InvalidParameterError("alpha must be > 0")
    k, s, j1, two, m1, m2 = _group_layout(data, mus, split)
    rng = np.random.default_rng(rng)
    if z is None:
        z = rng.standard_normal()
    log_u = math.log(rng.random())
    return StepResult(*_alpha_step(k, s, j1, two, m1, m2, float(alpha), cfg.a_mu, hyper.u, hyper.v, step, float(z), log_u))


def _seed32(*entropy):
    return int(np.random.SeedSequence([e % 2**64 for e in entropy]).generate_state(1)[0])


def _start_mean(k, s):
    m = float(np.mean(k / s))
    return m if m > 0 else 0.1


def run_chain(data, hyper, cfg, mcmc, *, split=None, seed=None):
    """Run one chain.  ``split`` selects the two-mean (H1) model.

    Returns a dict with the stored log-likelihoods and parameter traces,
    acceptance counts and the frozen alpha step.
    """
    k, s = _arrays(data)
    two = split is not None
    j1 = int(split[0]) if two else k.size
    if two and (split[0] + split[1] != k.size or min(split) < 1):
        raise ValidationError(f"split {split} does not match {k.size} samples")
    seed = _seed32(mcmc.seed) if seed is None else seed
    mu1 = _start_mean(k[:j1], s[:j1])
    mu2 = _start_mean(k[j1:], s[j1:]) if two else mu1
    sd1 = rw_sd(CountVector(k[:j1], s[:j1])) * mcmc.rw_sd_scale
    sd2 = rw_sd(CountVector(k[j1:], s[j1:])) * mcmc.rw_sd_scale if two else sd1
    loglik, alphas, mu1s, mu2s, counts, bad_beta, step = _run_chain(
        k, s, j1, two, cfg.a_mu, hyper.u, hyper.v,
        mcmc.n_iter, mcmc.burn_in, mcmc.thin, seed, KERNEL_CODES[mcmc.mu_kernel],
        sd1, sd2, mu1, mu2, max(hyper.mean, 1e-3), ALPHA_STEP0,
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = counts[:, 0] / counts[:, 1]
    return {
        "loglik": loglik,
        "alpha": alphas,
        "mu1": mu1s,
        "mu2": mu2s if two else None,
        "acceptance": rates,
        "nonfinite_beta": int(bad_beta),
        "alpha_step": float(step),
    }


def harmonic_mean_log_evidence(loglik):
    """Log of the harmonic mean of the likelihoods at posterior draws.

    Also returns the largest normalized reciprocal-likelihood weight and the
    Kish effective sample size of those weights.
    """
    ll = np.asarray(loglik, dtype=np.float64)
    lse = logsumexp(-ll)
    w = np.exp(-ll - lse)
    return float(np.log(ll.size) - lse), float(w.max()), float(1.0 / np.sum(w**2))


def log_bf_mcmc(data, split, model, mcmc=McmcConfig()):
    """Harmonic-mean estimate of log BF10 from one H0 chain and one H1 chain.

    ``BF10 ~= sum(1 / l0) / sum(1 / l1)`` over equally many stored draws,
    which is the ratio of the two harmonic-mean evidence estimates.
    Deterministic given ``mcmc.seed``.
    """
    if not isinstance(data, CountVector):
        data = CountVector(data)
    j1, j2 = (int(x) for x in split)
    if j1 < 1 or j2 < 1 or j1 + j2 != len(data):
        raise ValidationError(f"split {split} does not match {len(data)} samples")
    cfg = model.prior_cfg
    c0 = run_chain(data, model.hyper_h0, cfg, mcmc, seed=_seed32(mcmc.seed, 0))
    c1 = run_chain(data, model.hyper_h1, cfg, mcmc, split=(j1, j2), seed=_seed32(mcmc.seed, 1))
    for name, chain in (("H0", c0), ("H1", c1)):
        if not np.all(np.isfinite(chain["loglik"])):
            raise ChainFailureError(f"non-finite likelihood in the {name} chain")
    e0, w0, ess0 = harmonic_mean_log_evidence(c0["loglik"])
    e1, w1, ess1 = harmonic_mean_log_evidence(c1["loglik"])

    f_kernel = mcmc.mu_kernel == "f_proposal"
    acceptance = {
        "h0_mu0": float(c0["acceptance"][0]),
        "h0_alpha": float(c0["acceptance"][2]),
        "h1_mu1": float(c1["acceptance"][0]),
        "h1_mu2": float(c1["acceptance"][1]),
        "h1_alpha": float(c1["acceptance"][2]),
    }
    warnings = []
    for block, rate in acceptance.items():
        # the F proposal is exact at unit abundances, so high acceptance there is expected
        too_high = rate > ACCEPT_WARN[1] and not (f_kernel and "_mu" in block)
        if rate < ACCEPT_WARN[0] or too_high:
            warnings.append(f"acceptance rate {rate:.3f} in block {block}")
    for name, w in (("H0", w0), ("H1", w1)):
        if w > MAX_WEIGHT_WARN:
            warnings.append(f"one draw carries {w:.0%} of the {name} harmonic-mean sum; estimate is unstable")
    diag = McmcDiagnostics(
        acceptance=acceptance,
        n_draws=int(c0["loglik"].size),
        log_evidence_h0=e0,
        log_evidence_h1=e1,
        max_weight_h0=w0,
        max_weight_h1=w1,
        ess_h0=ess0,
        ess_h1=ess1,
        alpha_step_h0=c0["alpha_step"],
        alpha_step_h1=c1["alpha_step"],
        nonfinite_beta=c0["nonfinite_beta"] + c1["nonfinite_beta"],
        warnings=warnings,
    )
    return e1 - e0, diag


def gene_config(mcmc, global_seed, gene_index):
    """Per-gene config whose seed depends only on (global seed, gene index)."""
    return replace(mcmc, seed=_seed32(global_seed, gene_index))
