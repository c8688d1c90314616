import mpmath
import numpy as np
import pytest
from scipy import optimize, stats
from scipy.special import digamma
from sklearn.base import clone

from nbdisp.errors import DegenerateDataError, DispersionDegenerateError, ValidationError
from nbdisp.estimators import (
    ALPHA_MIN,
    DispersionEstimator,
    GammaHyper,
    fit_gamma_mle,
    marginal_mle,
    marginal_mle_batch,
    mle,
    mle_batch,
    profile_score_at_zero,
    quasi_likelihood,
)
from nbdisp.nbcore import CountVector, PriorConfig, marginal_loglik, nb_logpmf

TABLE1 = [
    ((2, 3, 4, 5, 8), 0.000, 4.40, 2.097),
    ((2, 3, 4, 5, 9), 0.052, 4.60, 2.386),
    ((2, 3, 4, 3, 11), 0.210, 4.60, 3.006),
    ((2, 3, 4, 2, 12), 0.329, 4.60, 3.402),
]


def profile_loglik(k, alpha):
    k = np.asarray(k, float)
    return stats.nbinom.logpmf(k, 1.0 / alpha, 1.0 / (1.0 + alpha * k.mean())).sum()


def oracle_argmax(f, lo=-12.0, hi=8.0):
    """Dense log grid then bounded Brent refinement around the best cell."""
    grid = np.linspace(lo, hi, 4001)
    vals = np.array([f(np.exp(x)) for x in grid])
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda x: -f(np.exp(x)), bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return np.exp(res.x)


@pytest.mark.parametrize("sample,alpha,mu,sd", TABLE1)
def test_table1(sample, alpha, mu, sd):
    est = mle(sample)
    assert est.alpha_hat == pytest.approx(alpha, abs=1e-3)
    assert est.mu_hat == pytest.approx(mu, abs=1e-3)
    assert est.sd == pytest.approx(sd, abs=1e-3)
    assert est.truncated == (alpha == 0)


@pytest.mark.parametrize("sample", [(2, 3, 4, 5, 9), (2, 3, 4, 2, 12), (0, 0, 7, 1), (120, 15, 600, 33, 80, 1)])
def test_mle_matches_grid_oracle(sample):
    ref = oracle_argmax(lambda a: profile_loglik(sample, a))
    assert mle(sample).alpha_hat == pytest.approx(ref, rel=1e-5)


@pytest.mark.parametrize("sample", [(2, 3, 4, 2, 12), (0, 0, 7, 1), (50, 10, 300)])
def test_mle_solves_score_equation(sample):
    a = mle(sample).alpha_hat
    h = 1e-6 * a
    score = (profile_loglik(sample, a + h) - profile_loglik(sample, a - h)) / (2 * h)
    assert abs(score) < 1e-4 * max(1.0, abs(profile_loglik(sample, a)))


def _mp_profile_loglik(k, alpha):
    alpha = mpmath.mpf(alpha)
    mu = mpmath.mpf(sum(k)) / len(k)
    r = 1 / alpha
    return sum(
        mpmath.loggamma(x + r) - mpmath.loggamma(r) - mpmath.loggamma(x + 1)
        - r * mpmath.log(1 + alpha * mu) + x * mpmath.log(alpha * mu / (1 + alpha * mu))
        for x in k
    )


@pytest.mark.parametrize("sample", [(2, 3, 4, 5, 8), (2, 3, 4, 5, 9), (1, 9), (0, 0, 0, 4)])
def test_score_at_zero_matches_finite_difference(sample):
    mpmath.mp.dps = 60
    h = mpmath.mpf("1e-12")
    fd = (_mp_profile_loglik(sample, 2 * h) - _mp_profile_loglik(sample, h)) / h
    assert profile_score_at_zero(sample) == pytest.approx(float(fd), abs=1e-8)


def test_truncation_rule():
    assert mle((5, 5, 5)).truncated
    assert mle((2, 3, 4, 5, 8)).truncated
    assert not mle((2, 3, 4, 5, 9)).truncated


def test_mle_errors():
    with pytest.raises(DegenerateDataError):
        mle((0, 0, 0))
    with pytest.raises(ValidationError):
        mle((4,))
    with pytest.raises(ValidationError):
        mle(CountVector([1, 2], [1.0, 2.0]))


def test_mle_batch_all_zero_row_not_truncated():
    b = mle_batch(np.array([[0, 0, 0], [2, 3, 40]]))
    assert b.alpha[0] == 0 and not b.truncated[0]
    assert b.alpha[1] > 0


@pytest.mark.parametrize("sample", [(2, 3, 4, 5, 8), (2, 3, 4, 2, 12), (300, 2, 40, 9), (0, 0, 3)])
def test_marginal_mle_matches_grid_oracle(sample):
    k = np.asarray(sample, float)
    ref = oracle_argmax(lambda a: float(marginal_loglik(k, a, 0.01)))
    est = marginal_mle(sample)
    assert est.alpha_hat == pytest.approx(ref, rel=1e-5)
    h = 1e-6 * ref
    score = (marginal_loglik(k, ref + h) - marginal_loglik(k, ref - h)) / (2 * h)
    assert abs(score) < 1e-3


def test_marginal_mle_strictly_positive(rng):
    k = rng.poisson(3.0, size=(500, 4))
    k = k[k.sum(axis=1) > 0]
    a = marginal_mle_batch(k).alpha
    assert np.all(a > 0)


@pytest.mark.parametrize("sample", [(5, 5, 5), (0, 1), (4,)])
def test_marginal_mle_boundary_when_likelihood_decreases(sample):
    k = np.asarray(sample, float)
    a = np.logspace(-6, 1, 40)
    assert np.all(np.diff(marginal_loglik(np.broadcast_to(k, (40, k.size)), a)) < 0)
    assert marginal_mle(sample).alpha_hat == pytest.approx(ALPHA_MIN)


def test_marginal_single_observation_hits_lower_bound():
    # for J = 1 the marginal likelihood decreases in alpha
    a = np.logspace(-6, 2, 50)
    vals = marginal_loglik(np.full((50, 1), 4.0), a)
    assert np.all(np.diff(vals) < 0)
    assert marginal_mle((4,)).alpha_hat == pytest.approx(ALPHA_MIN)


def test_marginal_a_mu_parameter():
    k = (2, 3, 4, 2, 12)
    assert marginal_mle(k, PriorConfig(0.5)).alpha_hat != marginal_mle(k).alpha_hat


def test_quasi_likelihood_values():
    est = quasi_likelihood((2, 3, 4, 5, 8))
    assert est.alpha_hat == pytest.approx(0.046488, abs=1e-6)
    # sample variance equal to the mean
    assert quasi_likelihood((1, 3)).alpha_hat == 0.0
    with pytest.raises(DegenerateDataError):
        quasi_likelihood((0, 0))


def _gamma_shape_bisection(x):
    s = np.log(x.mean()) - np.log(x).mean()
    u = optimize.bisect(lambda u: np.log(u) - digamma(u) - s, 1e-8, 1e8, xtol=1e-14, maxiter=500)
    return u, u / x.mean()


@pytest.mark.parametrize("shape,rate", [(0.437, 1.568), (3.0, 0.2), (0.05, 10.0)])
def test_gamma_mle_matches_bisection(shape, rate):
    x = np.random.default_rng(1).gamma(shape, 1.0 / rate, size=400)
    x = np.maximum(x, 1e-300)
    u, v = _gamma_shape_bisection(x)
    got = fit_gamma_mle(x)
    assert got.u == pytest.approx(u, rel=1e-8)
    assert got.v == pytest.approx(v, rel=1e-8)


def test_gamma_mle_recovers_truth():
    x = np.random.default_rng(2).gamma(0.437, 1 / 1.568, size=200_000)
    got = fit_gamma_mle(x)
    assert got.u == pytest.approx(0.437, rel=0.02)
    assert got.v == pytest.approx(1.568, rel=0.03)


def test_gamma_mle_errors():
    with pytest.raises(ValidationError):
        fit_gamma_mle([1.0])
    with pytest.raises(ValidationError):
        fit_gamma_mle([1.0, -1.0])
    with pytest.raises(DispersionDegenerateError):
        fit_gamma_mle([0.3, 0.3, 0.3])


def test_gamma_hyper_validation():
    assert GammaHyper(2.0, 4.0).mean == 0.5
    with pytest.raises(ValueError):
        GammaHyper(0.0, 1.0)


def test_dispersion_estimator_sklearn_api():
    est = DispersionEstimator(method="mle")
    assert clone(est).get_params() == {"method": "mle", "a_mu": 0.01}
    X = np.array([[2, 2, 0], [3, 3, 0], [4, 4, 0], [5, 2, 0], [8, 12, 0]])
    est.fit(X)
    assert est.alpha_.shape == (3,)
    assert est.alpha_[0] == 0 and est.truncated_[0]
    assert est.alpha_[1] == pytest.approx(0.329, abs=1e-3)
    assert np.isnan(est.alpha_[2])
    m = DispersionEstimator().set_params(method="marginal").fit(X)
    assert np.all(m.alpha_[:2] > 0)
    with pytest.raises(ValueError):
        DispersionEstimator(method="bogus").fit(X)
    with pytest.raises(ValueError):
        DispersionEstimator().fit(-X)
