"""End-to-end differential expression test over a count matrix."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_abundances, check_counts, check_groups
from ..errors import ValidationError
from ..estimators import GAMMA_FIT_FLOOR, GammaHyper, fit_gamma_mle, marginal_mle_batch
from ..libnorm import CountMatrix, estimate_abundances
from ..nbcore import DEFAULT_A_MU, CountVector, PriorConfig
from .mcmc import gene_config, log_bf_mcmc
from .model import GeneTestResult, HypothesisModel, McmcConfig
from .quadrature import log_bf_quadrature
from .selection import clamp_pi1, estimate_pi0, posterior_probs, select_genes

log = logging.getLogger(__name__)

METHODS = ("auto", "quadrature", "mcmc")


def _pseudo_counts(counts, abundances):
    if np.all(abundances == 1.0):
        return counts
    return np.round(counts / abundances[None, :])


def _fit_gamma_to_marginal_mles(counts, a_mu, what):
    ok = counts.sum(axis=1) > 0
    if ok.sum() < 2:
        raise ValidationError(f"need at least 2 genes with non-zero counts to fit the {what} prior")
    alphas = marginal_mle_batch(counts[ok], a_mu).alpha
    return fit_gamma_mle(np.maximum(alphas, GAMMA_FIT_FLOOR))


def _require_groups(matrix):
    if matrix.group_sizes is None:
        raise ValidationError("the count matrix has no group assignment")


def fit_hyperparameters(matrix, abundances=None, cfg=PriorConfig(), control_group=1):
    """Empirical-Bayes gamma priors on overdispersion under H0 and H1.

    H0: a gamma MLE fitted to every gene's marginal MLE with both groups
    pooled.  H1: the same using only the control group's columns.  With
    non-unit abundances the marginal MLEs use ``round(k / s)``.
    """
    if abundances is None:
        abundances = matrix.abundances if matrix.abundances is not None else np.ones(matrix.n_samples)
    s = check_abundances(abundances, matrix.n_samples)
    if control_group not in (1, 2):
        raise ValidationError("control_group must be 1 or 2")
    _require_groups(matrix)
    pseudo = _pseudo_counts(matrix.counts, s)
    j1, _ = matrix.group_sizes
    control = pseudo[:, :j1] if control_group == 1 else pseudo[:, j1:]
    h0 = _fit_gamma_to_marginal_mles(pseudo, cfg.a_mu, "H0")
    h1 = _fit_gamma_to_marginal_mles(control, cfg.a_mu, "H1")
    return h0, h1


@dataclass
class DETestRun:
    results: list
    hyper_h0: GammaHyper
    hyper_h1: GammaHyper
    pi1_hat: float
    pi1: float
    abundances: np.ndarray
    group_sizes: tuple

    def select(self, n_sel=None, max_expected_fdp=None):
        return select_genes(self.results, n_sel=n_sel, max_expected_fdp=max_expected_fdp, pi1=self.pi1)

    @property
    def log_bfs(self):
        return np.array([r.log_bf10 for r in self.results])


def _group_means(counts, s, j1):
    ratio = counts / s[None, :]
    return ratio[:, :j1].mean(axis=1), ratio[:, j1:].mean(axis=1)


def run_de_test(
    matrix,
    abundances=None,
    cfg=PriorConfig(),
    mcmc=McmcConfig(),
    *,
    pi1=None,
    control_group=1,
    method="auto",
    threads=1,
    hypers=None,
):
    """Test every gene of ``matrix`` for differential expression.

    Genes with unit abundances use quadrature (``method="auto"``); any other
    abundances use the MCMC harmonic-mean estimator.  Each gene's chain is
    seeded from ``(mcmc.seed, gene index)`` so results do not depend on
    ``threads``.  ``pi1`` overrides the estimate from the Bayes factors.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}")
    _require_groups(matrix)
    if abundances is None:
        abundances = matrix.abundances if matrix.abundances is not None else np.ones(matrix.n_samples)
    s = check_abundances(abundances, matrix.n_samples)
    unit = bool(np.all(s == 1.0))
    if method == "quadrature" and not unit:
        raise ValidationError("quadrature needs unit abundances")
    use_mcmc = method == "mcmc" or (method == "auto" and not unit)
    h0, h1 = hypers if hypers is not None else fit_hyperparameters(matrix, s, cfg, control_group)
    model = HypothesisModel(h0, h1, cfg)
    split = matrix.group_sizes
    counts = matrix.counts
    testable = counts.sum(axis=1) > 0

    def one(i):
        data = CountVector(counts[i], s)
        if use_mcmc:
            return log_bf_mcmc(data, split, model, gene_config(mcmc, mcmc.seed, i))
        return log_bf_quadrature(data, split, model), None

    todo = np.flatnonzero(testable).tolist()
    if not todo:
        raise ValidationError("every gene has all-zero counts")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, todo))
    else:
        outs = [one(i) for i in todo]
    if (~testable).any():
        log.info("%d genes with all-zero counts are untestable", int((~testable).sum()))

    log_bfs = np.array([o[0] for o in outs])
    _, pi1_hat = estimate_pi0(log_bfs)
    pi1_used = clamp_pi1(pi1_hat, len(todo)) if pi1 is None else float(pi1)
    probs = posterior_probs(log_bfs, pi1_used)
    mu1, mu2 = _group_means(counts, s, split[0])
    method_name = "mcmc" if use_mcmc else "quadrature"

    results = []
    by_gene = dict(zip(todo, range(len(todo))))
    for i, gid in enumerate(matrix.gene_ids):
        if i in by_gene:
            t = by_gene[i]
            results.append(
                GeneTestResult(gid, float(log_bfs[t]), float(probs[t]), float(mu1[i]), float(mu2[i]), method_name, outs[t][1])
            )
        else:
            results.append(GeneTestResult(gid, float("nan"), float("nan"), float(mu1[i]), float(mu2[i]), "untestable"))
    return DETestRun(results, h0, h1, float(pi1_hat), pi1_used, s, split)


class BayesianDETest(BaseEstimator):
    """Two-group Bayesian differential expression test.

    ``fit(X, y)`` takes a samples x genes count matrix and one group label
    per sample; the first label seen is group 1 (the control group by
    default).  A pandas DataFrame's column names become the gene ids.

    Parameters
    ----------
    a_mu : float
        Shape constant of the F prior on each gene mean.
    abundances : "estimate", None or array-like of shape (n_samples,)
        Library sizes.  ``"estimate"`` uses the median-of-ratios estimator,
        ``None`` sets every abundance to one.
    pi1 : float or None
        Prior probability of differential expression; estimated when None.
    method : {"auto", "quadrature", "mcmc"}
    max_expected_fdp : float
        Target used for ``selected_``.

    Attributes
    ----------
    log_bf_, posterior_prob_ : ndarray of shape (n_genes,)
        NaN for genes whose counts are all zero.
    selected_ : ndarray of bool
    hyper_h0_, hyper_h1_ : GammaHyper
    pi1_ : float
        Value used for the posterior probabilities.
    run_ : DETestRun
    """

    def __init__(
        self,
        a_mu=DEFAULT_A_MU,
        abundances="estimate",
        pi1=None,
        control_group=1,
        method="auto",
        n_iter=50_000,
        burn_in=5_000,
        thin=1,
        mu_kernel="f_proposal",
        rw_sd_scale=1.0,
        random_state=0,
        n_jobs=1,
        max_expected_fdp=0.05,
    ):
        self.a_mu = a_mu
        self.abundances = abundances
        self.pi1 = pi1
        self.control_group = control_group
        self.method = method
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.mu_kernel = mu_kernel
        self.rw_sd_scale = rw_sd_scale
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.max_expected_fdp = max_expected_fdp

    def fit(self, X, y):
        gene_ids = [str(c) for c in X.columns] if hasattr(X, "columns") else None
        counts = check_counts(X)
        order, sizes, labels = check_groups(y)
        if len(np.asarray(y).ravel()) != counts.shape[0]:
            raise ValidationError("y must have one label per sample (row of X)")
        n_genes = counts.shape[1]
        if gene_ids is None:
            gene_ids = [f"gene{i + 1}" for i in range(n_genes)]
        matrix = CountMatrix(gene_ids, counts[order].T, sizes)
        if isinstance(self.abundances, str):
            if self.abundances != "estimate":
                raise ValidationError(f"unknown abundances option {self.abundances!r}")
            s = estimate_abundances(matrix)
        elif self.abundances is None:
            s = np.ones(matrix.n_samples)
        else:
            s = check_abundances(self.abundances, matrix.n_samples)[order]
        seed = 0 if self.random_state is None else int(self.random_state)
        mcmc = McmcConfig(self.n_iter, self.burn_in, self.thin, seed, self.mu_kernel, self.rw_sd_scale)
        run = run_de_test(
            matrix, s, PriorConfig(self.a_mu), mcmc,
            pi1=self.pi1, control_group=self.control_group, method=self.method, threads=self.n_jobs,
        )
        self.run_ = run
        self.classes_ = np.array(labels)
        self.abundances_ = np.empty_like(s)
        self.abundances_[order] = s
        self.hyper_h0_, self.hyper_h1_ = run.hyper_h0, run.hyper_h1
        self.pi1_estimate_, self.pi1_ = run.pi1_hat, run.pi1
        self.log_bf_ = run.log_bfs
        self.posterior_prob_ = np.array([r.post_prob_h1 for r in run.results])
        self.mu1_ = np.array([r.mu1_hat for r in run.results])
        self.mu2_ = np.array([r.mu2_hat for r in run.results])
        self.gene_ids_ = list(gene_ids)
        self.n_features_in_ = n_genes
        self.selection_ = run.select(max_expected_fdp=self.max_expected_fdp)
        self.selected_ = np.zeros(n_genes, dtype=bool)
        self.selected_[self.selection_.selected] = True
        return self

    def select(self, n_sel=None, max_expected_fdp=None):
        check_is_fitted(self, "run_")
        return self.run_.select(n_sel=n_sel, max_expected_fdp=max_expected_fdp)
