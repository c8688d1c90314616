"""Genome-wide steps: prior proportion of DE genes, posterior probabilities
and expected false discovery proportion."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from ..errors import InvalidParameterError, ValidationError

log = logging.getLogger(__name__)


def estimate_pi0(log_bfs):
    """Estimate ``(pi0, pi1)`` from Bayes factors.

    Sort BF10 ascending and take ``d0`` as the largest prefix length whose
    mean Bayes factor is below one; ``pi0 = d0 / n``.  Works on log Bayes
    factors throughout.
    """
    lb = np.sort(np.asarray(log_bfs, dtype=np.float64).ravel())
    if lb.size == 0:
        raise ValidationError("need at least one Bayes factor")
    if np.any(np.isnan(lb)):
        raise ValidationError("Bayes factors contain NaN")
    d = np.arange(1, lb.size + 1)
    log_prefix_mean = np.logaddexp.accumulate(lb) - np.log(d)
    below = np.flatnonzero(log_prefix_mean < 0)
    d0 = int(below[-1] + 1) if below.size else 0
    pi0 = d0 / lb.size
    return pi0, 1.0 - pi0


def clamp_pi1(pi1, n_genes):
    """Keep pi1 inside ``[1/n, 1 - 1/n]`` so posterior probabilities stay proper."""
    if n_genes < 3:
        return float(np.clip(pi1, 1e-3, 1 - 1e-3))
    return float(np.clip(pi1, 1.0 / n_genes, 1.0 - 1.0 / n_genes))


def posterior_probs(log_bfs, pi1):
    """``P(H1 | k) = pi1 BF / (1 - pi1 + pi1 BF)`` for each gene."""
    if not 0 < pi1 < 1:
        raise InvalidParameterError(f"pi1 must lie in (0, 1), got {pi1}")
    return expit(logit(pi1) + np.asarray(log_bfs, dtype=np.float64))


def posterior_null_probs(log_bfs, pi1):
    """``1 - P(H1 | k)`` without cancellation for strongly DE genes."""
    if not 0 < pi1 < 1:
        raise InvalidParameterError(f"pi1 must lie in (0, 1), got {pi1}")
    return expit(-(logit(pi1) + np.asarray(log_bfs, dtype=np.float64)))


def ranking(log_bfs):
    """Indices by descending evidence for H1, ties broken by index.

    Ordering by log BF is the same as ordering by posterior probability for
    any fixed pi1, without the ties that saturation at 1.0 would create.
    """
    lb = np.asarray(log_bfs, dtype=np.float64)
    return np.lexsort((np.arange(lb.size), -lb))


def expected_fdp_curve(null_probs_sorted):
    """Cumulative mean of ``1 - P(H1 | k)`` along a ranking."""
    q = np.asarray(null_probs_sorted, dtype=np.float64)
    return np.cumsum(q) / np.arange(1, q.size + 1)


@dataclass
class Selection:
    order: np.ndarray
    curve: np.ndarray
    n_selected: int
    expected_fdp: float
    gene_ids: list = field(default_factory=list)
    diagnostic: str = None

    @property
    def selected(self):
        return self.order[: self.n_selected]


def select_genes(results, n_sel=None, max_expected_fdp=None, pi1=None):
    """Choose the top genes by posterior probability.

    ``results`` is a sequence of :class:`GeneTestResult`; untestable genes are
    never selected.  Give exactly one of ``n_sel`` (fixed list length) or
    ``max_expected_fdp`` (longest prefix whose expected FDP stays at or
    below the target).  When ``pi1`` is given the null probabilities are
    recomputed from the log Bayes factors for full precision.
    """
    if not results:
        raise ValidationError("no results to select from")
    if (n_sel is None) == (max_expected_fdp is None):
        raise ValidationError("give exactly one of n_sel or max_expected_fdp")
    testable = np.array([r.testable for r in results])
    idx = np.flatnonzero(testable)
    lb = np.array([results[i].log_bf10 for i in idx])
    order = idx[ranking(lb)]
    if pi1 is not None:
        null = posterior_null_probs(np.array([results[i].log_bf10 for i in order]), pi1)
    else:
        null = 1.0 - np.array([results[i].post_prob_h1 for i in order])
    curve = expected_fdp_curve(null)
    diagnostic = None
    if n_sel is not None:
        if n_sel < 0:
            raise ValidationError("n_sel must be >= 0")
        n = min(int(n_sel), order.size)
    else:
        # the curve is nondecreasing up to rounding; take the longest valid prefix
        ok = np.flatnonzero(curve <= max_expected_fdp)
        n = int(ok[-1] + 1) if ok.size else 0
        if n == 0:
            diagnostic = (
                f"expected FDP target {max_expected_fdp} unattainable: "
                f"the top gene alone has expected FDP {curve[0] if curve.size else float('nan'):.4g}"
            )
            log.warning(diagnostic)
    efdp = float(curve[n - 1]) if n > 0 else 0.0
    return Selection(
        order=order,
        curve=curve,
        n_selected=n,
        expected_fdp=efdp,
        gene_ids=[results[i].gene_id for i in order[:n]],
        diagnostic=diagnostic,
    )
