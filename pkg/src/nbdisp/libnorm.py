"""Median-of-ratios library size estimation."""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_abundances, check_counts
from .errors import NormalizationInfeasibleError, ValidationError


@dataclass
class CountMatrix:
    """Genes x samples count table; the first ``group_sizes[0]`` columns are group 1.

    ``group_sizes`` may be None for steps that ignore groups (normalization,
    per-gene estimation).
    """

    gene_ids: list
    counts: np.ndarray
    group_sizes: tuple = None
    abundances: np.ndarray = None
    sample_names: list = field(default=None)

    def __post_init__(self):
        self.counts = check_counts(self.counts)
        self.gene_ids = [str(g) for g in self.gene_ids]
        n_genes, n_cols = self.counts.shape
        if len(self.gene_ids) != n_genes:
            raise ValidationError(f"{len(self.gene_ids)} gene ids for {n_genes} rows")
        if len(set(self.gene_ids)) != n_genes:
            seen, dup = set(), None
            for g in self.gene_ids:
                if g in seen:
                    dup = g
                    break
                seen.add(g)
            raise ValidationError(f"duplicate gene id {dup!r}")
        if self.group_sizes is not None:
            j1, j2 = (int(x) for x in self.group_sizes)
            if j1 < 1 or j2 < 1 or j1 + j2 != n_cols:
                raise ValidationError(f"group sizes {self.group_sizes} do not cover {n_cols} columns")
            self.group_sizes = (j1, j2)
        if self.abundances is not None:
            self.abundances = check_abundances(self.abundances, n_cols)
        if self.sample_names is None:
            self.sample_names = [f"S{j + 1}" for j in range(n_cols)]
        elif len(self.sample_names) != n_cols:
            raise ValidationError("sample_names length does not match the number of columns")

    @property
    def n_genes(self):
        return self.counts.shape[0]

    @property
    def n_samples(self):
        return self.counts.shape[1]


def _log_geo_means(counts):
    positive = np.all(counts > 0, axis=1)
    with np.errstate(divide="ignore"):
        logs = np.log(counts)
    return logs, positive, np.where(positive, logs.mean(axis=1), -np.inf)


def estimate_abundances(matrix):
    """Size factor per column: the median over genes of count / geometric mean.

    Only genes with strictly positive counts in every column take part.
    ``matrix`` is a :class:`CountMatrix` or a genes x samples array.
    """
    counts = matrix.counts if isinstance(matrix, CountMatrix) else check_counts(matrix)
    logs, positive, log_gm = _log_geo_means(counts)
    if not positive.any():
        raise NormalizationInfeasibleError("no gene has positive counts in every sample")
    log_ratios = logs[positive] - log_gm[positive, None]
    return np.exp(np.median(log_ratios, axis=0))


class MedianRatioNormalizer(TransformerMixin, BaseEstimator):
    """Library-size normalization as a scikit-learn transformer.

    ``fit`` learns per-gene geometric means from a samples x genes matrix;
    ``transform`` divides each sample by its size factor relative to that
    reference.  On the training data the size factors equal
    :func:`estimate_abundances` of the transposed matrix.

    Attributes
    ----------
    size_factors_ : ndarray of shape (n_samples,)
        Size factors of the training samples.
    log_geo_means_ : ndarray of shape (n_genes,)
    reference_mask_ : ndarray of bool, genes used in the median
    """

    def fit(self, X, y=None):
        counts = check_counts(X).T
        _, positive, log_gm = _log_geo_means(counts)
        if not positive.any():
            raise NormalizationInfeasibleError("no gene has positive counts in every sample")
        self.log_geo_means_ = log_gm
        self.reference_mask_ = positive
        self.n_features_in_ = counts.shape[0]
        self.size_factors_ = self._factors(counts.T)
        return self

    def _factors(self, X):
        sub = X[:, self.reference_mask_]
        with np.errstate(divide="ignore"):
            log_ratios = np.log(sub) - self.log_geo_means_[self.reference_mask_]
        return np.exp(np.median(log_ratios, axis=1))

    def size_factors(self, X):
        check_is_fitted(self, "log_geo_means_")
        X = check_counts(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} genes, got {X.shape[1]}")
        return self._factors(X)

    def transform(self, X):
        X = check_counts(X)
        return X / self.size_factors(X)[:, None]
