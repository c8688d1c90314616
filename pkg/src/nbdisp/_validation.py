"""Input checks shared by the functional API and the estimator classes."""
import numbers

import numpy as np
from sklearn.utils import check_array

from .errors import InvalidParameterError, ValidationError


def check_counts(X, *, ensure_2d=True, name="counts"):
    """Return ``X`` as a float array of non-negative integer counts."""
    try:
        arr = check_array(
            X,
            dtype=np.float64,
            ensure_2d=ensure_2d,
            ensure_all_finite=True,
            input_name=name,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if np.any(arr < 0):
        raise ValidationError(f"{name} must be non-negative")
    if np.any(arr != np.round(arr)):
        raise ValidationError(f"{name} must be integers")
    return arr


def check_count_vector(counts):
    arr = np.asarray(counts, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValidationError("count vector is empty")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr != np.round(arr)):
        raise ValidationError("counts must be finite non-negative integers")
    return arr


def check_abundances(abundances, n):
    if abundances is None:
        return np.ones(n)
    s = np.asarray(abundances, dtype=np.float64).ravel()
    if s.shape != (n,):
        raise ValidationError(f"expected {n} abundances, got {s.size}")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise ValidationError("abundances must be finite and strictly positive")
    return s


def check_positive(value, name, *, allow_zero=False):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidParameterError(f"{name} must be a finite real, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidParameterError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_groups(y):
    """Split a label vector into two groups; the first label seen is group 1.

    Returns ``(order, labels)`` where ``order`` lists column indices with
    group 1 first and ``labels`` holds the two distinct labels.
    """
    y = np.asarray(y).ravel()
    labels = list(dict.fromkeys(y.tolist()))
    if len(labels) != 2:
        raise ValidationError(f"expected exactly 2 groups, got {len(labels)}: {labels}")
    g1 = np.flatnonzero(y == labels[0])
    g2 = np.flatnonzero(y == labels[1])
    return np.concatenate([g1, g2]), (len(g1), len(g2)), labels
