"""Batched one-dimensional maximization on a log scale.

A coarse grid over ``log(x)`` brackets the maximizer of each problem in the
batch, then golden-section search narrows every bracket in lockstep.  The
objective is called with an array of abscissae (one per problem) and must
return one value per problem.
"""
from dataclasses import dataclass

import numpy as np

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0

LOWER = 1e-6
UPPER = 1e4


@dataclass
class MaxResult:
    x: np.ndarray
    fun: np.ndarray
    converged: np.ndarray
    iterations: int


def maximize_log_scale(fun, batch, lower=LOWER, upper=UPPER, *, grid_size=97, tol=1e-8, max_iter=200):
    """Maximize ``fun`` over ``[lower, upper]`` for ``batch`` problems at once.

    ``tol`` is the final bracket width in log(x).
    """
    grid = np.linspace(np.log(lower), np.log(upper), grid_size)
    values = np.empty((grid_size, batch))
    for i, g in enumerate(grid):
        values[i] = fun(np.full(batch, np.exp(g)))
    values = np.where(np.isnan(values), -np.inf, values)
    best = np.argmax(values, axis=0)
    cols = np.arange(batch)
    grid_best_x = grid[best]
    grid_best_f = values[best, cols]

    lo = grid[np.maximum(best - 1, 0)]
    hi = grid[np.minimum(best + 1, grid_size - 1)]
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1 = fun(np.exp(x1))
    f2 = fun(np.exp(x2))
    it = 0
    while it < max_iter and np.any(hi - lo > tol):
        it += 1
        # ties move the upper end so boundary maxima converge onto ``lower``
        left = ~(f1 < f2)
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + INV_PHI * (hi - lo))
        x1n = np.where(left, hi - INV_PHI * (hi - lo), x2)
        f2n = np.where(left, f1, np.nan)
        f1n = np.where(left, np.nan, f2)
        fresh = np.where(left, x1n, x2n)
        ff = fun(np.exp(fresh))
        f1 = np.where(left, ff, f1n)
        f2 = np.where(left, f2n, ff)
        x1, x2 = x1n, x2n

    xs = 0.5 * (lo + hi)
    fs = fun(np.exp(xs))
    fs = np.where(np.isnan(fs), -np.inf, fs)
    use_grid = grid_best_f > fs
    x = np.exp(np.where(use_grid, grid_best_x, xs))
    f = np.where(use_grid, grid_best_f, fs)
    return MaxResult(x=x, fun=f, converged=(hi - lo) <= tol, iterations=it)
