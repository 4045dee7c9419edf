"""Pairwise rank correlations.

Kendall's tau-b uses Knight's O(n log n) algorithm: sort the pairs by the
first variable (ties broken by the second), then count the discordant pairs
as the number of swaps a merge sort needs to order the second variable.
"""

import numpy as np
from numba import njit
from scipy.stats import rankdata


@njit(cache=True)
def _merge_count(y, buf, lo, mid, hi):
    i = lo
    j = mid
    k = lo
    swaps = 0
    while i < mid and j < hi:
        if y[j] < y[i]:
            buf[k] = y[j]
            swaps += mid - i
            j += 1
        else:
            buf[k] = y[i]
            i += 1
        k += 1
    while i < mid:
        buf[k] = y[i]
        i += 1
        k += 1
    while j < hi:
        buf[k] = y[j]
        j += 1
        k += 1
    for t in range(lo, hi):
        y[t] = buf[t]
    return swaps


@njit(cache=True)
def count_inversions(y):
    """Number of pairs i < j with y[i] > y[j]; sorts ``y`` in place."""
    n = y.shape[0]
    buf = np.empty_like(y)
    swaps = 0
    width = 1
    while width < n:
        lo = 0
        while lo < n - width:
            mid = lo + width
            hi = min(lo + 2 * width, n)
            swaps += _merge_count(y, buf, lo, mid, hi)
            lo += 2 * width
        width *= 2
    return swaps


@njit(cache=True)
def _tied_pairs(sorted_vals):
    n = sorted_vals.shape[0]
    total = 0
    run = 1
    for i in range(1, n):
        if sorted_vals[i] == sorted_vals[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


@njit(cache=True)
def _kendall_matrix(ranks):
    n, d = ranks.shape
    out = np.eye(d)
    n0 = n * (n - 1) // 2
    ties = np.empty(d, dtype=np.int64)
    for j in range(d):
        ties[j] = _tied_pairs(np.sort(ranks[:, j]))
    for j in range(d):
        for k in range(j + 1, d):
            denom = float(n0 - ties[j]) * float(n0 - ties[k])
            if denom <= 0.0:
                out[j, k] = np.nan
                out[k, j] = np.nan
                continue
            key = ranks[:, j] * n + ranks[:, k]
            order = np.argsort(key)
            joint = _tied_pairs(key[order])
            y = ranks[order, k].copy()
            swaps = count_inversions(y)
            s = n0 - ties[j] - ties[k] + joint - 2 * swaps
            tau = s / np.sqrt(denom)
            out[j, k] = tau
            out[k, j] = tau
    return out


def _dense_ranks(values):
    # integer ranks 0..m-1, equal values share a rank
    return (rankdata(values, method="dense", axis=0) - 1).astype(np.int64)


def kendall_tau_matrix(values):
    """Raw pairwise Kendall tau-b matrix; NaN where a column is constant."""
    values = np.asarray(values, dtype=float)
    return _kendall_matrix(np.ascontiguousarray(_dense_ranks(values)))


def kendall_tau(x, y):
    """Kendall's tau-b between two vectors."""
    return kendall_tau_matrix(np.column_stack([x, y]))[0, 1]


def spearman_matrix(values):
    """Raw pairwise Spearman matrix (average ranks); NaN for constant columns."""
    ranks = rankdata(np.asarray(values, dtype=float), method="average", axis=0)
    centered = ranks - ranks.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (centered.T @ centered) / np.outer(norms, norms)
    np.fill_diagonal(out, 1.0)
    return out
