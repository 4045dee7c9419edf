"""Exact, penalty-free reference solutions from a known covariance."""

from dataclasses import dataclass

import numpy as np

from .covariance import JointCovariance, estimate_joint, _values
from .errors import DimensionError, SingularityError


@dataclass
class TrueSolution:
    rhos: np.ndarray
    a_vectors: np.ndarray  # (K, p), a_i' Sxx a_j = delta_ij
    b_vectors: np.ndarray  # (K, q)
    rhos_b: np.ndarray = None  # the same values from the b-side eigenproblem


def _inv_sqrt(block, name):
    vals, vecs = np.linalg.eigh(0.5 * (block + block.T))
    top = max(vals[-1], 0.0)
    if vals[0] <= 1e-12 * top or top == 0.0:
        raise SingularityError(name, float(vals[0]))
    return (vecs / np.sqrt(vals)) @ vecs.T, (vecs * np.sqrt(vals)) @ vecs.T


def _sorted_eig(sym):
    vals, vecs = np.linalg.eigh(0.5 * (sym + sym.T))
    order = np.argsort(-vals, kind="stable")
    return np.clip(vals[order], 0.0, None), vecs[:, order]


def _fix_sign(v):
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def true_directions(sigma: JointCovariance, orders=None):
    """Canonical associations and directions of a known covariance.

    Uses the whitened symmetric form Sxx^-1/2 Sxy Syy^-1 Syx Sxx^-1/2, whose
    eigenvalues are the squared associations. The b-directions are mapped
    from a through Syy^-1 Syx a and scaled to b' Syy b = 1; when an
    association vanishes they come from the b-side eigenproblem instead.
    """
    p, q = sigma.p, sigma.q
    k = min(p, q) if orders is None else orders
    if not 1 <= k <= min(p, q):
        raise DimensionError(f"orders must lie in 1..{min(p, q)}")
    wx, sx = _inv_sqrt(sigma.cxx, "xx")
    wy, sy = _inv_sqrt(sigma.cyy, "yy")
    kx = wx @ sigma.cxy @ wy
    vals_a, vecs_a = _sorted_eig(kx @ kx.T)
    vals_b, vecs_b = _sorted_eig(kx.T @ kx)
    rhos = np.sqrt(vals_a[:k])
    a_vecs = np.empty((k, p))
    b_vecs = np.empty((k, q))
    syy_inv = wy @ wy
    for i in range(k):
        a = _fix_sign(wx @ vecs_a[:, i])
        a_vecs[i] = a
        if rhos[i] > 1e-10 * max(rhos[0], 1e-300):
            b = syy_inv @ (sigma.cxy.T @ a)
            b = b / np.sqrt(b @ sigma.cyy @ b)
        else:
            b = wy @ vecs_b[:, i]
            if a @ sigma.cxy @ b < 0:
                b = -b
        b_vecs[i] = b
    return TrueSolution(rhos, a_vecs, b_vecs, np.sqrt(vals_b[:k]))


def classical_cca(data_x, data_y, orders=None):
    """Sample-covariance CCA."""
    x = _values(data_x)
    y = _values(data_y)
    n, p, q = x.shape[0], x.shape[1], y.shape[1]
    if n <= p + q:
        raise DimensionError(f"classical CCA needs n > p + q, got n={n}, p+q={p + q}")
    return true_directions(estimate_joint(x, y, "pearson"), orders)
