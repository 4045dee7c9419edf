"""Nearest positive definite matrix in the Frobenius norm.

Alternating projections with Dykstra's correction between the positive
semidefinite cone and the affine set of matrices sharing the input diagonal
(Higham, 2002). A final eigenvalue floor makes the result strictly positive
definite; the diagonal is restored afterwards by a congruence rescaling.
"""

import numpy as np

from .errors import ConvergenceError, DomainError


def _psd_projection(sym):
    vals, vecs = np.linalg.eigh(sym)
    return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def _symmetrize(m):
    return 0.5 * (m + m.T)


def nearest_pd(matrix, keep_diag=True, eig_floor=1e-8, tol=1e-10, max_iter=2000):
    """Return the nearest positive definite matrix to a symmetric input.

    Parameters
    ----------
    matrix : (d, d) array_like
        Symmetric input, e.g. a pairwise correlation or covariance estimate.
    keep_diag : bool
        Constrain the diagonal to stay equal to the input diagonal (unit
        diagonal for correlation matrices).
    eig_floor : float
        Eigenvalues are floored at ``eig_floor * max eigenvalue``.
    tol : float
        Relative change in the iterate at which the projections stop.
    max_iter : int
        Iteration cap; exceeding it raises :class:`ConvergenceError`.

    Matrices that already satisfy the floor are returned unchanged.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("nearest_pd needs a square matrix")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-8 * scale:
        raise DomainError("nearest_pd needs a symmetric matrix")
    a = _symmetrize(a)
    diag0 = np.diag(a).copy()
    if keep_diag and np.any(diag0 <= 0):
        raise DomainError("keep_diag requires a positive diagonal")

    vals = np.linalg.eigvalsh(a)
    # half the floor is tolerated so that repeated calls are exact no-ops
    if vals[0] >= 0.5 * eig_floor * max(vals[-1], 0.0) and vals[-1] > 0:
        return a

    x = a.copy()
    if keep_diag:
        correction = np.zeros_like(a)
        for it in range(max_iter):
            y = x
            r = y - correction
            x = _psd_projection(r)
            correction = x - r
            x = _symmetrize(x)
            np.fill_diagonal(x, diag0)
            change = np.linalg.norm(y - x) / max(np.linalg.norm(y), 1e-300)
            if change <= tol:
                break
        else:
            raise ConvergenceError(
                f"nearest_pd did not converge in {max_iter} iterations",
                residual=change,
            )
    else:
        x = _symmetrize(_psd_projection(a))

    vals, vecs = np.linalg.eigh(x)
    floor = eig_floor * abs(vals[-1])
    if vals[0] < floor:
        vals = np.maximum(vals, floor)
        x = _symmetrize((vecs * vals) @ vecs.T)
        if keep_diag:
            rescale = np.sqrt(np.maximum(diag0, floor) / np.diag(x))
            x = rescale[:, None] * x * rescale[None, :]
    return x
