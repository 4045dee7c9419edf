"""Classical and robust estimates of the joint covariance of (x, y).

The optimizer only ever sees the three blocks Cxx, Cyy and Cxy of one
(p + q) x (p + q) estimate, so every estimator here works on the stacked
data matrix and :func:`estimate_joint` partitions the result.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.stats import norm

from .errors import AlignmentError, DegenerateScaleError, DimensionError, DomainError, ParseError
from .nearpd import nearest_pd
from .ranks import kendall_tau_matrix, spearman_matrix

MAD_CONSISTENCY = 1.4826
ESTIMATORS = ("pearson", "spearman", "kendall", "ogk")


@dataclass
class DataMatrix:
    """Observations in rows, variables in columns."""

    values: np.ndarray
    column_names: Optional[list] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionError("data must be a 2-d array")
        n, d = values.shape
        if n < 2 or d < 1:
            raise DimensionError(f"need at least 2 rows and 1 column, got {values.shape}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            r, c = bad[0]
            raise DomainError(f"non-finite value at row {r}, column {c}")
        if self.column_names is not None:
            if len(self.column_names) != d:
                raise DimensionError("column_names length does not match the data")
            self.column_names = [str(c) for c in self.column_names]
        self.values = values

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def names(self, prefix="v"):
        if self.column_names is not None:
            return list(self.column_names)
        return [f"{prefix}{i + 1}" for i in range(self.d)]


def _values(data):
    if isinstance(data, DataMatrix):
        return data.values
    return DataMatrix(data).values


@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    estimator: str
    pd_repaired: bool = False
    min_eigenvalue: float = field(default=float("nan"))
    degenerate_columns: tuple = ()

    def __post_init__(self):
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        if math.isnan(self.min_eigenvalue):
            self.min_eigenvalue = float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass(frozen=True)
class JointCovariance:
    """Blocks of a joint covariance of x (p variables) and y (q variables)."""

    cxx: np.ndarray
    cyy: np.ndarray
    cxy: np.ndarray
    estimate: Optional[CovarianceEstimate] = None

    def __post_init__(self):
        p, q = self.cxy.shape
        if self.cxx.shape != (p, p) or self.cyy.shape != (q, q):
            raise DimensionError(
                f"inconsistent blocks: cxx {self.cxx.shape}, cyy {self.cyy.shape}, "
                f"cxy {self.cxy.shape}"
            )

    @property
    def p(self):
        return self.cxy.shape[0]

    @property
    def q(self):
        return self.cxy.shape[1]

    @property
    def full(self):
        return np.block([[self.cxx, self.cxy], [self.cxy.T, self.cyy]])

    @classmethod
    def from_full(cls, matrix, p, estimate=None):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("joint covariance must be square")
        if not 0 < p < m.shape[0]:
            raise DimensionError(f"split p={p} invalid for dimension {m.shape[0]}")
        return cls(
            cxx=m[:p, :p].copy(), cyy=m[p:, p:].copy(), cxy=m[:p, p:].copy(), estimate=estimate
        )

    def scales(self):
        """Square roots of the diagonal; zero-variance variables get scale 1."""
        d = np.sqrt(np.clip(np.concatenate((np.diag(self.cxx), np.diag(self.cyy))), 0.0, None))
        d[d == 0] = 1.0
        return d[: self.p], d[self.p :]

    def standardized(self):
        """The same estimate on the correlation scale, D^-1 C D^-1."""
        sx, sy = self.scales()
        return JointCovariance(
            self.cxx / np.outer(sx, sx), self.cyy / np.outer(sy, sy), self.cxy / np.outer(sx, sy), self.estimate
        )


def pearson_cov(data):
    """Unbiased sample covariance (divisor n - 1)."""
    x = _values(data)
    return CovarianceEstimate(np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1]), "pearson")


def mad(column, consistency=MAD_CONSISTENCY):
    """Median absolute deviation, scaled for consistency at the normal."""
    x = np.asarray(column, dtype=float).ravel()
    if x.size == 0:
        raise DimensionError("mad of an empty vector")
    return consistency * float(np.median(np.abs(x - np.median(x))))


def _column_mads(x):
    med = np.median(x, axis=0)
    return MAD_CONSISTENCY * np.median(np.abs(x - med), axis=0)


RANK_TRANSFORMS = ("consistent", "arcsin")


def rank_transform(raw, kind, mode="consistent"):
    """Map raw rank correlations onto the Pearson scale.

    ``mode="consistent"`` inverts the normal-theory relations
    r_S = 6/pi * arcsin(rho / 2) and tau = 2/pi * arcsin(rho), i.e. returns
    2 sin(pi r / 6) for Spearman and sin(pi r / 2) for Kendall, which is
    consistent for rho under normality. ``mode="arcsin"`` applies the forward
    maps 6/pi * arcsin(r / 2) and 2/pi * arcsin(r) to the raw coefficients
    instead; it is kept for reproduction experiments only.
    """
    r = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    if kind not in ("spearman", "kendall"):
        raise DomainError(f"unknown rank correlation {kind!r}")
    if mode == "consistent":
        return 2.0 * np.sin(np.pi * r / 6.0) if kind == "spearman" else np.sin(np.pi * r / 2.0)
    if mode == "arcsin":
        return 6.0 / np.pi * np.arcsin(r / 2.0) if kind == "spearman" else 2.0 / np.pi * np.arcsin(r)
    raise DomainError(f"unknown rank transform {mode!r}; choose from {RANK_TRANSFORMS}")


def rank_correlation(data, kind="spearman", return_degenerate=False, transform="consistent"):
    """Transformed Spearman or Kendall correlation matrix.

    See :func:`rank_transform` for the mapping. A constant column has
    correlation 0 with everything else; its index is reported via a warning.
    """
    x = _values(data)
    if kind == "spearman":
        raw = spearman_matrix(x)
    elif kind == "kendall":
        raw = kendall_tau_matrix(x)
    else:
        raise DomainError(f"unknown rank correlation {kind!r}")
    with np.errstate(invalid="ignore"):
        out = rank_transform(raw, kind, transform)
    degenerate = tuple(int(j) for j in np.flatnonzero(np.ptp(x, axis=0) == 0))
    if degenerate:
        warnings.warn(f"constant columns {list(degenerate)} get correlation 0", RuntimeWarning)
    out = np.nan_to_num(out, nan=0.0)
    np.fill_diagonal(out, 1.0)
    out = 0.5 * (out + out.T)
    if return_degenerate:
        return out, degenerate
    return out


def corr_to_cov(corr, scales):
    """``diag(scales) @ corr @ diag(scales)``."""
    corr = np.asarray(corr, dtype=float)
    s = np.asarray(scales, dtype=float)
    if np.any(s < 0):
        raise DomainError("scales must be nonnegative")
    if corr.shape != (s.size, s.size):
        raise DimensionError("scales do not match the correlation matrix")
    return s[:, None] * corr * s[None, :]


def _erho(b):
    # E[min(Z^2, b^2)] for standard normal Z
    return 2.0 * ((1.0 - b * b) * norm.cdf(b) - b * norm.pdf(b) + b * b) - 1.0


def tau_scale(x, c1=4.5, c2=3.0, axis=0):
    """Robust tau-scale of Yohai and Zamar, computed along ``axis``.

    Location is a weighted mean with weights (1 - (u / c1)^2)^2 on
    u = |x - med| / MAD; the scale truncates squared standardized residuals
    at c2^2 and is made consistent at the normal distribution.
    """
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    n = x.shape[0]
    med = np.median(x, axis=0)
    dev = np.abs(x - med)
    sigma0 = np.median(dev, axis=0)
    safe = np.where(sigma0 > 0, sigma0, 1.0)
    u = dev / (safe * c1)
    w = np.maximum(1.0 - u * u, 0.0) ** 2
    mu = (x * w).sum(axis=0) / w.sum(axis=0)
    z = (x - mu) / safe
    rho = np.minimum(z * z, c2 * c2)
    expected = _erho(c2 * norm.ppf(0.75))
    scale = sigma0 * np.sqrt(rho.sum(axis=0) / (n * expected))
    return np.where(sigma0 > 0, scale, 0.0)


def _gk_matrix(y, scale_fn):
    """Pairwise Gnanadesikan-Kettenring covariances of standardized columns."""
    d = y.shape[1]
    u = np.eye(d)
    for j in range(d - 1):
        plus = scale_fn(y[:, j : j + 1] + y[:, j + 1 :])
        minus = scale_fn(y[:, j : j + 1] - y[:, j + 1 :])
        u[j, j + 1 :] = (plus**2 - minus**2) / 4.0
        u[j + 1 :, j] = u[j, j + 1 :]
    return u


def ogk_cov(data, n_iter=2, c1=4.5, c2=3.0, names=None):
    """Orthogonalized Gnanadesikan-Kettenring covariance (raw, no reweighting).

    Each pass standardizes the current coordinates by their tau-scales,
    builds the pairwise GK matrix, and rotates onto its eigenvectors. The
    estimate is A diag(gamma) A' where A collects the back-transformations
    and gamma are squared tau-scales of the final coordinates, so it is
    positive semidefinite by construction.
    """
    x = _values(data)
    d = x.shape[1]

    def scale_fn(m):
        return tau_scale(m, c1=c1, c2=c2)

    z = x
    a = np.eye(d)
    for it in range(n_iter):
        s = scale_fn(z)
        zero = np.flatnonzero(s <= 0)
        if zero.size:
            j = int(zero[0])
            label = (names[j] if names is not None else j) if it == 0 else f"component {j}"
            raise DegenerateScaleError(label)
        y = z / s
        u = _gk_matrix(y, scale_fn)
        _, vecs = np.linalg.eigh(u)
        a = a @ (s[:, None] * vecs)
        z = y @ vecs
    gamma = scale_fn(z) ** 2
    return CovarianceEstimate((a * gamma) @ a.T, "ogk")


def estimate_joint(
    data_x,
    data_y,
    estimator: Union[str, Callable] = "pearson",
    repair_pd: bool = False,
    rank_transform: str = "consistent",
):
    """Estimate the joint covariance of stacked (x, y) and split it into blocks.

    ``estimator`` is one of ``pearson``, ``spearman``, ``kendall``, ``ogk`` or a
    callable mapping an (n, p + q) array to a (p + q, p + q) covariance matrix.
    Rank estimators are turned into covariances with MAD scales; when
    ``repair_pd`` is set, the correlation matrix is repaired before scaling.
    ``rank_transform`` selects the rank-to-Pearson mapping (see
    :func:`rank_transform`).
    """
    x = _values(data_x)
    y = _values(data_y)
    if x.shape[0] != y.shape[0]:
        raise AlignmentError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
    p = x.shape[1]
    z = np.hstack([x, y])
    degenerate = ()
    repaired = False

    if callable(estimator):
        matrix = np.asarray(estimator(z), dtype=float)
        tag = getattr(estimator, "__name__", "custom")
    elif estimator == "pearson":
        matrix, tag = pearson_cov(z).matrix, "pearson"
    elif estimator == "ogk":
        matrix, tag = ogk_cov(z).matrix, "ogk"
    elif estimator in ("spearman", "kendall"):
        corr, degenerate = rank_correlation(z, estimator, return_degenerate=True, transform=rank_transform)
        if repair_pd:
            fixed = nearest_pd(corr)
            repaired = not np.array_equal(fixed, corr)
            corr = fixed
        matrix, tag = corr_to_cov(corr, _column_mads(z)), estimator
    else:
        raise DomainError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")

    matrix = 0.5 * (matrix + matrix.T)
    if repair_pd and estimator not in ("spearman", "kendall"):
        # rank estimators were already repaired on the correlation scale
        fixed = nearest_pd(matrix, keep_diag=bool(np.all(np.diag(matrix) > 0)))
        repaired = not np.array_equal(fixed, matrix)
        matrix = fixed
    est = CovarianceEstimate(matrix, tag, pd_repaired=repaired, degenerate_columns=degenerate)
    return JointCovariance.from_full(est.matrix, p, estimate=est)


def read_csv(path, header: Optional[bool] = None) -> DataMatrix:
    """Read a numeric CSV file (rows are observations).

    The first row is treated as a header when ``header`` is True, or when
    ``header`` is None and any of its fields fails to parse as a number.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(f.strip() for f in row)]
    if not rows:
        raise ParseError(f"{path}: empty file")

    def is_number(tok):
        try:
            float(tok)
            return True
        except ValueError:
            return False

    names = None
    if header is None:
        header = not all(is_number(t) for t in rows[0])
    if header:
        names = [t.strip() for t in rows[0]]
        rows = rows[1:]
    width = len(names) if names else len(rows[0])
    values = np.empty((len(rows), width))
    offset = 2 if header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: line {i + offset} has {len(row)} fields, expected {width}")
        for j, tok in enumerate(row):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"{path}: line {i + offset}, column {j + 1}: not a number {tok!r}")
            if not math.isfinite(v):
                raise ParseError(f"{path}: line {i + offset}, column {j + 1}: non-finite value {tok!r}")
            values[i, j] = v
    try:
        return DataMatrix(values, names)
    except DimensionError as exc:
        raise ParseError(f"{path}: {exc}") from exc
