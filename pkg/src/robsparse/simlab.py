"""Simulation scenarios, performance measures and replicated experiments.

Three covariance designs are available: ``low_dim`` (p = q = 10, two
diagonal associations 0.9 and 0.7), ``high_dim`` (p = q = 100 with two
correlated blocks of ten variables) and ``runtime`` (p = 10, growing q,
equicorrelated 0.8 blocks). Data are drawn from N(0, S) or t3(0, S), where
S is taken as the scale matrix of the t distribution, and contamination
replaces a fraction of the rows by draws from N(c_s * 1, S).
"""

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .covariance import DataMatrix, JointCovariance, _values, estimate_joint
from .errors import DimensionError, DomainError
from .optimizer import FitResult, OptimizerSettings, fit
from .oracle import TrueSolution, true_directions
from .problem import PenaltyConfig, elastic_net

log = logging.getLogger(__name__)

SETTINGS = ("low_dim", "high_dim", "runtime")
DISTRIBUTIONS = ("normal", "t3")


@dataclass
class ScenarioConfig:
    setting: str = "low_dim"
    n: Optional[int] = None  # defaults: 100 (low_dim, runtime), 50 (high_dim)
    contamination_rate: float = 0.0
    contamination_shift: float = 0.0
    distribution: str = "normal"
    seed: int = 0
    replicates: int = 1
    q: Optional[int] = None  # only for the runtime setting

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise DomainError(f"unknown setting {self.setting!r}; valid settings: {', '.join(SETTINGS)}")
        if self.distribution not in DISTRIBUTIONS:
            raise DomainError(f"unknown distribution {self.distribution!r}; use one of {DISTRIBUTIONS}")
        if not 0.0 <= self.contamination_rate <= 0.5:
            raise DomainError(f"contamination rate must lie in [0, 0.5], got {self.contamination_rate}")
        if self.contamination_shift < 0:
            raise DomainError("contamination shift must be nonnegative")
        if self.replicates < 1:
            raise DomainError("need at least one replicate")
        if self.setting == "runtime":
            if self.q is None or self.q < 10:
                raise DomainError("the runtime setting needs q >= 10")
        elif self.q is not None:
            raise DomainError("q is only used by the runtime setting")
        if self.n is None:
            self.n = 50 if self.setting == "high_dim" else 100
        if self.n < 2:
            raise DomainError("need n >= 2")


@dataclass
class MetricsReport:
    replicate: int
    theta_a: np.ndarray  # radians per order
    theta_b: np.ndarray
    tpr: np.ndarray  # (orders, 2): columns are the a side and the b side
    tnr: np.ndarray
    association: np.ndarray
    runtime_seconds: float
    converged: list = field(default_factory=list)
    nonzeros: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


def _equicorrelated(dim, rho):
    m = np.full((dim, dim), rho)
    np.fill_diagonal(m, 1.0)
    return m


def build_sigma(setting="low_dim", q=None):
    """True joint covariance of a design and its exact solution."""
    if setting == "low_dim":
        cxy = np.zeros((10, 10))
        cxy[0, 0] = 0.9
        cxy[1, 1] = 0.7
        sigma = JointCovariance(np.eye(10), np.eye(10), cxy)
        orders = 2
    elif setting == "high_dim":
        cxx = np.eye(100)
        cxx[:10, :10] = _equicorrelated(10, 0.9)
        cxx[10:20, 10:20] = _equicorrelated(10, 0.7)
        cxy = np.zeros((100, 100))
        cxy[:10, :10] = 0.9
        cxy[10:20, 10:20] = 0.5
        sigma = JointCovariance(cxx, cxx.copy(), cxy)
        orders = 2
    elif setting == "runtime":
        if q is None or q < 10:
            raise DomainError("the runtime setting needs q >= 10")
        cyy = np.eye(q)
        cyy[:10, :10] = _equicorrelated(10, 0.8)
        cxy = np.zeros((10, q))
        cxy[:, :10] = 0.8
        sigma = JointCovariance(_equicorrelated(10, 0.8), cyy, cxy)
        orders = 1
    else:
        raise DomainError(f"unknown setting {setting!r}; valid settings: {', '.join(SETTINGS)}")
    return sigma, true_directions(sigma, orders)


def _split(values, p, names=None):
    if names is None:
        return DataMatrix(values[:, :p]), DataMatrix(values[:, p:])
    return DataMatrix(values[:, :p], names[:p]), DataMatrix(values[:, p:], names[p:])


def sample(sigma: JointCovariance, n, distribution="normal", seed=0):
    """Draw n observations of (x, y); returns the pair of data matrices.

    ``seed`` may be an int or a numpy Generator.
    """
    if distribution not in DISTRIBUTIONS:
        raise DomainError(f"unknown distribution {distribution!r}")
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    full = sigma.full
    try:
        chol = np.linalg.cholesky(full)
    except np.linalg.LinAlgError as exc:
        raise DomainError("covariance is not positive definite; cannot factorize") from exc
    z = rng.standard_normal((n, full.shape[0])) @ chol.T
    if distribution == "t3":
        z *= np.sqrt(3.0 / rng.chisquare(3.0, size=n))[:, None]
    if n < 2:
        # a single row cannot form a DataMatrix; hand back raw arrays
        return z[:, : sigma.p], z[:, sigma.p :]
    return _split(z, sigma.p)


def contaminate(data, rate, shift, sigma: JointCovariance, seed=0, return_rows=False):
    """Replace floor(rate * n) random rows by draws from N(shift * 1, sigma)."""
    if not 0.0 <= rate <= 0.5:
        raise DomainError(f"contamination rate must lie in [0, 0.5], got {rate}")
    x, y = (_values(d) for d in data)
    if x.shape[0] != y.shape[0]:
        raise DimensionError("x and y must have the same number of rows")
    n, p = x.shape
    rng = np.random.default_rng(seed)
    m = int(np.floor(rate * n + 1e-9))
    joint = np.hstack((x, y))
    rows = np.sort(rng.choice(n, size=m, replace=False)) if m else np.zeros(0, dtype=int)
    if m:
        chol = np.linalg.cholesky(sigma.full)
        joint[rows] = shift + rng.standard_normal((m, joint.shape[1])) @ chol.T
    out = _split(joint, p)
    return (out, rows) if return_rows else out


def angle(true_v, est_v):
    """Angle between two directions with the sign folded out, in [0, pi/2]."""
    u = np.asarray(true_v, dtype=float).ravel()
    v = np.asarray(est_v, dtype=float).ravel()
    if u.shape != v.shape:
        raise DimensionError("vectors must have equal length")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("the angle to a zero vector is undefined")
    return float(np.arccos(min(1.0, abs(u @ v) / (nu * nv))))


def sparsity_rates(true_v, est_v, zero_tol=0.0):
    """(TPR, TNR) of the estimated support; an empty class counts as rate 1."""
    t = np.asarray(true_v, dtype=float).ravel()
    e = np.asarray(est_v, dtype=float).ravel()
    if t.shape != e.shape:
        raise DimensionError("vectors must have equal length")
    true_nz = t != 0
    est_nz = np.abs(e) > zero_tol
    n_pos, n_neg = true_nz.sum(), (~true_nz).sum()
    tpr = (true_nz & est_nz).sum() / n_pos if n_pos else 1.0
    tnr = (~true_nz & ~est_nz).sum() / n_neg if n_neg else 1.0
    return float(tpr), float(tnr)


def residual_score(a_list, b_list, test_x, test_y, trim=0.0):
    """Mean squared out-of-sample residual (a'x_j - b'y_j)^2.

    ``test_x``/``test_y`` are either one test set shared by all direction
    pairs or a list with one test set per pair (as in cross-validation). A
    positive ``trim`` drops that fraction of the largest squared residuals.
    """
    if not 0.0 <= trim < 1.0:
        raise DomainError("trim must lie in [0, 1)")
    a_list = [np.asarray(a, float).ravel() for a in a_list]
    b_list = [np.asarray(b, float).ravel() for b in b_list]
    if not a_list or len(a_list) != len(b_list):
        raise DimensionError("need matching, nonempty lists of directions")
    per_pair = isinstance(test_x, (list, tuple))
    if per_pair and (len(test_x) != len(a_list) or len(test_y) != len(a_list)):
        raise DimensionError("need one test set per direction pair")
    sq = []
    for i, (a, b) in enumerate(zip(a_list, b_list)):
        tx = np.atleast_2d(np.asarray(test_x[i] if per_pair else _values(test_x), float))
        ty = np.atleast_2d(np.asarray(test_y[i] if per_pair else _values(test_y), float))
        if tx.shape[0] == 0 or tx.shape[0] != ty.shape[0]:
            raise DimensionError("test set is empty or misaligned")
        sq.append((tx @ a - ty @ b) ** 2)
    sq = np.sort(np.concatenate(sq))
    drop = int(np.floor(trim * sq.size + 1e-9))
    kept = sq[: sq.size - drop]
    return float(kept.mean())


def known_penalties(cov: JointCovariance, truth: TrueSolution, orders, alpha=1.0, standardize=False):
    """Penalty bounds implied by the true directions.

    The true directions are rescaled to unit variance under the covariance
    that is handed to the optimizer, so the bound matches the scale at which
    the variance constraint is active. With ``standardize`` the bounds refer
    to coefficients of standardized variables, as used by
    ``fit(..., standardize=True)``.
    """
    sx, sy = cov.scales() if standardize else (np.ones(cov.p), np.ones(cov.q))
    out = []
    for k in range(orders):
        a, b = truth.a_vectors[k], truth.b_vectors[k]
        sa, sb = a @ cov.cxx @ a, b @ cov.cyy @ b
        a = sx * (a / np.sqrt(sa) if sa > 0 else a)
        b = sy * (b / np.sqrt(sb) if sb > 0 else b)
        out.append(
            (
                PenaltyConfig(alpha, elastic_net(a, PenaltyConfig(alpha, 1.0))),
                PenaltyConfig(alpha, elastic_net(b, PenaltyConfig(alpha, 1.0))),
            )
        )
    return out


def replicate_data(config: ScenarioConfig, index, sigma=None):
    """Data of one replicate; the stream depends only on (seed, index)."""
    if sigma is None:
        sigma, _ = build_sigma(config.setting, config.q)
    seq = np.random.SeedSequence(config.seed, spawn_key=(index,))
    gen_seed, cont_seed = seq.spawn(2)
    data = sample(sigma, config.n, config.distribution, np.random.default_rng(gen_seed))
    if config.contamination_rate > 0:
        data = contaminate(data, config.contamination_rate, config.contamination_shift, sigma,
                           np.random.default_rng(cont_seed))
    return data


def evaluate(result: FitResult, truth: TrueSolution, zero_tol=0.0):
    """Angles, sparsity rates and associations of a fit against the truth."""
    k = len(result.directions)
    th_a, th_b = np.empty(k), np.empty(k)
    tpr, tnr = np.empty((k, 2)), np.empty((k, 2))
    for i, pair in enumerate(result.directions):
        th_a[i] = angle(truth.a_vectors[i], pair.a)
        th_b[i] = angle(truth.b_vectors[i], pair.b)
        tpr[i, 0], tnr[i, 0] = sparsity_rates(truth.a_vectors[i], pair.a, zero_tol)
        tpr[i, 1], tnr[i, 1] = sparsity_rates(truth.b_vectors[i], pair.b, zero_tol)
    return th_a, th_b, tpr, tnr


def _failed_report(index, orders, message, elapsed):
    nan = np.full(orders, np.nan)
    return MetricsReport(index, nan.copy(), nan.copy(), np.full((orders, 2), np.nan),
                         np.full((orders, 2), np.nan), nan.copy(), elapsed, error=message)


def run_replicate(config: ScenarioConfig, index, estimator="pearson", penalties="known", settings=None,
                  orders=None, init="orthogonal", alpha=1.0, repair_pd=True, zero_tol=0.0, standardize=True):
    """Generate, contaminate, estimate, fit and score one replicate."""
    sigma, truth = build_sigma(config.setting, config.q)
    orders = orders or len(truth.rhos)
    settings = settings or OptimizerSettings()
    t0 = time.perf_counter()
    try:
        x, y = replicate_data(config, index, sigma)
        cov = estimate_joint(x, y, estimator, repair_pd=repair_pd)
        if isinstance(penalties, str):
            if penalties != "known":
                raise DomainError(f"unknown penalty mode {penalties!r}")
            pens = known_penalties(cov, truth, orders, alpha, standardize)
            result = fit(cov, orders, pens, settings, init, standardize=standardize)
        elif callable(penalties):
            # a tuner: (cov, orders, settings, init, standardize) -> FitResult
            result = penalties(cov, orders, settings, init, standardize)
        else:
            result = fit(cov, orders, penalties, settings, init, standardize=standardize)
    except Exception as exc:  # recorded, not fatal
        log.warning("replicate %d failed: %s", index, exc)
        return _failed_report(index, orders, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
    elapsed = time.perf_counter() - t0
    th_a, th_b, tpr, tnr = evaluate(result, truth, zero_tol)
    return MetricsReport(
        index, th_a, th_b, tpr, tnr, np.array(result.associations), elapsed,
        converged=list(result.converged), nonzeros=list(result.nonzero_counts),
    )


def run_scenario(config: ScenarioConfig, estimator="pearson", penalties="known", settings=None, orders=None,
                 init="orthogonal", alpha=1.0, repair_pd=True, threads=1, zero_tol=0.0, standardize=True):
    """Run all replicates of a scenario.

    ``penalties`` is ``"known"`` (bounds derived from the true directions),
    a fixed ``(pen_a, pen_b)`` pair or per-order list, or a tuner callable
    ``(cov, orders, settings, init, standardize) -> FitResult``. With
    ``standardize`` (the default) penalties act on standardized coefficients. Replicates are seeded
    from (config.seed, replicate index) and so give the same results in any
    order or thread count.
    """
    def one(i):
        return run_replicate(config, i, estimator, penalties, settings, orders, init, alpha, repair_pd, zero_tol,
                             standardize)

    idx = range(config.replicates)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, idx))
    return [one(i) for i in idx]


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def summarize(reports):
    """Mean and standard error of each measure per order."""
    ok = [r for r in reports if not r.failed]
    out = {"replicates": len(reports), "failed": len(reports) - len(ok), "orders": []}
    if not ok:
        return out
    for k in range(len(ok[0].theta_a)):
        entry = {"order": k + 1}
        cols = {
            "theta_a": [r.theta_a[k] for r in ok],
            "theta_b": [r.theta_b[k] for r in ok],
            "tpr_a": [r.tpr[k, 0] for r in ok],
            "tpr_b": [r.tpr[k, 1] for r in ok],
            "tnr_a": [r.tnr[k, 0] for r in ok],
            "tnr_b": [r.tnr[k, 1] for r in ok],
            "association": [r.association[k] for r in ok],
        }
        for name, vals in cols.items():
            entry[name], entry[name + "_se"] = _mean_se(vals)
        entry["converged_fraction"] = float(np.mean([r.converged[k] for r in ok]))
        out["orders"].append(entry)
    out["runtime_seconds"], out["runtime_seconds_se"] = _mean_se([r.runtime_seconds for r in ok])
    return out


CSV_COLUMNS = ("replicate", "order", "theta_a", "theta_b", "tpr_a", "tpr_b", "tnr_a", "tnr_b",
               "association", "nonzero_a", "nonzero_b", "converged", "runtime_seconds", "error")


def report_rows(reports):
    """One dict per replicate and order, keyed by :data:`CSV_COLUMNS`."""
    rows = []
    for r in reports:
        for k in range(len(r.theta_a)):
            nz = r.nonzeros[k] if k < len(r.nonzeros) else ("", "")
            rows.append({
                "replicate": r.replicate,
                "order": k + 1,
                "theta_a": r.theta_a[k],
                "theta_b": r.theta_b[k],
                "tpr_a": r.tpr[k, 0],
                "tpr_b": r.tpr[k, 1],
                "tnr_a": r.tnr[k, 0],
                "tnr_b": r.tnr[k, 1],
                "association": r.association[k],
                "nonzero_a": nz[0],
                "nonzero_b": nz[1],
                "converged": r.converged[k] if k < len(r.converged) else False,
                "runtime_seconds": r.runtime_seconds,
                "error": r.error or "",
            })
    return rows


def write_csv(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in report_rows(reports):
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_summary(summary, path, config: Optional[ScenarioConfig] = None, extra=None):
    payload = {"summary": summary}
    if config is not None:
        payload["scenario"] = asdict(config)
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
