"""Selection of the sparsity bounds (c_a, c_b) by Bayesian optimization.

Each candidate pair of bounds is scored by the TPO criterion

    score = |rho| * (2 - alpha_a * nnz(a) / p - alpha_b * nnz(b) / q),

which trades the association against the density of the directions. A
Gaussian process with a squared-exponential kernel models the score over
the search box (in log coordinates) and expected improvement picks the next
candidate. Non-converged fits score 0 so the surrogate still learns from
them.
"""

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .covariance import JointCovariance
from .errors import ConditioningError, DimensionError, DomainError
from .optimizer import FitResult, OptimizerSettings, init_naive, solve_order
from .problem import DirectionPair, PenaltyConfig

LENGTH_SCALE_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)


def tpo_score(association, nonzero_a, p, nonzero_b, q, alpha_a=1.0, alpha_b=1.0):
    """|rho| * (2 - alpha_a * nonzero_a / p - alpha_b * nonzero_b / q)."""
    if not (0 <= nonzero_a <= p and 0 <= nonzero_b <= q):
        raise DomainError("nonzero counts must lie between 0 and the dimension")
    if p < 1 or q < 1:
        raise DomainError("dimensions must be positive")
    return abs(association) * (2.0 - alpha_a * nonzero_a / p - alpha_b * nonzero_b / q)


@dataclass(frozen=True)
class SearchSpace:
    ca_range: tuple
    cb_range: tuple
    alphas: tuple = (1.0, 1.0)
    budget: int = 30
    n0: Optional[int] = None  # defaults to max(5, budget // 5), capped at the budget
    seed: int = 0
    dims: tuple = (1, 1)  # (p, q) entering the density term of the score

    def __post_init__(self):
        for name, (lo, hi) in (("ca_range", self.ca_range), ("cb_range", self.cb_range)):
            if not 0 < lo < hi:
                raise DomainError(f"{name} must satisfy 0 < lower < upper, got {(lo, hi)}")
        if self.budget < 1:
            raise DomainError("budget must be at least 1")
        n0 = min(max(5, self.budget // 5), self.budget) if self.n0 is None else self.n0
        if not 1 <= n0 <= self.budget:
            raise DomainError(f"n0 must lie in 1..budget, got {n0}")
        object.__setattr__(self, "n0", n0)
        if not all(0.0 <= a <= 1.0 for a in self.alphas):
            raise DomainError("alphas must lie in [0, 1]")

    @classmethod
    def for_dims(cls, p, q, alphas=(1.0, 1.0), budget=30, n0=None, seed=0):
        """Search [0.1 sqrt(p), sqrt(p)] x [0.1 sqrt(q), sqrt(q)]."""
        lp, lq = math.sqrt(p), math.sqrt(q)
        return cls((0.1 * lp, lp), (0.1 * lq, lq), tuple(alphas), budget, n0, seed, (p, q))

    @classmethod
    def for_covariance(cls, cov: JointCovariance, alphas=(1.0, 1.0), budget=30, n0=None, seed=0):
        """Box [max(0.1 L, floor), L] on each side, with L = sqrt(dim) / min sd.

        Directions are kept at unit variance, and a unit-variance vector has
        penalty at least floor = 1 / max sd, so smaller bounds can never be
        met. On the correlation scale this is [1, sqrt(dim)].
        """
        ranges = []
        for dim, block in ((cov.p, cov.cxx), (cov.q, cov.cyy)):
            sd = np.sqrt(np.clip(np.diag(block), 1e-300, None))
            hi = math.sqrt(dim) / sd.min()
            lo = max(0.1 * hi, 1.0 / sd.max())
            ranges.append((lo, max(hi, 2.0 * lo)))
        return cls(ranges[0], ranges[1], tuple(alphas), budget, n0, seed, (cov.p, cov.q))

    @property
    def _log_bounds(self):
        return np.log(np.array([self.ca_range, self.cb_range], dtype=float))

    def from_unit(self, u):
        """Map points of the unit square to (c_a, c_b)."""
        lb = self._log_bounds
        return np.exp(lb[:, 0] + np.asarray(u, dtype=float) * (lb[:, 1] - lb[:, 0]))

    def to_unit(self, params):
        lb = self._log_bounds
        return (np.log(np.asarray(params, dtype=float)) - lb[:, 0]) / (lb[:, 1] - lb[:, 0])


@dataclass
class TrialRecord:
    params: tuple
    score: float
    association: float
    nonzeros: tuple
    converged: bool

    def __post_init__(self):
        if not np.isfinite(self.score):
            self.score, self.converged = 0.0, False
        if not self.converged:
            self.score = 0.0


def _se_kernel(x1, x2, length_scales, signal_var):
    d = (x1[:, None, :] - x2[None, :, :]) / length_scales
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _cholesky_jitter(k, signal_var, max_tries=6):
    jitter = 0.0
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(k + jitter * np.eye(k.shape[0])), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-12 * signal_var if jitter == 0.0 else jitter * 100.0
    raise ConditioningError(f"kernel matrix is not positive definite even with jitter {jitter:.1e}")


@dataclass
class GpSurrogate:
    """Gaussian-process regression with a squared-exponential kernel."""

    x: np.ndarray
    y: np.ndarray
    length_scales: np.ndarray
    signal_var: float = 1.0
    noise_var: float = 1e-6
    mean: float = 0.0
    jitter: float = field(default=0.0, init=False)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape[0] != self.y.size or self.y.size == 0:
            raise DimensionError("need at least one observation with matching x and y")
        self.length_scales = np.broadcast_to(np.asarray(self.length_scales, float), (self.x.shape[1],)).copy()
        if np.any(self.length_scales <= 0) or self.signal_var <= 0 or self.noise_var < 0:
            raise DomainError("length-scales and signal variance must be positive")
        k = _se_kernel(self.x, self.x, self.length_scales, self.signal_var)
        k[np.diag_indices_from(k)] += self.noise_var
        self._chol, self.jitter = _cholesky_jitter(k, self.signal_var)
        resid = self.y - self.mean
        self._weights = cho_solve((self._chol, True), resid)

    def log_marginal_likelihood(self):
        resid = self.y - self.mean
        return float(
            -0.5 * resid @ self._weights - np.log(np.diag(self._chol)).sum() - 0.5 * resid.size * np.log(2 * np.pi)
        )

    @classmethod
    def fit(cls, x, y, noise_var=1e-6, grid=LENGTH_SCALE_GRID):
        """Choose per-dimension length-scales by marginal likelihood on a grid.

        Candidate length-scales are the grid values times the spread of the
        inputs in each dimension. The prior mean is the sample mean and the
        signal variance the sample variance of the scores.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        span = np.ptp(x, axis=0)
        span[span == 0] = 1.0
        var = float(y.var())
        signal = var if var > 1e-12 else 1.0
        best = None
        for combo in itertools.product(grid, repeat=x.shape[1]):
            gp = cls(x, y, np.array(combo) * span, signal, noise_var, float(y.mean()))
            ll = gp.log_marginal_likelihood()
            if best is None or ll > best[0]:
                best = (ll, gp)
        return best[1]


def gp_posterior(surrogate: GpSurrogate, query):
    """Posterior mean and variance at one point (d,) or many points (m, d)."""
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != surrogate.x.shape[1]:
        raise DimensionError("query dimension does not match the surrogate")
    ks = _se_kernel(q, surrogate.x, surrogate.length_scales, surrogate.signal_var)
    mean = surrogate.mean + ks @ surrogate._weights
    v = solve_triangular(surrogate._chol, ks.T, lower=True)
    var = np.maximum(surrogate.signal_var - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def ei_from_moments(mean, sd, best):
    """(mu - f*) Phi(z) + sigma phi(z) with z = (mu - f*) / sigma; 0 where sigma = 0."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (mean - best) / sd
        ei = (mean - best) * norm.cdf(z) + sd * norm.pdf(z)
    ei = np.where(sd > 0, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei


def expected_improvement(surrogate: GpSurrogate, query, best_score):
    mean, var = gp_posterior(surrogate, query)
    return ei_from_moments(mean, np.sqrt(var), best_score)


def _as_trial(params, out):
    if isinstance(out, TrialRecord):
        return out
    if isinstance(out, (int, float, np.floating)):
        return TrialRecord(params, float(out), float("nan"), (0, 0), True)
    association, nonzeros, converged, score = out
    return TrialRecord(params, float(score), float(association), tuple(nonzeros), bool(converged))


def _maximize_ei(gp, best, rng, n_candidates=512, n_starts=5):
    cand = rng.random((n_candidates, gp.x.shape[1]))
    ei = expected_improvement(gp, cand, best)
    starts = cand[np.argsort(-ei, kind="stable")[:n_starts]]
    best_u, best_ei = starts[0], ei.max()
    bounds = [(0.0, 1.0)] * gp.x.shape[1]
    for s in starts:
        res = minimize(lambda u: -expected_improvement(gp, u, best), s, method="L-BFGS-B", bounds=bounds)
        if res.success and -res.fun > best_ei:
            best_u, best_ei = np.clip(res.x, 0.0, 1.0), -res.fun
    return best_u


def optimize_hyperparams(fit_callable: Callable, space: SearchSpace, method="bayes"):
    """Search the box of ``space`` for the bounds with the largest score.

    ``fit_callable(c_a, c_b)`` returns a :class:`TrialRecord`, a bare score, or
    a tuple ``(association, (nnz_a, nnz_b), converged, score)``. Returns the
    best ``(c_a, c_b)`` and the list of all trials in evaluation order.
    """
    if method not in ("bayes", "random"):
        raise DomainError(f"unknown search method {method!r}")
    rng = np.random.default_rng(space.seed)
    trials, units = [], []

    def observe(u):
        params = tuple(float(v) for v in space.from_unit(u))
        trials.append(_as_trial(params, fit_callable(*params)))
        units.append(np.asarray(u, dtype=float))

    if method == "random":
        for u in rng.random((space.budget, 2)):
            observe(u)
    else:
        design = qmc.LatinHypercube(d=2, rng=rng).random(space.n0)
        for u in design:
            observe(u)
        while len(trials) < space.budget:
            scores = np.array([t.score for t in trials])
            gp = GpSurrogate.fit(np.array(units), scores)
            observe(_maximize_ei(gp, scores.max(), rng))

    scores = np.array([t.score for t in trials])
    if not any(t.converged for t in trials):
        warnings.warn("no trial converged; returning the first candidate", RuntimeWarning)
    best = trials[int(np.argmax(scores))]
    return best.params, trials


@dataclass
class TunedFit:
    result: FitResult
    params: list  # chosen (c_a, c_b) per order
    trials: list  # list of trial lists per order


def tuned_fit(
    cov: JointCovariance,
    orders=1,
    settings: Optional[OptimizerSettings] = None,
    init="orthogonal",
    standardize=False,
    alphas=(1.0, 1.0),
    budget=30,
    n0=None,
    seed=0,
    method="bayes",
):
    """Fit orders 1..K, choosing the bounds of each order by search.

    The box of every order comes from :meth:`SearchSpace.for_covariance`; the
    winning solution of order k becomes a fixed previous direction for
    order k + 1.
    """
    settings = settings or OptimizerSettings()
    work = cov.standardized() if standardize else cov
    naive = init_naive(work)
    out = FitResult([], [], [], [], [])
    chosen, all_trials = [], []
    for k in range(orders):
        space = SearchSpace.for_covariance(work, alphas, budget, n0, seed + k)
        cache = {}

        def evaluate(ca, cb, k=k):
            sol = solve_order(work, out.a.reshape(k, cov.p), out.b.reshape(k, cov.q),
                              PenaltyConfig(alphas[0], ca), PenaltyConfig(alphas[1], cb), settings, init, naive=naive)
            cache[(ca, cb)] = sol
            nz = (int(np.count_nonzero(sol.pair.a)), int(np.count_nonzero(sol.pair.b)))
            score = tpo_score(sol.association, nz[0], cov.p, nz[1], cov.q, *alphas)
            return sol.association, nz, sol.diagnostics.converged, score

        params, trials = optimize_hyperparams(evaluate, space, method)
        out.append(cache[params])
        chosen.append(params)
        all_trials.append(trials)
    if standardize:
        sx, sy = cov.scales()
        out.directions = [DirectionPair(d.a / sx, d.b / sy) for d in out.directions]
    return TunedFit(out, chosen, all_trials)


def make_tuner(alphas=(1.0, 1.0), budget=30, n0=None, seed=0, method="bayes"):
    """Adapter for :func:`robsparse.simlab.run_scenario`."""

    def tuner(cov, orders, settings, init, standardize):
        return tuned_fit(cov, orders, settings, init, standardize, alphas, budget, n0, seed, method).result

    return tuner
