"""Method of multipliers with an AMSGrad inner solver.

For every order k the outer loop minimizes the augmented Lagrangian with
AMSGrad, zeroes coefficients that are below a moving-average step-size
threshold, rescales the iterate back to unit variance, and updates the
multipliers. The penalty strength grows tenfold whenever the constraint
residual fails to shrink by a factor of four.
"""

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .covariance import JointCovariance
from .errors import DimensionError, DivergenceError, DomainError
from .problem import DirectionPair, MaxAssocProblem, MultiplierState, PenaltyConfig, objective

log = logging.getLogger(__name__)


@dataclass
class OptimizerSettings:
    eta1: float = 0.9
    eta2: float = 0.999
    alpha0: float = 0.01
    eps: float = 1e-8
    delta_inner: float = 1e-6
    delta_outer: float = 1e-4
    window: int = 10
    c0: float = 1.0
    growth: float = 10.0
    trigger: float = 0.25
    max_inner: int = 5000
    max_outer: int = 60
    c_max: float = 1e6
    # apply the threshold after every inner solve, or only after the last one
    threshold_every: bool = True
    # optional learning-rate decay: iteration -> learning rate
    lr_schedule: Optional[Callable[[int], float]] = None
    # stop the inner loop once the relative iterate change stays below this
    stall_tol: float = 1e-9
    # initial multipliers: "constraints" sets lambda0 = H(a0, b0) (clamped at 0
    # on inequality rows), "equality" does so only on the orthogonality rows
    # and starts inequality rows at 0, "zero" starts every row at 0
    init_multipliers: str = "equality"
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.eta1 < 1 and 0 < self.eta2 < 1):
            raise DomainError("eta1 and eta2 must lie in (0, 1)")
        if self.window < 1:
            raise DomainError("window must be at least 1")
        if not self.growth > 1:
            raise DomainError("growth factor must exceed 1")
        if not 0 < self.trigger < 1:
            raise DomainError("trigger ratio must lie in (0, 1)")
        if self.init_multipliers not in ("constraints", "equality", "zero"):
            raise DomainError(f"unknown multiplier initialization {self.init_multipliers!r}")
        if self.alpha0 <= 0 or self.delta_inner <= 0 or self.delta_outer <= 0 or self.c0 <= 0:
            raise DomainError("learning rate, tolerances and c0 must be positive")


@dataclass
class AmsgradState:
    m: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim), np.zeros(dim), np.zeros(dim))


@dataclass
class InnerResult:
    x: np.ndarray
    iterations: int
    stationarity: float
    # relative step sizes of each block, most recent last
    steps: list
    state: AmsgradState


def amsgrad(grad_fn, x0, settings: OptimizerSettings, blocks=None, stationarity_fn=None, state=None):
    """Minimize with AMSGrad from ``x0``.

    ``grad_fn(x)`` returns a (sub)gradient. The loop stops when the
    stationarity measure drops to ``settings.delta_inner``, when the relative
    iterate change stays below ``settings.stall_tol`` for ``window``
    iterations, or after ``max_inner`` iterations. The stationarity measure is
    the gradient norm unless ``stationarity_fn(x, g, kink_tol)`` is supplied;
    ``kink_tol`` holds each coordinate's largest step over the last window.
    """
    x = np.array(x0, dtype=float)
    dim = x.size
    blocks = blocks or [slice(0, dim)]
    st = state or AmsgradState.zeros(dim)
    w = settings.window
    steps = [deque(maxlen=w) for _ in blocks]
    recent = np.zeros((w, dim))
    stall = 0
    measure = np.inf
    eta1, eta2 = settings.eta1, settings.eta2

    i = 0
    while i < settings.max_inner:
        g = grad_fn(x)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(st.iteration + 1)
        if stationarity_fn is None or i < w:
            measure = float(np.sqrt(g @ g))
        else:
            measure = stationarity_fn(x, g, recent.max(axis=0))
        if measure <= settings.delta_inner:
            break
        st.iteration += 1
        lr = settings.alpha0 if settings.lr_schedule is None else settings.lr_schedule(st.iteration)
        st.m *= eta1
        st.m += (1.0 - eta1) * g
        st.v *= eta2
        st.v += (1.0 - eta2) * (g * g)
        np.maximum(st.v_hat, st.v, out=st.v_hat)
        step = lr * st.m / (np.sqrt(st.v_hat) + settings.eps)
        x_new = x - step
        recent[i % w] = np.abs(step)
        for blk, hist in zip(blocks, steps):
            prev = np.sqrt(x[blk] @ x[blk])
            ds = np.sqrt(step[blk] @ step[blk])
            hist.append(ds / prev if prev > 0 else (0.0 if ds == 0 else np.inf))
        xn = np.sqrt(x @ x)
        rel = np.sqrt(step @ step) / xn if xn > 0 else np.sqrt(step @ step)
        x = x_new
        i += 1
        stall = stall + 1 if rel < settings.stall_tol else 0
        if stall >= w:
            break
    return InnerResult(x, i, measure, [list(h) for h in steps], st)


def _sign_fix(pair: DirectionPair, cxy):
    a, b = pair.a, pair.b
    if a.size and a[np.argmax(np.abs(a))] < 0:
        a, b = -a, -b
    if a @ cxy @ b < 0:
        b = -b
    return DirectionPair(a, b)


@njit(cache=True, nogil=True)
def _penalty_grad(g, u, alpha, weight, kink_tol, use_kink):
    # adds weight * subgradient of the elastic net to g (in place)
    n = u.shape[0]
    if weight == 0.0:
        return
    if alpha < 1.0:
        nrm = np.sqrt(np.dot(u, u))
        if nrm > 0.0:
            f = weight * (1.0 - alpha) / nrm
            for i in range(n):
                g[i] += f * u[i]
    if alpha > 0.0:
        w1 = weight * alpha
        for i in range(n):
            if use_kink and abs(u[i]) <= kink_tol[i]:
                gi = abs(g[i]) - w1
                g[i] = np.sign(g[i]) * gi if gi > 0.0 else 0.0
            elif u[i] > 0.0:
                g[i] += w1
            elif u[i] < 0.0:
                g[i] -= w1


@njit(cache=True, nogil=True)
def _al_grad(x, p, cxx, cyy, cxy, cyx, rows_a, rows_b, alpha_a, bound_a, alpha_b, bound_b,
             lam, c, ineq, kink_tol, use_kink, g):
    a = x[:p]
    b = x[p:]
    k1 = rows_a.shape[0]
    m = lam.shape[0]
    cxx_a = np.dot(cxx, a)
    cyy_b = np.dot(cyy, b)
    h = np.empty(m)
    h[0] = np.dot(a, cxx_a) - 1.0
    h[1] = np.dot(b, cyy_b) - 1.0
    if k1 > 0:
        h[2:2 + k1] = np.dot(rows_a, a)
        h[2 + k1:2 + 2 * k1] = np.dot(rows_b, b)
    h[m - 2] = alpha_a * np.sum(np.abs(a)) + (1.0 - alpha_a) * np.sqrt(np.dot(a, a)) - bound_a
    h[m - 1] = alpha_b * np.sum(np.abs(b)) + (1.0 - alpha_b) * np.sqrt(np.dot(b, b)) - bound_b
    mu = lam + c * h
    for j in range(m):
        if ineq[j] and mu[j] < 0.0:
            mu[j] = 0.0
    ga = g[:p]
    gb = g[p:]
    ga[:] = -np.dot(cxy, b) + 2.0 * mu[0] * cxx_a
    gb[:] = -np.dot(cyx, a) + 2.0 * mu[1] * cyy_b
    if k1 > 0:
        ga += np.dot(mu[2:2 + k1], rows_a)
        gb += np.dot(mu[2 + k1:2 + 2 * k1], rows_b)
    _penalty_grad(ga, a, alpha_a, mu[m - 2], kink_tol[:p], use_kink)
    _penalty_grad(gb, b, alpha_b, mu[m - 1], kink_tol[p:], use_kink)


@njit(cache=True, nogil=True)
def _amsgrad_kernel(x0, p, cxx, cyy, cxy, cyx, rows_a, rows_b, alpha_a, bound_a, alpha_b, bound_b,
                    lam, c, ineq, eta1, eta2, lrs, eps, delta, stall_tol, window, max_inner):
    x = x0.copy()
    dim = x.shape[0]
    m = np.zeros(dim)
    v = np.zeros(dim)
    v_hat = np.zeros(dim)
    g = np.empty(dim)
    gs = np.empty(dim)
    recent = np.zeros((window, dim))
    kink = np.zeros(dim)
    steps_a = np.zeros(window)
    steps_b = np.zeros(window)
    stall = 0
    measure = np.inf
    it = 0
    while it < max_inner:
        _al_grad(x, p, cxx, cyy, cxy, cyx, rows_a, rows_b, alpha_a, bound_a, alpha_b, bound_b,
                 lam, c, ineq, kink, False, g)
        for i in range(dim):
            if not np.isfinite(g[i]):
                return x, -(it + 1), measure, steps_a, steps_b
        if it < window:
            measure = np.sqrt(np.dot(g, g))
        else:
            for i in range(dim):
                kink[i] = 0.0
                for r in range(window):
                    if recent[r, i] > kink[i]:
                        kink[i] = recent[r, i]
            _al_grad(x, p, cxx, cyy, cxy, cyx, rows_a, rows_b, alpha_a, bound_a, alpha_b, bound_b,
                     lam, c, ineq, kink, True, gs)
            measure = np.sqrt(np.dot(gs, gs))
        if measure <= delta:
            break
        lr = lrs[it]
        sa = 0.0
        sb = 0.0
        na = 0.0
        nb = 0.0
        slot = it % window
        for i in range(dim):
            m[i] = eta1 * m[i] + (1.0 - eta1) * g[i]
            v[i] = eta2 * v[i] + (1.0 - eta2) * g[i] * g[i]
            if v[i] > v_hat[i]:
                v_hat[i] = v[i]
            step = lr * m[i] / (np.sqrt(v_hat[i]) + eps)
            recent[slot, i] = abs(step)
            if i < p:
                sa += step * step
                na += x[i] * x[i]
            else:
                sb += step * step
                nb += x[i] * x[i]
            x[i] -= step
        steps_a[slot] = np.sqrt(sa) / np.sqrt(na) if na > 0.0 else (0.0 if sa == 0.0 else np.inf)
        steps_b[slot] = np.sqrt(sb) / np.sqrt(nb) if nb > 0.0 else (0.0 if sb == 0.0 else np.inf)
        it += 1
        xn = na + nb
        rel = np.sqrt(sa + sb) / np.sqrt(xn) if xn > 0.0 else np.sqrt(sa + sb)
        if rel < stall_tol:
            stall += 1
            if stall >= window:
                break
        else:
            stall = 0
    return x, it, measure, steps_a, steps_b


def _chronological(ring, count, window):
    n = min(count, window)
    if count <= window:
        return list(ring[:n])
    start = count % window
    return list(np.concatenate((ring[start:], ring[:start])))


def _learning_rates(settings):
    if settings.lr_schedule is None:
        return np.full(settings.max_inner, float(settings.alpha0))
    return np.array([settings.lr_schedule(i + 1) for i in range(settings.max_inner)], dtype=float)


def amsgrad_minimize(problem: MaxAssocProblem, mult: MultiplierState, start: DirectionPair, settings=None, lrs=None):
    """Minimize the augmented Lagrangian for fixed multipliers with AMSGrad.

    Compiled equivalent of :func:`amsgrad` applied to
    :meth:`MaxAssocProblem.gradient`, with the kink-aware stationarity
    measure. Returns an :class:`InnerResult` whose ``x`` stacks (a, b).
    ``lrs`` optionally holds precomputed per-iteration learning rates.
    """
    settings = settings or OptimizerSettings()
    cov = problem.cov
    p = cov.p
    x0 = np.concatenate((start.a, start.b))
    if lrs is None:
        lrs = _learning_rates(settings)
    x, it, measure, sa, sb = _amsgrad_kernel(
        x0, p, problem._cxx, problem._cyy, problem._cxy, problem._cyx,
        problem._orth_a, problem._orth_b,
        problem.pen_a.alpha, problem.pen_a.bound, problem.pen_b.alpha, problem.pen_b.bound,
        np.ascontiguousarray(mult.lam, dtype=float), float(mult.c), problem.inequality,
        settings.eta1, settings.eta2, lrs, settings.eps, settings.delta_inner,
        settings.stall_tol, settings.window, settings.max_inner,
    )
    if it < 0:
        raise DivergenceError(-it)
    steps = [_chronological(sa, it, settings.window), _chronological(sb, it, settings.window)]
    return InnerResult(x, it, float(measure), steps, None)


def step_threshold(history, window):
    """Mean plus two (population) standard deviations of the last steps."""
    h = np.asarray(list(history)[-window:], dtype=float)
    if h.size == 0:
        return 0.0
    return float(h.mean() + 2.0 * h.std())


def threshold(pair: DirectionPair, step_history_a, step_history_b, window=10):
    """Zero every coefficient whose magnitude does not exceed the threshold."""
    ta = step_threshold(step_history_a, window)
    tb = step_threshold(step_history_b, window)
    a = np.where(np.abs(pair.a) > ta, pair.a, 0.0)
    b = np.where(np.abs(pair.b) > tb, pair.b, 0.0)
    return DirectionPair(a, b)


def _renormalize(u, cmat):
    s = u @ cmat @ u
    return u / np.sqrt(s) if s > 0 else u


def init_naive(cov: JointCovariance):
    """Row means of Cxy for a, column means for b.

    A (numerically) zero Cxy gives no usable start; it is replaced by the
    uniform direction with a warning.
    """
    a = cov.cxy.mean(axis=1)
    b = cov.cxy.mean(axis=0)
    scale = max(np.abs(cov.cxy).max(), 1e-300)
    if np.abs(a).max() <= 1e-12 * scale or np.abs(b).max() <= 1e-12 * scale or not np.any(cov.cxy):
        warnings.warn("cross-covariance is zero; using a uniform start", RuntimeWarning)
        a = np.full(cov.p, 1.0 / np.sqrt(cov.p))
        b = np.full(cov.q, 1.0 / np.sqrt(cov.q))
    return DirectionPair(a, b)


def _project_out(u, constraint_rows):
    if constraint_rows.shape[0] == 0:
        return u
    # Euclidean projection onto {u : constraint_rows @ u = 0}
    coef, *_ = np.linalg.lstsq(constraint_rows.T, u, rcond=None)
    return u - constraint_rows.T @ coef


def init_orthogonal(cov: JointCovariance, prev_a, prev_b, naive: DirectionPair, seed=0):
    """Project the naive start onto {a : a' Cxx a_i = 0} (and likewise for b)."""
    prev_a = np.atleast_2d(np.asarray(prev_a, dtype=float))
    prev_b = np.atleast_2d(np.asarray(prev_b, dtype=float))
    if prev_a.shape[0] == 0:
        raise DimensionError("orthogonal initialization needs previous directions")
    rng = np.random.default_rng(seed)
    out = []
    for u, prev, cmat in ((naive.a, prev_a, cov.cxx), (naive.b, prev_b, cov.cyy)):
        rows = prev @ cmat
        proj = _project_out(u, rows)
        if np.linalg.norm(proj) <= 1e-10 * max(np.linalg.norm(u), 1e-300):
            warnings.warn("naive start lies in the span of previous directions; using a random start", RuntimeWarning)
            proj = _project_out(rng.standard_normal(u.size), rows)
        out.append(proj)
    return DirectionPair(*out)


@dataclass
class SolveDiagnostics:
    converged: bool
    reason: str
    outer_iterations: int
    inner_iterations: list
    residual_norm: float
    max_equality_residual: float
    max_inequality_violation: float
    variance_residuals: tuple
    c_history: list = field(default_factory=list)


@dataclass
class SolveResult:
    pair: DirectionPair
    mult: MultiplierState
    diagnostics: SolveDiagnostics
    association: float


def _residual_summary(problem, pair):
    h = problem.constraints(pair.a, pair.b)
    ineq = problem.inequality.copy()
    if problem.equality_mode:
        ineq[[0, 1, -2, -1]] = True
    eq_rows = h[~ineq]
    max_eq = float(np.abs(eq_rows).max()) if eq_rows.size else 0.0
    max_ineq = float(max(h[ineq].max(), 0.0))
    return max_eq, max_ineq, (float(h[0]), float(h[1]))


def mm_solve(problem: MaxAssocProblem, start: DirectionPair, settings: Optional[OptimizerSettings] = None):
    """Solve one order-k problem by the method of multipliers."""
    settings = settings or OptimizerSettings()
    cov = problem.cov
    p = cov.p
    pair = start.copy()
    h = problem.constraints(pair.a, pair.b)
    lam = h.copy()
    if settings.init_multipliers == "zero":
        lam[:] = 0.0
    elif settings.init_multipliers == "equality":
        lam[problem.inequality] = 0.0
    else:
        lam[problem.inequality] = np.maximum(lam[problem.inequality], 0.0)
    mult = MultiplierState(lam, settings.c0)
    res_prev = np.linalg.norm(problem.clamped_residual(h, mult))
    inner_its = []
    c_hist = [mult.c]
    converged = False
    reason = "max_outer"
    last_steps = ([], [])
    best = None
    lrs = _learning_rates(settings)

    for t in range(settings.max_outer):
        inner = amsgrad_minimize(problem, mult, pair, settings, lrs)
        inner_its.append(inner.iterations)
        pair = DirectionPair(inner.x[:p], inner.x[p:])
        last_steps = (inner.steps[0], inner.steps[1])
        if settings.threshold_every:
            pair = _threshold_and_rescale(pair, last_steps, settings.window, cov)
        h = problem.constraints(pair.a, pair.b)
        res = np.linalg.norm(problem.clamped_residual(h, mult))
        new_lam = problem.effective_multipliers(h, mult)
        dlam = np.linalg.norm(new_lam - mult.lam)
        mult = MultiplierState(new_lam, mult.c)
        if best is None or res < best[0]:
            best = (res, pair.copy(), mult.copy())
        log.debug("outer %d: c=%.3g |r|=%.3e |dlam|=%.3e inner=%d", t, mult.c, res, dlam, inner.iterations)
        if dlam <= settings.delta_outer:
            converged = True
            reason = "multipliers"
            break
        if res > settings.trigger * res_prev:
            if mult.c * settings.growth > settings.c_max:
                reason = "c_max"
                break
            mult.c *= settings.growth
            c_hist.append(mult.c)
        res_prev = res

    if not converged and best is not None:
        _, pair, mult = best
    if not settings.threshold_every:
        pair = _threshold_and_rescale(pair, last_steps, settings.window, cov)
    pair = _sign_fix(pair, cov.cxy)
    max_eq, max_ineq, var_res = _residual_summary(problem, pair)
    h = problem.constraints(pair.a, pair.b)
    diag = SolveDiagnostics(
        converged=converged,
        reason=reason,
        outer_iterations=len(inner_its),
        inner_iterations=inner_its,
        residual_norm=float(np.linalg.norm(problem.clamped_residual(h, mult))),
        max_equality_residual=max_eq,
        max_inequality_violation=max_ineq,
        variance_residuals=var_res,
        c_history=c_hist,
    )
    return SolveResult(pair, mult, diag, objective(problem, pair))


def _threshold_and_rescale(pair, steps, window, cov):
    cut = threshold(pair, steps[0], steps[1], window)
    # never threshold a block away entirely
    a = cut.a if np.any(cut.a) else pair.a
    b = cut.b if np.any(cut.b) else pair.b
    return DirectionPair(_renormalize(a, cov.cxx), _renormalize(b, cov.cyy))


@dataclass
class FitResult:
    directions: list
    associations: list
    multipliers: list
    diagnostics: list
    nonzero_counts: list

    @property
    def converged(self):
        return [d.converged for d in self.diagnostics]

    @property
    def a(self):
        return np.array([d.a for d in self.directions])

    @property
    def b(self):
        return np.array([d.b for d in self.directions])

    def append(self, sol: SolveResult):
        self.directions.append(sol.pair)
        self.associations.append(sol.association)
        self.multipliers.append(sol.mult)
        self.diagnostics.append(sol.diagnostics)
        self.nonzero_counts.append((int(np.count_nonzero(sol.pair.a)), int(np.count_nonzero(sol.pair.b))))


def _penalties_for(pen_configs, k):
    if pen_configs is None:
        return PenaltyConfig(), PenaltyConfig()
    if isinstance(pen_configs, tuple) and len(pen_configs) == 2 and isinstance(pen_configs[0], PenaltyConfig):
        return pen_configs
    return pen_configs[k]


def solve_order(
    cov: JointCovariance,
    prev_a,
    prev_b,
    pen_a: PenaltyConfig,
    pen_b: PenaltyConfig,
    settings: Optional[OptimizerSettings] = None,
    init="orthogonal",
    equality_mode=False,
    naive: Optional[DirectionPair] = None,
):
    """Solve the order-k problem given the k - 1 previous directions."""
    settings = settings or OptimizerSettings()
    if init not in ("naive", "orthogonal"):
        raise DomainError(f"unknown initialization {init!r}")
    k = len(prev_a)
    problem = MaxAssocProblem(
        cov,
        pen_a,
        pen_b,
        np.array(prev_a, dtype=float).reshape(k, cov.p),
        np.array(prev_b, dtype=float).reshape(k, cov.q),
        equality_mode,
    )
    naive = naive if naive is not None else init_naive(cov)
    if k > 0 and init == "orthogonal":
        start = init_orthogonal(cov, problem.prev_a, problem.prev_b, naive, seed=settings.seed + k)
    else:
        start = naive
    return mm_solve(problem, start, settings)


def fit(
    cov: JointCovariance,
    orders=1,
    pen_configs=None,
    settings: Optional[OptimizerSettings] = None,
    init="orthogonal",
    equality_mode=False,
    standardize=False,
):
    """Extract orders 1..K one after another.

    ``pen_configs`` is either one ``(pen_a, pen_b)`` pair used for every order
    or a list with one pair per order. A non-converged order is recorded and
    the next order still uses its best iterate as a previous direction.

    With ``standardize`` the problem is solved on the correlation scale of
    ``cov`` (so the penalties act on coefficients of standardized variables)
    and the directions are mapped back to the original scale. Associations
    and supports are unaffected by the back-transformation.
    """
    settings = settings or OptimizerSettings()
    if init not in ("naive", "orthogonal"):
        raise DomainError(f"unknown initialization {init!r}")
    if not 1 <= orders <= min(cov.p, cov.q):
        raise DimensionError(f"orders must lie in 1..{min(cov.p, cov.q)}")
    work = cov.standardized() if standardize else cov
    naive = init_naive(work)
    out = FitResult([], [], [], [], [])
    for k in range(orders):
        pen_a, pen_b = _penalties_for(pen_configs, k)
        sol = solve_order(work, out.a.reshape(k, cov.p), out.b.reshape(k, cov.q), pen_a, pen_b,
                          settings, init, equality_mode, naive)
        out.append(sol)
    if standardize:
        sx, sy = cov.scales()
        out.directions = [DirectionPair(d.a / sx, d.b / sy) for d in out.directions]
    return out
