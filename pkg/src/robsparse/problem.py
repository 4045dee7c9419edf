"""Order-k maximum association problem and its augmented Lagrangian.

The order-k problem is

    min  -a' Cxy b
    s.t. a' Cxx a <= 1,          b' Cyy b <= 1,
         a' Cxx a_i = 0,         b' Cyy b_i = 0,       i < k,
         P_a(a) <= c_a,          P_b(b) <= c_b,

with elastic net penalties P(u) = alpha |u|_1 + (1 - alpha) |u|_2. The
constraint vector is always ordered

    [var_a, var_b, orth_a (k - 1 rows), orth_b (k - 1 rows), pen_a, pen_b].

Inequality rows enter the augmented Lagrangian through the clamped residual
r = max(H, -lambda / c), so an inactive constraint with a zero multiplier
contributes nothing.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .covariance import JointCovariance
from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class PenaltyConfig:
    alpha: float = 1.0
    bound: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.bound > 0:
            raise DomainError(f"penalty bound must be positive, got {self.bound}")


@dataclass
class DirectionPair:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise DomainError("direction pair has non-finite entries")

    def copy(self):
        return DirectionPair(self.a.copy(), self.b.copy())


@dataclass
class MultiplierState:
    lam: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float).ravel()
        if self.c < 0:
            raise DomainError("penalty strength c must be nonnegative")

    def copy(self):
        return MultiplierState(self.lam.copy(), self.c)


def elastic_net(u, config: PenaltyConfig):
    """alpha * |u|_1 + (1 - alpha) * |u|_2 (the L2 term is not squared)."""
    u = np.asarray(u, dtype=float)
    return config.alpha * np.abs(u).sum() + (1.0 - config.alpha) * np.sqrt(u @ u)


def penalty_subgradient(u, config: PenaltyConfig, return_flag=False):
    """A subgradient of :func:`elastic_net` at ``u``.

    The L1 part uses sign(u), i.e. 0 at exact zeros. At u = 0 the L2 norm has
    no gradient and the zero vector is returned with the degenerate flag set.
    """
    u = np.asarray(u, dtype=float)
    g = config.alpha * np.sign(u)
    nrm = np.sqrt(u @ u)
    degenerate = nrm == 0.0 and config.alpha < 1.0
    if nrm > 0.0 and config.alpha < 1.0:
        g = g + (1.0 - config.alpha) * u / nrm
    if return_flag:
        return g, degenerate
    return g


@dataclass(frozen=True, eq=False)
class MaxAssocProblem:
    """One order-k subproblem: covariance blocks, penalties, lower orders."""

    cov: JointCovariance
    pen_a: PenaltyConfig = PenaltyConfig()
    pen_b: PenaltyConfig = PenaltyConfig()
    prev_a: np.ndarray = field(default=None)
    prev_b: np.ndarray = field(default=None)
    # treat every row as an equality, i.e. the plain lambda += c * H update
    equality_mode: bool = False

    def __post_init__(self):
        p, q = self.cov.p, self.cov.q
        pa = np.zeros((0, p)) if self.prev_a is None else np.atleast_2d(np.asarray(self.prev_a, float))
        pb = np.zeros((0, q)) if self.prev_b is None else np.atleast_2d(np.asarray(self.prev_b, float))
        if pa.shape[1] != p or pb.shape[1] != q or pa.shape[0] != pb.shape[0]:
            raise DimensionError("previous directions do not match the covariance blocks")
        if pa.shape[0] + 1 > min(p, q):
            raise DimensionError(f"order {pa.shape[0] + 1} exceeds min(p, q) = {min(p, q)}")
        object.__setattr__(self, "prev_a", pa)
        object.__setattr__(self, "prev_b", pb)
        # gradients of the orthogonality rows are constant
        object.__setattr__(self, "_orth_a", np.ascontiguousarray(pa @ self.cov.cxx))
        object.__setattr__(self, "_orth_b", np.ascontiguousarray(pb @ self.cov.cyy))
        # contiguous copies for the compiled inner loop
        for name, m in (("_cxx", self.cov.cxx), ("_cyy", self.cov.cyy), ("_cxy", self.cov.cxy), ("_cyx", self.cov.cxy.T)):
            object.__setattr__(self, name, np.ascontiguousarray(m, dtype=float))
        k1 = pa.shape[0]
        ineq = np.zeros(2 * k1 + 4, dtype=bool)
        if not self.equality_mode:
            ineq[[0, 1, -2, -1]] = True
        object.__setattr__(self, "inequality", ineq)

    @property
    def order(self):
        return self.prev_a.shape[0] + 1

    @property
    def n_constraints(self):
        return 2 * self.order + 2

    def _check(self, a, b):
        if a.shape != (self.cov.p,) or b.shape != (self.cov.q,):
            raise DimensionError(
                f"expected a of length {self.cov.p} and b of length {self.cov.q}, "
                f"got {a.shape} and {b.shape}"
            )

    def _parts(self, a, b):
        cxx_a = self.cov.cxx @ a
        cyy_b = self.cov.cyy @ b
        h = np.concatenate(
            (
                [a @ cxx_a - 1.0, b @ cyy_b - 1.0],
                self._orth_a @ a,
                self._orth_b @ b,
                [elastic_net(a, self.pen_a) - self.pen_a.bound, elastic_net(b, self.pen_b) - self.pen_b.bound],
            )
        )
        return h, cxx_a, cyy_b

    def constraints(self, a, b):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        self._check(a, b)
        return self._parts(a, b)[0]

    def clamped_residual(self, h, mult: MultiplierState):
        """Residual r with r = max(H, -lambda / c) on inequality rows."""
        r = np.array(h, dtype=float)
        if mult.c > 0:
            ineq = self.inequality
            r[ineq] = np.maximum(r[ineq], -mult.lam[ineq] / mult.c)
        return r

    def effective_multipliers(self, h, mult: MultiplierState):
        """lambda + c * H, clamped at 0 on inequality rows."""
        mu = mult.lam + mult.c * h
        ineq = self.inequality
        mu[ineq] = np.maximum(mu[ineq], 0.0)
        return mu

    def lagrangian(self, a, b, mult: MultiplierState):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        self._check(a, b)
        if mult.lam.shape != (self.n_constraints,):
            raise DimensionError(f"need {self.n_constraints} multipliers, got {mult.lam.shape}")
        h, _, _ = self._parts(a, b)
        lam, c = mult.lam, mult.c
        eq = ~self.inequality
        val = -(a @ self.cov.cxy @ b)
        val += lam[eq] @ h[eq] + 0.5 * c * (h[eq] @ h[eq])
        ineq = self.inequality
        if c > 0:
            shifted = np.maximum(lam[ineq] + c * h[ineq], 0.0)
            val += ((shifted**2).sum() - (lam[ineq] ** 2).sum()) / (2.0 * c)
        else:
            val += lam[ineq] @ h[ineq]
        return float(val)

    def gradient(self, a, b, lam, c, kink_tol=None):
        """Subgradient of the augmented Lagrangian in (a, b).

        Returns ``(grad_a, grad_b, h)``. With ``kink_tol`` (per-coordinate
        arrays for a and b) the L1 subgradient of coordinates within the
        tolerance of zero is chosen to minimize the gradient norm instead of
        being sign(u); this is a stationarity measure, not a descent direction.
        """
        cov = self.cov
        h, cxx_a, cyy_b = self._parts(a, b)
        mu = lam + c * h
        ineq = self.inequality
        mu[ineq] = np.maximum(mu[ineq], 0.0)
        k1 = self.order - 1
        ga = -(cov.cxy @ b) + 2.0 * mu[0] * cxx_a
        gb = -(cov.cxy.T @ a) + 2.0 * mu[1] * cyy_b
        if k1:
            ga += mu[2 : 2 + k1] @ self._orth_a
            gb += mu[2 + k1 : 2 + 2 * k1] @ self._orth_b
        ga = self._add_penalty(ga, a, self.pen_a, mu[-2], None if kink_tol is None else kink_tol[0])
        gb = self._add_penalty(gb, b, self.pen_b, mu[-1], None if kink_tol is None else kink_tol[1])
        return ga, gb, h

    @staticmethod
    def _add_penalty(g, u, pen, weight, tol):
        if weight == 0.0:
            return g
        if pen.alpha < 1.0:
            nrm = np.sqrt(u @ u)
            if nrm > 0:
                g = g + weight * (1.0 - pen.alpha) * u / nrm
        if pen.alpha > 0.0:
            w1 = weight * pen.alpha
            if tol is None:
                g = g + w1 * np.sign(u)
            else:
                at_kink = np.abs(u) <= tol
                g = np.where(at_kink, np.sign(g) * np.maximum(np.abs(g) - w1, 0.0), g + w1 * np.sign(u))
        return g


def objective(problem: MaxAssocProblem, pair: DirectionPair):
    """Association value a' Cxy b."""
    problem._check(pair.a, pair.b)
    return float(pair.a @ problem.cov.cxy @ pair.b)


def constraints(problem: MaxAssocProblem, pair: DirectionPair):
    return problem.constraints(pair.a, pair.b)


def augmented_lagrangian(problem: MaxAssocProblem, pair: DirectionPair, mult: MultiplierState):
    return problem.lagrangian(pair.a, pair.b, mult)


def al_subgradient(problem: MaxAssocProblem, pair: DirectionPair, mult: MultiplierState):
    """Subgradient of the augmented Lagrangian, shaped like a DirectionPair."""
    problem._check(pair.a, pair.b)
    if mult.lam.shape != (problem.n_constraints,):
        raise DimensionError(f"need {problem.n_constraints} multipliers, got {mult.lam.shape}")
    ga, gb, _ = problem.gradient(pair.a, pair.b, mult.lam, mult.c)
    return DirectionPair(ga, gb)


def make_problem(cov, pen_a=None, pen_b=None, prev_a=None, prev_b=None, equality_mode=False):
    return MaxAssocProblem(
        cov,
        pen_a or PenaltyConfig(),
        pen_b or PenaltyConfig(),
        prev_a,
        prev_b,
        equality_mode,
    )
