import warnings

import numpy as np
import pytest

from robsparse.covariance import JointCovariance
from robsparse.errors import ConditioningError, DimensionError, DomainError
from robsparse.hyperopt import (
    GpSurrogate,
    SearchSpace,
    TrialRecord,
    _cholesky_jitter,
    ei_from_moments,
    expected_improvement,
    gp_posterior,
    make_tuner,
    optimize_hyperparams,
    tpo_score,
    tuned_fit,
)


class TestTpoScore:
    def test_example(self):
        assert tpo_score(0.9, 1, 10, 1, 10) == pytest.approx(1.62)

    def test_non_sparse(self):
        assert tpo_score(-0.7, 7, 10, 3, 10, 0.0, 0.0) == pytest.approx(1.4)

    def test_dense(self):
        assert tpo_score(0.8, 10, 10, 5, 5) == 0.0

    def test_range(self):
        with pytest.raises(DomainError):
            tpo_score(0.5, 11, 10, 1, 10)

    def test_monotone(self):
        scores = [tpo_score(0.6, k, 10, 2, 10, 0.5, 1.0) for k in range(11)]
        assert np.all(np.diff(scores) <= 0)


class TestSearchSpace:
    def test_for_dims(self):
        space = SearchSpace.for_dims(100, 25)
        assert space.ca_range == pytest.approx((1.0, 10.0))
        assert space.cb_range == pytest.approx((0.5, 5.0))
        assert space.n0 == 6

    def test_for_covariance_correlation_scale(self):
        cov = JointCovariance(np.eye(16), np.eye(4), np.zeros((16, 4)))
        space = SearchSpace.for_covariance(cov)
        assert space.ca_range == pytest.approx((1.0, 4.0))
        assert space.cb_range == pytest.approx((1.0, 2.0))

    def test_unit_round_trip(self):
        space = SearchSpace((0.2, 5.0), (1.0, 3.0))
        params = (0.7, 2.2)
        np.testing.assert_allclose(space.from_unit(space.to_unit(params)), params)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"ca_range": (0.0, 1.0), "cb_range": (1.0, 2.0)},
            {"ca_range": (2.0, 1.0), "cb_range": (1.0, 2.0)},
            {"ca_range": (1.0, 2.0), "cb_range": (1.0, 2.0), "budget": 0},
            {"ca_range": (1.0, 2.0), "cb_range": (1.0, 2.0), "budget": 5, "n0": 6},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            SearchSpace(**kwargs)


class TestTrialRecord:
    def test_not_converged_scores_zero(self):
        assert TrialRecord((1, 1), 1.3, 0.8, (1, 1), False).score == 0.0

    def test_non_finite(self):
        rec = TrialRecord((1, 1), np.nan, 0.8, (1, 1), True)
        assert rec.score == 0.0 and not rec.converged


class TestGpPosterior:
    def test_interpolation(self, rng):
        x = rng.random((6, 2))
        y = rng.standard_normal(6)
        gp = GpSurrogate(x, y, [0.3, 0.3], 1.0, 0.0)
        for xi, yi in zip(x, y):
            mean, var = gp_posterior(gp, xi)
            assert mean == pytest.approx(yi, abs=1e-8)
            assert var <= 1e-8

    def test_prior_reversion(self):
        gp = GpSurrogate([[0.0], [0.1]], [1.0, 2.0], [0.1], 2.5, 1e-6, mean=0.4)
        mean, var = gp_posterior(gp, [1.2])
        assert mean == pytest.approx(0.4, rel=0.01)
        assert var == pytest.approx(2.5, rel=0.01)

    def test_sine(self):
        x = np.linspace(0, np.pi, 20)
        gp = GpSurrogate.fit(x[:, None], np.sin(x))
        grid = np.linspace(0, np.pi, 500)
        mean, var = gp_posterior(gp, grid[:, None])
        assert np.abs(mean - np.sin(grid)).max() < 0.1
        assert np.all(var >= 0)

    def test_dimension_mismatch(self):
        gp = GpSurrogate([[0.0, 0.0]], [1.0], [1.0, 1.0])
        with pytest.raises(DimensionError):
            gp_posterior(gp, [0.0])

    def test_duplicate_points_need_jitter(self):
        gp = GpSurrogate([[0.5], [0.5]], [1.0, 1.0], [0.2], 1.0, 0.0)
        assert gp.jitter > 0

    def test_conditioning_error(self):
        with pytest.raises(ConditioningError):
            _cholesky_jitter(-np.eye(3), 1.0)


class TestExpectedImprovement:
    def test_zero_sd(self):
        assert ei_from_moments(1.0, 0.0, 0.5) == 0.0

    def test_symmetric(self):
        assert ei_from_moments(0.3, 2.0, 0.3) == pytest.approx(2.0 * 0.39894, rel=1e-4)

    def test_one_sd_above(self):
        assert ei_from_moments(0.3 + 0.5, 0.5, 0.3) == pytest.approx(0.5 * 1.0833, rel=1e-4)

    def test_observed_point(self):
        gp = GpSurrogate([[0.2], [0.8]], [1.0, 0.3], [0.2], 1.0, 0.0)
        assert expected_improvement(gp, [0.2], 1.0) == pytest.approx(0.0, abs=1e-6)

    def test_nonnegative(self, rng):
        x = rng.random((8, 2))
        gp = GpSurrogate.fit(x, rng.standard_normal(8))
        ei = expected_improvement(gp, rng.random((1000, 2)), 5.0)
        assert np.all(ei >= 0)


def _quadratic(ca, cb):
    return 3.0 - (np.log(ca) - np.log(2.0)) ** 2 - 2.0 * (np.log(cb) - np.log(0.8)) ** 2


class TestOptimizeHyperparams:
    def test_quadratic_argmax(self):
        space = SearchSpace((0.2, 20.0), (0.1, 5.0), budget=30, seed=4)
        (ca, cb), trials = optimize_hyperparams(_quadratic, space)
        assert len(trials) == 30
        assert ca == pytest.approx(2.0, rel=0.1)
        assert cb == pytest.approx(0.8, rel=0.1)

    def test_budget_equals_initial_design(self):
        calls = []

        def f(ca, cb):
            calls.append((ca, cb))
            return _quadratic(ca, cb)

        space = SearchSpace((0.2, 20.0), (0.1, 5.0), budget=8, n0=8)
        _, trials = optimize_hyperparams(f, space)
        u = np.array([space.to_unit(c) for c in calls])
        # Latin hypercube: one point per stratum in each coordinate
        for j in range(2):
            assert sorted(np.floor(u[:, j] * 8).astype(int)) == list(range(8))

    def test_random_reproducible(self):
        space = SearchSpace((0.2, 20.0), (0.1, 5.0), budget=12, seed=9)
        _, t1 = optimize_hyperparams(_quadratic, space, "random")
        _, t2 = optimize_hyperparams(_quadratic, space, "random")
        assert [t.params for t in t1] == [t.params for t in t2]
        assert [t.score for t in t1] == [t.score for t in t2]

    def test_bayes_deterministic(self):
        space = SearchSpace((0.2, 20.0), (0.1, 5.0), budget=10, seed=2)
        _, t1 = optimize_hyperparams(_quadratic, space)
        _, t2 = optimize_hyperparams(_quadratic, space)
        assert [t.params for t in t1] == [t.params for t in t2]

    @pytest.mark.parametrize("method", ["bayes", "random"])
    def test_argmax_consistency(self, method):
        space = SearchSpace((0.2, 20.0), (0.1, 5.0), budget=12, seed=1)
        best, trials = optimize_hyperparams(_quadratic, space, method)
        top = max(trials, key=lambda t: t.score)
        assert best == top.params

    def test_all_failed_warns(self):
        def f(ca, cb):
            return TrialRecord((ca, cb), 1.0, 0.5, (1, 1), False)

        space = SearchSpace((1.0, 2.0), (1.0, 2.0), budget=6)
        with pytest.warns(RuntimeWarning):
            best, trials = optimize_hyperparams(f, space)
        assert best == trials[0].params
        assert all(t.score == 0 for t in trials)

    def test_tuple_output(self):
        space = SearchSpace((1.0, 2.0), (1.0, 2.0), budget=5, n0=5)
        _, trials = optimize_hyperparams(lambda a, b: (0.9, (1, 2), True, 1.5), space)
        assert trials[0].nonzeros == (1, 2) and trials[0].association == 0.9

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            optimize_hyperparams(_quadratic, SearchSpace((1.0, 2.0), (1.0, 2.0)), "grid")


class TestTunedFit:
    def test_low_dim_true_covariance(self, low_dim):
        sigma, _ = low_dim
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = tuned_fit(sigma, 1, budget=10, seed=0)
        res = out.result
        assert res.associations[0] == pytest.approx(0.9, abs=1e-3)
        assert res.nonzero_counts[0] == (1, 1)
        assert len(out.trials[0]) == 10

    def test_make_tuner(self, low_dim):
        sigma, _ = low_dim
        tuner = make_tuner(budget=6, seed=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = tuner(sigma, 1, None, "orthogonal", False)
        assert res.associations[0] > 0.8
