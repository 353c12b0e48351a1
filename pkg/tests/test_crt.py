import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from mxpower.crt import (
    Statistic,
    crt_pvalue,
    crt_run,
    gaussian_linear_density,
    likelihood_statistic,
    marginal_correlation_statistic,
    randomization_gamma,
)
from mxpower.errors import DomainError
from mxpower.experiments import resolve_config, run_experiment
from mxpower.models import Dataset, MarkovChainModel, calibrate_random_effects


def markov_null(n, seed, p=20):
    model = MarkovChainModel(0.1, 0.1, p)
    resp = calibrate_random_effects(model, 1.0)
    rng = np.random.default_rng(seed)
    gamma = resp.draw_gamma(p, rng)
    X, Z = model.sample(n, rng)
    return model, resp, gamma, Dataset(X, resp.sample(Z, rng, gamma=gamma), Z)


class TestDecisionRule:
    def test_constant_statistic(self):
        model, _, _, data = markov_null(30, 0)
        const = Statistic(lambda X, Y, Z: 1.0, name="const")
        rejects = []
        for r in range(4000):
            out = crt_run(const, data, model, 19, 0.05, np.random.default_rng(r))
            assert out.p_value == 1.0
            assert_allclose(out.gamma, 0.05, rtol=1e-12)
            rejects.append(out.reject)
        assert abs(np.mean(rejects) - 0.05) < 3 * math.sqrt(0.05 * 0.95 / 4000)

    def test_strictly_largest(self):
        assert crt_pvalue(10.0, np.arange(99.0) / 99) == 1 / 100
        gamma, _, n_greater, _ = randomization_gamma(10.0, np.arange(99.0) / 99, 0.05)
        assert n_greater == 0 and gamma == 1.0

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.sampled_from([0.05, 0.1, 0.2, 0.5]))
    def test_exact_size_over_exchangeable_positions(self, values, alpha):
        # Under the null t_obs is equally likely to be any of the B + 1 pooled
        # values; the average rejection probability must be alpha exactly
        # whenever alpha (B + 1) <= B + 1.
        pooled = np.array(values, dtype=float)
        gammas = []
        for i in range(pooled.size):
            rest = np.delete(pooled, i)
            if rest.size == 0:
                return
            gammas.append(randomization_gamma(pooled[i], rest, alpha)[0])
        assert abs(np.mean(gammas) - alpha) < 1e-12

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(-6, 6), st.floats(0, 3))
    def test_monotone_in_t_obs(self, res, t, step):
        res = np.array(res)
        assert crt_pvalue(t + step, res) <= crt_pvalue(t, res)
        assert randomization_gamma(t + step, res, 0.1)[0] >= randomization_gamma(t, res, 0.1)[0]

    @given(st.lists(st.integers(-3, 3), min_size=2, max_size=30), st.integers(-3, 3), st.integers(0, 2**32 - 1))
    def test_permuting_resamples_changes_nothing(self, res, t, seed):
        res = np.array(res, dtype=float)
        perm = np.random.default_rng(seed).permutation(res.size)
        assert randomization_gamma(t, res, 0.1) == randomization_gamma(t, res[perm], 0.1)
        assert crt_pvalue(t, res) == crt_pvalue(t, res[perm])

    def test_threshold_is_pooled_quantile(self):
        res = np.arange(1.0, 20.0)  # 19 resamples plus t_obs: 20 pooled values
        _, threshold, _, _ = randomization_gamma(0.0, res, 0.1)
        # floor(0.1 * 20) = 2 values may exceed the threshold
        assert threshold == 17.0

    def test_small_alpha_warns(self):
        model, _, _, data = markov_null(20, 1)
        with pytest.warns(RuntimeWarning):
            out = crt_run(marginal_correlation_statistic(), data, model, 9, 0.05, np.random.default_rng(0))
        assert out.warning is not None

    def test_validation(self):
        model, _, _, data = markov_null(10, 2)
        with pytest.raises(DomainError):
            crt_run(marginal_correlation_statistic(), data, model, 0, 0.05, np.random.default_rng(0))
        with pytest.raises(DomainError):
            crt_run(marginal_correlation_statistic(), data, model, 10, 1.5, np.random.default_rng(0))


class TestNullBehaviour:
    def test_gcm_size_markov(self):
        # the experiment harness at its default seed: Markov-chain null,
        # GCM statistic, B = 500, alpha = 0.05, n = 100
        cfg = resolve_config("equivalence", {"replicates": 2000, "n_test": 100, "B": 500})
        table = run_experiment(cfg)
        rate = np.mean(table.column("reject_crt"))
        assert 0.037 <= rate <= 0.063
        pvals = np.array(table.column("crt_p_value"))
        for t in (0.01, 0.05, 0.1, 0.2):
            assert np.mean(pvals <= t) <= t + 3 * math.sqrt(t * (1 - t) / pvals.size)


class TestLikelihoodStatistic:
    def test_gaussian_affine_in_residual_sum_of_squares(self):
        rng = np.random.default_rng(3)
        n, beta, gamma, s2 = 12, np.array([0.7]), rng.standard_normal(4), 2.0
        Z = rng.standard_normal((n, 4))
        Y = rng.standard_normal(n)
        stat = likelihood_statistic(gaussian_linear_density(beta, gamma, s2), log=True)
        for _ in range(5):
            X = rng.standard_normal((n, 1))
            r = Y - X @ beta - Z @ gamma
            expected = -0.5 * n * math.log(2 * math.pi * s2) - (r @ r) / (2 * s2)
            assert_allclose(stat(X, Y, Z), expected, rtol=1e-13)

    def test_density_and_log_density_agree(self):
        rng = np.random.default_rng(4)
        X, Y, Z = rng.standard_normal((6, 1)), rng.standard_normal(6), rng.standard_normal((6, 2))
        a = likelihood_statistic(gaussian_linear_density([1.0], [0.5, -0.5], 1.0, log=False))
        b = likelihood_statistic(gaussian_linear_density([1.0], [0.5, -0.5], 1.0, log=True), log=True)
        assert_allclose(a(X, Y, Z), b(X, Y, Z), rtol=1e-13)

    def test_constant_in_x_has_size_alpha(self):
        model, _, _, data = markov_null(25, 5)
        stat = likelihood_statistic(lambda Y, X, Z: np.full(np.shape(X)[:-1], 0.3))
        for r in range(20):
            out = crt_run(stat, data, model, 99, 0.05, np.random.default_rng(r))
            assert_allclose(out.gamma, 0.05, rtol=1e-12)

    def test_two_point_toy(self):
        # P(Y = 1 | X = x) = 0.8 if x = 1 else 0.3, ignoring Z
        def fbar(Y, X, Z):
            p1 = np.where(np.asarray(X)[..., 0] == 1, 0.8, 0.3)
            return np.where(Y == 1, p1, 1 - p1)

        stat = likelihood_statistic(fbar)
        X = np.array([[1.0], [0.0]])
        Y = np.array([1.0, 1.0])
        assert_allclose(stat(X, Y, np.zeros((2, 1))), math.log(0.8 * 0.3), rtol=1e-15)
        Y = np.array([0.0, 1.0])
        assert_allclose(stat(X, Y, np.zeros((2, 1))), math.log(0.2 * 0.3), rtol=1e-15)

    def test_batch_matches_loop(self):
        rng = np.random.default_rng(6)
        Xs = rng.standard_normal((7, 10, 1))
        Y, Z = rng.standard_normal(10), rng.standard_normal((10, 3))
        stat = likelihood_statistic(gaussian_linear_density([0.4], [1.0, 0.0, -1.0], 1.5), log=True)
        assert_allclose(stat.batch(Xs, Y, Z), [stat(Xb, Y, Z) for Xb in Xs], rtol=1e-13)

    def test_negation(self):
        rng = np.random.default_rng(7)
        Xs = rng.standard_normal((3, 5, 1))
        Y, Z = rng.standard_normal(5), rng.standard_normal((5, 1))
        stat = marginal_correlation_statistic()
        assert_allclose((-stat).batch(Xs, Y, Z), -stat.batch(Xs, Y, Z))
        assert (-stat)(Xs[0], Y, Z) == -stat(Xs[0], Y, Z)


def test_marginal_correlation_batch():
    rng = np.random.default_rng(8)
    Xs = rng.standard_normal((4, 9, 1))
    Y = rng.standard_normal(9)
    stat = marginal_correlation_statistic()
    assert_allclose(stat.batch(Xs, Y, None), [abs(Xb[:, 0] @ Y) for Xb in Xs], rtol=1e-13)
