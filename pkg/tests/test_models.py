import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from mxpower.errors import DomainError
from mxpower.models import (
    Dataset,
    GaussianDesign,
    MarkovChainModel,
    RandomEffectsResponse,
    SemiparamResponse,
    calibrate_random_effects,
    gaussian_sample,
    mc_conditional,
    mc_moments,
    mc_sample,
    sample_response,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestMarkovSampling:
    def test_fair_flips_erase_dependence(self):
        model = MarkovChainModel(0.3, 0.5, 4)
        X, Z = mc_sample(model, rng(1), n=100_000)
        for x in (0.0, 1.0):
            rows = Z[X[:, 0] == x]
            n = rows.shape[0]
            assert np.all(np.abs(rows.mean(axis=0) - 0.5) < 3.5 * math.sqrt(0.25 / n))
        # successive coordinates are uncorrelated too
        r = np.corrcoef(Z[:, 0], Z[:, 1])[0, 1]
        assert abs(r) < 3.5 / math.sqrt(Z.shape[0])

    def test_mean_of_x(self):
        X, _ = mc_sample(MarkovChainModel(0.1, 0.1, 3), rng(2), n=100_000)
        se = math.sqrt(0.1 * 0.9 / X.shape[0])
        assert abs(X.mean() - 0.1) < 3 * se

    def test_first_flip_rate(self):
        X, Z = mc_sample(MarkovChainModel(0.1, 0.1, 3), rng(3), n=100_000)
        rate = np.mean(Z[:, 0] != X[:, 0])
        assert abs(rate - 0.1) < 3 * math.sqrt(0.09 / X.shape[0])

    def test_shapes_and_values(self):
        X, Z = MarkovChainModel(0.2, 0.3, 7).sample(13, rng())
        assert X.shape == (13, 1) and Z.shape == (13, 7)
        assert set(np.unique(np.concatenate([X.ravel(), Z.ravel()]))) <= {0.0, 1.0}


class TestMarkovConditional:
    def test_z1_one(self):
        assert_allclose(mc_conditional(MarkovChainModel(0.1, 0.1, 5), [1, 0, 0, 1, 1]), 0.5, rtol=1e-15)

    def test_z1_zero(self):
        assert_allclose(mc_conditional(MarkovChainModel(0.1, 0.1, 5), [0, 1, 1, 0, 1]), 0.01 / 0.82, rtol=1e-14)
        assert_allclose(0.01 / 0.82, 0.0121951, rtol=1e-5)

    @pytest.mark.parametrize("z", [[0, 0, 0], [1, 1, 0], [0, 1, 1]])
    def test_fair_flip_returns_prior(self, z):
        assert_allclose(mc_conditional(MarkovChainModel(0.27, 0.5, 3), z), 0.27, rtol=1e-14)

    @given(st.lists(st.integers(0, 1), min_size=2, max_size=8), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_depends_only_on_first_coordinate(self, z, a, f):
        model = MarkovChainModel(a, f, len(z))
        other = [z[0]] + [1 - v for v in z[1:]]
        assert mc_conditional(model, z) == mc_conditional(model, other)

    def test_brute_force_bayes(self):
        # enumerate every path (x, z_1..z_p) and condition on z
        a, f, p = 0.23, 0.17, 3
        model = MarkovChainModel(a, f, p)
        for code in range(2**p):
            z = [(code >> k) & 1 for k in range(p)]
            joint = []
            for x in (0, 1):
                w = a if x else 1 - a
                prev = x
                for zj in z:
                    w *= f if zj != prev else 1 - f
                    prev = zj
                joint.append(w)
            assert_allclose(mc_conditional(model, z), joint[1] / sum(joint), rtol=1e-13)

    def test_resampling_reproduces_joint(self):
        a, f = 0.1, 0.1
        model = MarkovChainModel(a, f, 2)
        _, Z = model.sample(100_000, rng(4))
        Xr = model.resample(Z, rng(5))[:, 0]
        counts = np.array([np.sum((Xr == x) & (Z[:, 0] == z)) for x in (0, 1) for z in (0, 1)])
        probs = np.array([(1 - a) * (1 - f), (1 - a) * f, a * f, a * (1 - f)])
        pval = stats.chisquare(counts, probs * counts.sum()).pvalue
        assert pval > 0.01


class TestMarkovMoments:
    def test_half_case(self):
        mu, s2 = mc_moments(MarkovChainModel(0.1, 0.1, 2), [1, 1])
        assert_allclose((mu, s2), (0.5, 0.25), rtol=1e-15)

    def test_fair_flip(self):
        mu, s2 = mc_moments(MarkovChainModel(0.3, 0.5, 2), [0, 1])
        assert_allclose((mu, s2), (0.3, 0.3 * 0.7), rtol=1e-14)

    def test_degenerate_probe(self):
        vals = [mc_moments(MarkovChainModel(eps, 0.1, 1), [0])[1] for eps in (1e-3, 1e-6, 1e-9)]
        assert vals[0] > vals[1] > vals[2]
        # mu ~ eps f / (1 - f), so sigma2 ~ eps / 9 as eps -> 0
        assert_allclose(vals[2], 1e-9 / 9, rtol=1e-6)

    def test_oracle_shapes(self):
        model = MarkovChainModel(0.1, 0.1, 4)
        _, Z = model.sample(6, rng())
        orc = model.moment_oracle()
        assert orc.mu(Z).shape == (6, 1) and orc.sigma(Z).shape == (6, 1, 1)


class TestCalibration:
    def test_zero_snr(self):
        assert calibrate_random_effects(MarkovChainModel(0.1, 0.1, 10), 0.0).sigma_gamma2 == 0.0

    def test_stationary_chain(self):
        model = MarkovChainModel(0.5, 0.5, 9)
        assert_allclose(model.marginal_means(), 0.5, rtol=1e-15)
        assert_allclose(model.expected_sq_norm(), 4.5, rtol=1e-15)

    def test_three_step_recursion(self):
        model = MarkovChainModel(0.1, 0.1, 3)
        assert_allclose(model.marginal_means(), [0.18, 0.244, 0.2952], rtol=1e-13)
        assert_allclose(model.expected_sq_norm(), 0.7192, rtol=1e-13)

    def test_recursion_against_enumeration(self):
        a, f, p = 0.3, 0.2, 5
        model = MarkovChainModel(a, f, p)
        X, Z = model.sample(200_000, rng(6))
        se = np.sqrt(Z.var(axis=0) / Z.shape[0])
        assert np.all(np.abs(Z.mean(axis=0) - model.marginal_means()) < 3.5 * se)

    @given(st.floats(0, 20), st.floats(0.1, 5), st.integers(1, 50))
    def test_snr_round_trip(self, snr, s2, p):
        model = MarkovChainModel(0.1, 0.1, p)
        resp = calibrate_random_effects(model, snr, s2)
        regenerated = model.expected_sq_norm() * resp.sigma_gamma2 / resp.sigma_eps2
        assert abs(regenerated - snr) <= 1e-10 * max(1.0, snr)


class TestResponses:
    def test_noise_free_zero(self):
        Z = rng().random((5, 3))
        y = sample_response(RandomEffectsResponse(0.0, 0.0), None, Z, rng=rng())
        assert_allclose(y, 0.0, atol=0)

    def test_semiparametric_null_variance(self):
        model = MarkovChainModel(0.1, 0.1, 2)
        X, Z = model.sample(100_000, rng(7))
        resp = SemiparamResponse([0.0], lambda Z: np.zeros(Z.shape[0]), 2.0)
        y = sample_response(resp, X, Z, model.moment_oracle(), rng(8))
        n = y.size
        se = 2.0 * math.sqrt(2.0 / (n - 1))
        assert abs(y.var(ddof=1) - 2.0) < 3 * se

    def test_semiparametric_noiseless(self):
        model = MarkovChainModel(0.1, 0.1, 3)
        X, Z = model.sample(20, rng(9))
        g = lambda Z: Z.sum(axis=1)  # noqa: E731
        resp = SemiparamResponse([1.5], g, 0.0)
        mu = np.array([mc_conditional(model, z) for z in Z])
        y = sample_response(resp, X, Z, model.moment_oracle(), rng(10))
        assert_allclose(y, (X[:, 0] - mu) * 1.5 + Z.sum(axis=1), rtol=1e-14)

    def test_gamma_shape_checked(self):
        with pytest.raises(DomainError):
            RandomEffectsResponse(1.0, 1.0).sample(np.ones((3, 2)), rng(), gamma=np.ones(3))


class TestGaussianDesign:
    def test_orthogonal_covariance(self):
        X, Z = gaussian_sample(GaussianDesign(1, 3), rng(11), n=100_000)
        prod = X[:, :1] * Z
        se = prod.std(axis=0) / math.sqrt(X.shape[0])
        assert np.all(np.abs(prod.mean(axis=0)) < 3 * se)

    def test_orthogonal_moments(self):
        orc = GaussianDesign(1, 4).moment_oracle()
        Z = rng().standard_normal((5, 4))
        assert_allclose(orc.mu(Z), 0.0, atol=0)
        assert_allclose(orc.sigma(Z), 1.0, atol=0)

    def test_schur_against_precision_matrix(self):
        C = np.array([[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 1.5]])
        design = GaussianDesign(1, 2, C)
        P = np.linalg.inv(C)
        # X | Z ~ N(-P_xz z / P_xx, 1 / P_xx)
        z = np.array([[0.7, -1.2]])
        assert_allclose(design.conditional_mean(z)[0, 0], -(P[0, 1:] @ z[0]) / P[0, 0], rtol=1e-12)
        assert_allclose(design.conditional_cov()[0, 0], 1 / P[0, 0], rtol=1e-12)

    def test_conditional_sampling_matches_schur(self):
        C = np.array([[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 1.5]])
        design = GaussianDesign(1, 2, C)
        z = np.array([[0.7, -1.2]])
        draws = design.resample(z, rng(12), size=50_000)[:, 0, 0]
        m, v = design.conditional_mean(z)[0, 0], design.conditional_cov()[0, 0]
        assert abs(draws.mean() - m) < 3 * math.sqrt(v / draws.size)
        assert abs(draws.var() - v) < 3 * v * math.sqrt(2 / draws.size)

    def test_rejects_non_psd(self):
        with pytest.raises(DomainError):
            GaussianDesign(1, 1, np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestDataset:
    def test_reshapes(self):
        data = Dataset(np.arange(3.0), [1, 2, 3], np.ones(3))
        assert data.X.shape == (3, 1) and data.Z.shape == (3, 1) and data.n == 3 and data.d == 1

    def test_row_mismatch(self):
        with pytest.raises(DomainError):
            Dataset(np.ones(3), np.ones(2), np.ones(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampling_is_deterministic(seed):
    model = MarkovChainModel(0.2, 0.3, 5)
    a = model.sample(10, np.random.default_rng(seed))
    b = model.sample(10, np.random.default_rng(seed))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
