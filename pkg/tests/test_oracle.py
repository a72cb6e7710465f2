import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import EXAMPLE_A, EXAMPLE_QE_PINV, EXAMPLE_SIGMA, EXAMPLE_SIGMA_UN, EXAMPLE_W, example_model, three_island_graph
from dense_inla.errors import RankMismatch, Unsupported
from dense_inla.gmrf import build_besag, build_iid, build_rw, scale_structure
from dense_inla.likelihood import CountData, GaussianLikelihood, PoissonLikelihood
from dense_inla.model import DesignMatrix, EffectBlock, LatentModel, PriorSpec
from dense_inla.oracle import (
    KrigingConfig,
    brute_force_theta_posterior,
    equivalence_check,
    kriging_correct,
    log_evidence_quadrature,
    sample_constrained_igmrf,
)

ONES4 = np.ones((1, 4))


def tiny_model(lik_kind="poisson", seed=0):
    """Intercept plus a scaled RW1(3), three observations each."""
    blocks = [EffectBlock("mu", build_iid(1), None, 0.01), EffectBlock("a", scale_structure(build_rw(3, 1)), 0)]
    idx = np.tile(np.arange(3), 3)
    A = np.zeros((9, 4))
    A[:, 0] = 1.0
    A[np.arange(9), 1 + idx] = 1.0
    model = LatentModel(blocks, PriorSpec(kind="pc_independent"), DesignMatrix.from_dense(A))
    rng = np.random.default_rng(seed)
    if lik_kind == "poisson":
        y = rng.poisson(np.exp(1.0 + 0.4 * np.array([-1.0, 0.0, 1.0])[idx]))
        return model, PoissonLikelihood(CountData(y, np.ones(9))), A
    prec = rng.uniform(1.0, 3.0, 9)
    return model, GaussianLikelihood(0.5 + rng.standard_normal(9) / np.sqrt(prec), prec), A


class TestKriging:
    def test_printed_chain(self):
        _, cov = kriging_correct(np.zeros(4), EXAMPLE_SIGMA_UN, ONES4)
        np.testing.assert_allclose(cov, EXAMPLE_SIGMA, atol=2e-3)

    def test_chain_from_jittered_precision(self):
        L = EXAMPLE_A.T @ np.diag(EXAMPLE_W) @ EXAMPLE_A
        Q = build_rw(4, 1).matrix + L + 1e-10 * np.eye(4)
        _, cov = kriging_correct(np.zeros(4), np.linalg.inv(Q), ONES4)
        np.testing.assert_allclose(cov, EXAMPLE_SIGMA, atol=1e-3)

    def test_already_constrained_unchanged(self):
        m = np.array([1.0, -1.0, 0.5, -0.5])
        S = EXAMPLE_QE_PINV + np.ones((4, 4))
        mean, cov = kriging_correct(m, S, ONES4)
        np.testing.assert_allclose(mean, m, atol=1e-12)
        np.testing.assert_allclose(cov, EXAMPLE_QE_PINV, atol=1e-12)

    def test_no_constraints(self):
        S = np.diag([1.0, 2.0])
        mean, cov = kriging_correct(np.ones(2), S, np.zeros((0, 2)))
        np.testing.assert_array_equal(mean, np.ones(2))
        np.testing.assert_array_equal(cov, S)

    def test_redundant_constraints(self):
        C = np.vstack([ONES4, 2 * ONES4])
        with pytest.raises(RankMismatch):
            kriging_correct(np.zeros(4), np.eye(4), C)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 3))
    def test_projection_and_idempotence(self, seed, k):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((6, 6))
        S = X @ X.T + 0.1 * np.eye(6)
        C = rng.standard_normal((k, 6))
        m = rng.standard_normal(6)
        mean, cov = kriging_correct(m, S, C)
        np.testing.assert_allclose(C @ mean, 0.0, atol=1e-9)
        np.testing.assert_allclose(C @ cov, 0.0, atol=1e-9)
        again_mean, again_cov = kriging_correct(mean, cov + C.T @ C, C)
        np.testing.assert_allclose(again_mean, mean, atol=1e-9)
        np.testing.assert_allclose(again_cov, cov, atol=1e-8)


class TestSampling:
    def test_rw1_sum_to_zero(self):
        x = sample_constrained_igmrf(build_rw(5, 1), 2.0, 50, seed=1)
        assert x.shape == (50, 5)
        np.testing.assert_allclose(x.sum(axis=1), 0.0, atol=1e-10)

    def test_rw1_covariance(self):
        x = sample_constrained_igmrf(build_rw(4, 1), 1.0, 200_000, seed=2, jitter=1e-8)
        np.testing.assert_allclose(np.cov(x.T), EXAMPLE_QE_PINV, atol=0.02)
        np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=0.01)

    def test_precision_scales_variance(self):
        # the null-space jitter does not scale with tau, so keep it negligible
        a = sample_constrained_igmrf(build_rw(4, 1), 1.0, 2000, seed=3, jitter=1e-12)
        b = sample_constrained_igmrf(build_rw(4, 1), 100.0, 2000, seed=3, jitter=1e-12)
        np.testing.assert_allclose(b, a / 10.0, rtol=1e-6, atol=1e-9)

    def test_deterministic(self):
        a = sample_constrained_igmrf(build_besag(three_island_graph()), 1.0, 5, seed=9)
        b = sample_constrained_igmrf(build_besag(three_island_graph()), 1.0, 5, seed=9)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, sample_constrained_igmrf(build_besag(three_island_graph()), 1.0, 5, seed=10))

    def test_islands_each_sum_to_zero(self):
        x = sample_constrained_igmrf(build_besag(three_island_graph()), 1.0, 20, seed=4)
        for island in ([0, 1], [2, 3], [4, 5, 6]):
            np.testing.assert_allclose(x[:, island].sum(axis=1), 0.0, atol=1e-10)

    def test_proper_structure_unconstrained(self):
        x = sample_constrained_igmrf(build_iid(3), 4.0, 100_000, seed=5)
        np.testing.assert_allclose(x.var(axis=0), 0.25, rtol=0.02)

    def test_jitter_positive(self):
        with pytest.raises(ValueError):
            KrigingConfig(jitter=0.0)


class TestQuadrature:
    def test_gaussian_exact(self):
        model, lik, A = tiny_model("gaussian")
        for theta in ([0.0], [1.5], [-1.0]):
            theta = np.array(theta)
            P = model.prior_geninv(theta).matrix
            cov = A @ P @ A.T + np.diag(1.0 / lik.precision)
            exact = model.log_prior(theta) + multivariate_normal(np.zeros(9), cov).logpdf(lik.y)
            assert log_evidence_quadrature(model, theta, lik) == pytest.approx(exact, abs=1e-8)

    def test_one_point_grid(self):
        model, lik, _ = tiny_model()
        np.testing.assert_array_equal(brute_force_theta_posterior(model, lik, [[0.3]]), [1.0])

    def test_normalized(self):
        model, lik, _ = tiny_model()
        p = brute_force_theta_posterior(model, lik, np.linspace(-2, 4, 7), nodes=12)
        assert p.sum() == pytest.approx(1.0) and np.all(p > 0)

    def test_too_large(self):
        model, lik, _ = tiny_model()
        big = LatentModel([EffectBlock("a", build_iid(6), None, 1.0)], design=DesignMatrix.from_dense(np.eye(6)))
        with pytest.raises(Unsupported):
            log_evidence_quadrature(big, np.zeros(0), GaussianLikelihood(np.zeros(6), 1.0))


class TestEquivalence:
    def test_example_shrinks_with_jitter(self):
        m = example_model()
        L = EXAMPLE_A.T @ np.diag(EXAMPLE_W) @ EXAMPLE_A
        gaps = [equivalence_check(m, np.zeros(0), L, j) for j in (1e-2, 1e-4, 1e-6, 1e-8)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 1e-7

    def test_too_large(self):
        big = LatentModel([EffectBlock("a", build_rw(61, 1), None, 1.0)])
        with pytest.raises(Unsupported):
            equivalence_check(big, np.zeros(0), np.eye(61))
