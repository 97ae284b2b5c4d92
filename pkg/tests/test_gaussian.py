import numpy as np
import pytest
from scipy import stats

from sbc_lab.core import run_sbc
from sbc_lab.diagnostics import RankSet, chi_square_uniformity, evolution_table
from sbc_lab.models import gaussian
from sbc_lab.rng import stream


class TestGenerator:
    def test_prior_moments(self):
        gen = gaussian.GaussianGenerator(n=3)
        rng = stream(1, 0)
        mus = np.array([gen.generate(rng)[0] for _ in range(100_000)])
        assert np.all(np.abs(mus.mean(axis=0)) < 0.02)
        corr = np.corrcoef(mus[:, 0], mus[:, 1])[0, 1]
        assert abs(corr - 0.8) < 0.01

    def test_data_mean_covariance_matches_conjugacy(self):
        # marginal cov of ybar is Sigma + Sigma/n
        n = 3
        gen = gaussian.GaussianGenerator(n=n)
        rng = stream(2, 0)
        ybars = np.array([gen.generate(rng)[1].mean(axis=0) for _ in range(100_000)])
        expected = gaussian.SIGMA * (1.0 + 1.0 / n)
        observed = np.cov(ybars.T)
        np.testing.assert_allclose(observed, expected, rtol=0.03)


class TestVariantSamplers:
    def test_correct_posterior_moments(self):
        y = np.ones((3, 2))
        fam = gaussian.make_variant("correct", n=3)
        draws = fam.sample(y, 200_000, stream(3, 0))
        np.testing.assert_allclose(draws.mean(axis=0), [0.75, 0.75], atol=0.01)
        np.testing.assert_allclose(np.cov(draws.T), gaussian.SIGMA / 4.0, atol=0.01)

    def test_ignore_first_uses_remaining_points(self):
        # first point arbitrary, y2 = y3 = 0 -> mean 0, cov Sigma/3
        y = np.array([[17.0, -4.0], [0.0, 0.0], [0.0, 0.0]])
        fam = gaussian.make_variant("ignore-first", n=3)
        draws = fam.sample(y, 200_000, stream(4, 0))
        np.testing.assert_allclose(draws.mean(axis=0), [0.0, 0.0], atol=0.01)
        np.testing.assert_allclose(np.cov(draws.T), gaussian.SIGMA / 3.0, atol=0.01)

    def test_prior_only_ignores_data(self):
        fam = gaussian.make_variant("prior-only", n=3)
        a = fam.sample(np.zeros((3, 2)), 50, stream(5, 1))
        b = fam.sample(np.full((3, 2), 9.9), 50, stream(5, 1))
        np.testing.assert_array_equal(a, b)

    def test_independent_marginals_have_correct_marginals_no_correlation(self):
        y = np.ones((3, 2))
        fam = gaussian.make_variant("independent-marginals", n=3)
        draws = fam.sample(y, 200_000, stream(6, 0))
        np.testing.assert_allclose(draws.mean(axis=0), [0.75, 0.75], atol=0.01)
        np.testing.assert_allclose(draws.var(axis=0), [0.25, 0.25], atol=0.01)
        assert abs(np.corrcoef(draws.T)[0, 1]) < 0.01

    def test_small_bias_shifts_whole_simulation(self):
        y = np.zeros((3, 2))
        fam = gaussian.make_variant("small-bias", n=3)
        means = np.array([fam.sample(y, 4000, stream(7, i)).mean(axis=0) for i in range(2000)])
        # per-sim mean is bias + noise; bias sd 0.3 dominates 0.5/sqrt(4000)
        assert abs(means[:, 0].std() - 0.3) < 0.02

    @pytest.mark.parametrize("sign,invert", [(1.0, np.sqrt), (-1.0, lambda t: 1.0 - np.sqrt(1.0 - t))])
    def test_non_monotonic_marginals_follow_warped_cdf(self, sign, invert):
        # by construction F(theta') = w(u) with u uniform, so invert(F(theta'))
        # must be uniform within each data region
        n = 3
        y = sign * np.abs(stream(8, 0).standard_normal((n, 2)))
        fam = gaussian.make_variant("non-monotonic", n=n)
        draws = fam.sample(y, 50_000, stream(8, 1))
        mean = n * y.mean(axis=0) / (n + 1)
        sd = 1.0 / np.sqrt(n + 1)
        t = stats.norm.cdf((draws[:, 0] - mean[0]) / sd)
        u = invert(t)
        assert stats.kstest(u, "uniform").pvalue > 1e-3

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            gaussian.make_variant("nosuch", n=3)


class TestQuantities:
    def test_joint_log_lik_matches_scipy(self):
        n = 4
        rng = stream(9, 0)
        y = rng.standard_normal((n, 2))
        draws = rng.standard_normal((6, 2))
        lib = {q.name: q for q in gaussian.quantity_library(n)}
        ours = lib["mvn_log_lik"].evaluator(draws, y)
        ref = np.array(
            [sum(stats.multivariate_normal.logpdf(yk, d, gaussian.SIGMA) for yk in y) for d in draws]
        )
        np.testing.assert_allclose(ours, ref, rtol=1e-10)

    def test_log_lik_closed_form_at_origin(self):
        lib = {q.name: q for q in gaussian.quantity_library(1)}
        val = lib["mvn_log_lik"](np.zeros(2), np.zeros((1, 2)))
        assert val == pytest.approx(-np.log(2 * np.pi) - 0.5 * np.log(0.36))

    def test_drop_quantity_branches(self):
        lib = {q.name: q for q in gaussian.quantity_library(3)}
        assert lib["drop_mu1"](np.array([1.5, 0.0]), None) == pytest.approx(-3.5)
        assert lib["drop_mu1"](np.array([0.5, 0.0]), None) == pytest.approx(0.5)

    def test_density_ratio_on_correct_is_exactly_one(self):
        fam = gaussian.make_variant("correct", n=3)
        lib = {q.name: q for q in gaussian.quantity_library(3, fam)}
        rng = stream(10, 0)
        y = rng.standard_normal((3, 2))
        draws = rng.standard_normal((50, 2))
        np.testing.assert_array_equal(lib["density_ratio"].evaluator(draws, y), np.ones(50))

    def test_density_ratio_absent_without_closed_form(self):
        fam = gaussian.make_variant("small-bias", n=3)
        names = [q.name for q in gaussian.quantity_library(3, fam)]
        assert "density_ratio" not in names


class TestSbcSmoke:
    """Small-scale pass/fail checks; the full case studies live in the acceptance suite."""

    def test_correct_variant_passes_chi2(self):
        n = 3
        fam = gaussian.make_variant("correct", n=n)
        run = run_sbc(
            gaussian.GaussianGenerator(n), fam, gaussian.quantity_library(n, fam), S=2000, M=20, seed=12
        )
        for name in ("mu[1]", "mvn_log_lik", "density_ratio"):
            res = chi_square_uniformity(RankSet.from_run(run, name), n_bins=21)
            assert res.p_value > 1e-3, name

    def test_prior_only_likelihood_fails_fast_but_mu_passes(self):
        n = 3
        fam = gaussian.make_variant("prior-only", n=n)
        run = run_sbc(gaussian.GaussianGenerator(n), fam, gaussian.quantity_library(n, fam), S=400, M=100, seed=13)
        traces = {
            t.quantity: t
            for t in evolution_table(
                {q: run.ranks(q) for q in ("mu[1]", "mvn_log_lik")}, 100, step=10
            )
        }
        assert traces["mvn_log_lik"].first_rejection() <= 50
        assert traces["mu[1]"].final_log_ratio >= 0.0
