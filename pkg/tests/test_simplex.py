import numpy as np
import pytest

from sbc_lab.core import run_sbc
from sbc_lab.diagnostics import evolution_table
from sbc_lab.models import simplex as sx
from sbc_lab.rng import stream


def finite_difference_log_det(fn, point, h=1e-6):
    """log |det J| of fn at point by central differences; fn maps R^d -> R^d."""
    d = point.size
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (fn(point + e) - fn(point - e)) / (2.0 * h)
    sign, logdet = np.linalg.slogdet(J)
    assert sign > 0 or not np.isnan(logdet)
    return logdet


class TestMinTransform:
    def test_two_element_hand_case(self):
        t = sx.transform_min(np.array([0.5]))
        np.testing.assert_allclose(t.x, [0.25, 0.75])
        assert t.log_jacobian == pytest.approx(np.log(0.5))

    @pytest.mark.parametrize("K", [3, 4, 5])
    def test_output_in_ordered_simplex(self, K):
        rng = stream(1, K)
        for _ in range(50):
            t = sx.transform_min(rng.uniform(0.01, 0.99, K - 1))
            assert t.x.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(np.diff(t.x) > 0.0)
            assert t.x[0] > 0.0

    @pytest.mark.parametrize("K", [3, 4, 5])
    def test_log_jacobian_matches_finite_differences(self, K):
        rng = stream(2, K)
        for _ in range(100):
            u = rng.uniform(0.05, 0.95, K - 1)
            numeric = finite_difference_log_det(lambda v: sx.transform_min(v).x[: K - 1], u)
            assert sx.transform_min(u).log_jacobian == pytest.approx(numeric, abs=1e-6)

    def test_boundary_rejected(self):
        with pytest.raises(sx.DomainError):
            sx.transform_min(np.array([0.0, 0.5]))
        with pytest.raises(sx.DomainError):
            sx.transform_min(np.array([0.5, 1.0]))


class TestSoftmaxTransform:
    def test_fixed_and_bad_differ_by_exactly_log_s(self):
        rng = stream(3, 0)
        for _ in range(50):
            v = np.cumsum(rng.uniform(0.05, 1.0, 3))
            s = 1.0 + np.exp(v).sum()
            bad = sx.transform_softmax(v, fixed=False)
            good = sx.transform_softmax(v, fixed=True)
            np.testing.assert_array_equal(bad.x, good.x)
            assert bad.log_jacobian - good.log_jacobian == pytest.approx(np.log(s), rel=1e-12)

    @pytest.mark.parametrize("K", [3, 4, 5])
    def test_fixed_jacobian_matches_finite_differences_and_bad_does_not(self, K):
        rng = stream(4, K)
        for _ in range(100):
            v = np.cumsum(rng.uniform(0.05, 0.8, K - 1))
            numeric = finite_difference_log_det(
                lambda w: sx.transform_softmax(w, fixed=True).x[1:], v
            )
            assert sx.transform_softmax(v, fixed=True).log_jacobian == pytest.approx(
                numeric, abs=1e-6
            )
            gap = sx.transform_softmax(v, fixed=False).log_jacobian - numeric
            s = 1.0 + np.exp(v).sum()
            assert gap == pytest.approx(np.log(s), abs=1e-6)

    def test_ordering_and_domain(self):
        t = sx.transform_softmax(np.array([0.1, 0.2, 0.3]), fixed=True)
        assert np.all(np.diff(t.x) > 0.0)
        with pytest.raises(sx.DomainError):
            sx.transform_softmax(np.array([0.0]), fixed=True)  # v=0 gives x1 = x2
        with pytest.raises(sx.DomainError):
            sx.transform_softmax(np.array([0.3, 0.2]), fixed=True)


class TestGammaTransform:
    def test_normalization(self):
        np.testing.assert_allclose(
            sx.transform_gamma(np.array([1.0, 2.0, 3.0, 4.0])), [0.1, 0.2, 0.3, 0.4]
        )

    def test_ordered_gamma_matches_sorted_dirichlet(self):
        rng = stream(5, 0)
        n = 100_000
        w = np.sort(rng.gamma(2.0, 1.0, size=(n, 4)), axis=1)
        ours = w / w.sum(axis=1, keepdims=True)
        ref = np.sort(rng.dirichlet(sx.ALPHA, size=n), axis=1)
        np.testing.assert_allclose(ours.mean(axis=0), ref.mean(axis=0), rtol=0.01)

    def test_ties_rejected(self):
        with pytest.raises(sx.DomainError):
            sx.transform_gamma(np.array([1.0, 1.0, 2.0, 3.0]))


class TestLogPosterior:
    def test_base_logit_jacobian_matches_finite_differences(self):
        from scipy.special import expit

        rng = stream(6, 0)
        for _ in range(20):
            z = rng.normal(size=3)
            numeric = finite_difference_log_det(lambda t: expit(t), z)
            analytic = np.log(expit(z) * (1.0 - expit(z))).sum()
            assert analytic == pytest.approx(numeric, abs=1e-6)

    def test_positive_ordered_jacobian_is_sum_of_z(self):
        rng = stream(6, 1)
        for _ in range(20):
            z = rng.normal(size=4)
            numeric = finite_difference_log_det(lambda t: np.cumsum(np.exp(t)), z)
            assert z.sum() == pytest.approx(numeric, abs=1e-6)

    def test_min_variant_finite_everywhere(self):
        rng = stream(7, 0)
        y = np.array([2, 3, 2, 3])
        for _ in range(50):
            lp = sx.log_posterior("min", rng.normal(scale=3.0, size=3), y)
            assert np.isfinite(lp)

    def test_gamma_target_not_a_function_of_x_alone(self):
        # two w with the same normalized x but different scale
        y = np.array([1, 2, 3, 4])
        z1 = np.log(np.array([1.0, 1.0, 1.0, 1.0]))  # w = (1,2,3,4)
        z2 = np.log(np.array([2.0, 2.0, 2.0, 2.0]))  # w = (2,4,6,8), same x
        lp1, x1 = sx._log_posterior_batch("gamma", z1[None, :], y[None, :].astype(float))
        lp2, x2 = sx._log_posterior_batch("gamma", z2[None, :], y[None, :].astype(float))
        np.testing.assert_allclose(x1, x2, atol=1e-12)
        assert lp1[0] != lp2[0]

    def test_overflow_maps_to_minus_inf(self):
        assert sx.log_posterior("gamma", np.full(4, 800.0), np.array([1, 2, 3, 4])) == -np.inf

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            sx.log_posterior("nosuch", np.zeros(3), np.array([1, 2, 3, 4]))


class TestRwmSampler:
    def test_standard_normal_2d_target(self):
        def target(z):
            return -0.5 * float(z @ z)

        draws, acc, ess_min = sx.rwm_sample(
            target, 2, sx.RwmConfig(warmup=500, thin=2), stream(8, 0), M=5000
        )
        assert abs(draws[:, 0].mean()) < 0.05 and abs(draws[:, 1].mean()) < 0.05
        assert abs(draws[:, 0].var() - 1.0) < 0.1
        assert 0.15 < acc < 0.55
        assert ess_min > 100

    def test_acceptance_uses_only_density_difference(self):
        # an unnormalized target (constant log shift) must sample the same law
        def t1(z):
            return -0.5 * float(z @ z)

        def t2(z):
            return -0.5 * float(z @ z) + 123.0

        a, acc_a, _ = sx.rwm_sample(t1, 2, sx.RwmConfig(warmup=500, thin=2), stream(9, 0), M=4000)
        b, acc_b, _ = sx.rwm_sample(t2, 2, sx.RwmConfig(warmup=500, thin=2), stream(9, 0), M=4000)
        assert acc_a == pytest.approx(acc_b, abs=0.02)
        np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=0.08)
        np.testing.assert_allclose(a.var(axis=0), b.var(axis=0), atol=0.12)

    def test_infinite_init_rejected(self):
        def target(z):
            return -np.inf

        with pytest.raises(sx.SamplerError):
            sx.rwm_sample(target, 2, sx.RwmConfig(warmup=100, thin=1), stream(10, 0), M=50)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            sx.RwmConfig(warmup=10)
        with pytest.raises(ValueError):
            sx.RwmConfig(thin=0)


class TestBatchedFamily:
    def test_batch_grouping_does_not_change_results(self):
        gen = sx.SimplexGenerator()
        datas = [gen.generate(stream(11, i))[1] for i in range(6)]
        fam = sx.RwmSimplexFamily("min")
        streams_a = [stream(12, i) for i in range(6)]
        all_at_once = fam.sample_batch(datas, 50, streams_a)
        one_alone = fam.sample(datas[3], 50, stream(12, 3))
        np.testing.assert_array_equal(all_at_once[3], one_alone)

    def test_ess_target_met_or_flagged(self):
        gen = sx.SimplexGenerator()
        datas = [gen.generate(stream(13, i))[1] for i in range(24)]
        fam = sx.RwmSimplexFamily("softmax-fixed")
        out = fam.sample_batch(datas, 100, [stream(14, i) for i in range(24)])
        assert all(isinstance(o, np.ndarray) for o in out)


class TestGeneratorAndExactSampler:
    def test_counts_sum_and_ordering(self):
        gen = sx.SimplexGenerator()
        rng = stream(15, 0)
        for _ in range(200):
            x, y = gen.generate(rng)
            assert y.sum() == sx.N_TRIALS
            assert np.all(np.diff(x) > 0.0)
            assert x.sum() == pytest.approx(1.0)

    def test_top_component_mean_matches_sorted_dirichlet(self):
        gen = sx.SimplexGenerator()
        rng = stream(16, 0)
        xs = np.array([gen.generate(rng)[0] for _ in range(100_000)])
        ref = np.sort(stream(17, 0).dirichlet(sx.ALPHA, size=100_000), axis=1)
        assert abs(xs[:, 3].mean() - ref[:, 3].mean()) < 0.01 * ref[:, 3].mean()

    def test_exact_sampler_ranks_pass_chi_square(self):
        from sbc_lab.diagnostics import RankSet, chi_square_uniformity

        run = run_sbc(
            sx.SimplexGenerator(),
            sx.ExactOrderedDirichletFamily(),
            sx.quantity_library(),
            S=2000,
            M=20,
            seed=808,
        )
        assert run.n_failed == 0
        for name in ("x[1]", "x[4]", "log_lik", "log_prior"):
            res = chi_square_uniformity(RankSet.from_run(run, name), n_bins=21)
            assert res.p_value > 1e-3, name

    def test_exact_sampler_matches_restricted_posterior_moments(self):
        # oracle: rejection from the unordered Dirichlet posterior
        y = np.array([1, 2, 3, 4])
        fam = sx.ExactOrderedDirichletFamily()
        draws = fam.sample(y, 20_000, stream(18, 0))
        assert np.all(np.diff(draws, axis=1) > 0.0)
        rng = stream(19, 0)
        ref = rng.dirichlet(sx.ALPHA + y, size=400_000)
        ref = ref[np.all(np.diff(ref, axis=1) > 0.0, axis=1)]
        np.testing.assert_allclose(draws.mean(axis=0), ref.mean(axis=0), rtol=0.02)


class TestSbcSmoke:
    """Reduced-size pass/fail reproduction; full scale lives in the acceptance suite."""

    def test_broken_jacobian_detected_and_exact_sampler_passes(self):
        qs = [q.name for q in sx.quantity_library()]
        bad = run_sbc(
            sx.SimplexGenerator(),
            sx.RwmSimplexFamily("softmax-bad"),
            sx.quantity_library(),
            S=150,
            M=100,
            seed=20,
            thin_stride=20,
        )
        traces = {
            t.quantity: t
            for t in evolution_table({q: bad.ranks(q) for q in qs}, 100, step=25)
        }
        assert (
            traces["x[1]"].first_rejection() is not None
            or traces["log_prior"].first_rejection() is not None
        )
        exact = run_sbc(
            sx.SimplexGenerator(),
            sx.ExactOrderedDirichletFamily(),
            sx.quantity_library(),
            S=150,
            M=100,
            seed=21,
        )
        for t in evolution_table({q: exact.ranks(q) for q in qs}, 100, step=150):
            assert t.final_log_ratio >= 0.0, t.quantity
