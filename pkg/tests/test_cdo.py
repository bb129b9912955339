import math
import time

import numpy as np
import pytest

from kcdo.cdo import (
    PairedData,
    fit,
    fit_grouped,
    mean_variance,
    normalize,
    output_weights,
    predict_marginal,
    predict_point,
    sample,
)
from kcdo.experiments import DONUT_BOX, DonutSpec, donut_reference
from kcdo.kernels import KernelSpec, density_mass, gram, kernel_from_median
from kcdo.reconstruct import (
    DensityEstimate,
    EmbeddingCoefficients,
    embed,
    evaluate,
    l1_error,
    normalize_reference,
    uniform_reference,
)


def brute_force_beta(k, l, X, Y, Z, alpha, alpha_out, x_star):
    N, M = len(X), len(Z)
    A = np.linalg.inv(gram(l, Z) + alpha_out * np.eye(M))
    c = np.linalg.solve(gram(k, X) + N * alpha * np.eye(N), gram(k, X, np.atleast_2d(x_star))[:, 0])
    return A @ A @ gram(l, Z, Y) @ c / M**2


def small_problem(rng, N=30, M=16, d_in=1, d_out=1):
    X = rng.uniform(-1, 1, (N, d_in))
    Y = np.sin(2 * X[:, :d_out]) + 0.2 * rng.standard_normal((N, d_out))
    ref = uniform_reference([(-2, 2)] * d_out, M)
    return PairedData(X, Y), ref


class TestPairedData:
    def test_row_mismatch(self):
        with pytest.raises(ValueError, match="rows"):
            PairedData(np.zeros((3, 1)), np.zeros((2, 1)))

    def test_empty_group(self):
        with pytest.raises(ValueError, match="empty group"):
            PairedData(np.zeros((3, 1)), np.zeros((3, 1)), groups=[0, 2, 2])

    def test_with_groups_partitions_rows(self):
        X = np.array([[1.0], [0.0], [1.0], [1.0]])
        d = PairedData.with_groups(X, np.arange(4.0)[:, None])
        assert d.group_sizes.sum() == 4
        np.testing.assert_array_equal(d.inputs[:, 0], [0.0, 1.0])
        np.testing.assert_array_equal(d.group_sizes, [1, 3])
        assert d.has_repeats


class TestFit:
    def test_size_one(self):
        k, l = KernelSpec.laplace(1.0, 1), KernelSpec.gaussian(1.0, 1)
        ref = uniform_reference([(0, 1)], 1)
        y = 0.1
        m = fit(PairedData([[0.0]], [[y]]), ref, k, l, alpha=0.3, alpha_out=0.2)
        lzy = math.exp(-0.5 * (0.5 - y) ** 2)
        assert m.W.shape == (1, 1)
        assert m.W[0, 0] == pytest.approx(lzy / 1.2**2, rel=1e-14)
        x_star = 0.4
        beta = predict_point(m, [x_star]).beta
        assert beta[0] == pytest.approx(lzy / 1.2**2 / 1.3 * math.exp(-x_star), rel=1e-14)

    def test_schedule_sets_both_alphas(self, rng):
        data, ref = small_problem(rng)
        m = fit(data, ref, schedule=(0.3, 0.4, 0.9))
        expected = max(16**-0.4, 30**-0.6) ** 0.9
        assert m.alpha == m.alpha_out == pytest.approx(expected)
        assert m.input_reg == pytest.approx(30 * expected)

    def test_refit_is_bitwise_identical(self, rng):
        data, ref = small_problem(rng)
        np.testing.assert_array_equal(fit(data, ref).W, fit(data, ref).W)

    def test_dimension_mismatch(self, rng):
        data, ref = small_problem(rng)
        with pytest.raises(ValueError):
            fit(data, uniform_reference([(0, 1), (0, 1)], 4))
        with pytest.raises(ValueError):
            fit(data, ref, KernelSpec.laplace(1.0, 2))

    def test_rejects_non_positive_alpha(self, rng):
        data, ref = small_problem(rng)
        with pytest.raises(ValueError):
            fit(data, ref, alpha=0.0)
        with pytest.raises(ValueError):
            fit(data, ref, alpha=0.1, alpha_out=-1.0)

    def test_donut_fit_time(self):
        X, Y = DonutSpec().sample((0, 2500))
        t = time.perf_counter()
        fit(PairedData(X, Y), donut_reference(2500))
        assert time.perf_counter() - t < 10.0


class TestPredictPoint:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_assembly(self, seed):
        r = np.random.default_rng(seed)
        data, ref = small_problem(r, N=40, M=25, d_in=2, d_out=1)
        k, l = KernelSpec.laplace(0.7, 2), KernelSpec.gaussian(0.5, 1)
        m = fit(data, ref, k, l, alpha=0.05, alpha_out=0.02)
        x = r.uniform(-1, 1, 2)
        np.testing.assert_allclose(predict_point(m, x).beta,
                                   brute_force_beta(k, l, data.X, data.Y, ref.points, 0.05, 0.02, x),
                                   rtol=1e-10, atol=1e-13)

    def test_far_input(self, rng):
        data, ref = small_problem(rng)
        m = fit(data, ref, KernelSpec.laplace(0.1, 1), "gaussian")
        assert np.max(gram(m.input_kernel, m.X, [[100.0]])) <= 1e-12
        assert np.max(np.abs(predict_point(m, [100.0]).beta)) <= 1e-10

    def test_dimension_mismatch(self, rng):
        data, ref = small_problem(rng)
        with pytest.raises(ValueError):
            predict_point(fit(data, ref), [0.0, 1.0])

    def test_donut_ridge_modes(self):
        X, Y = DonutSpec().sample((0, 2500))
        m = fit(PairedData(X, Y), donut_reference(2500))
        grid = uniform_reference(DONUT_BOX, 200**2).points
        v = evaluate(predict_point(m, [0.0]), grid)
        for sign in (1.0, -1.0):
            half = sign * grid[:, 0] > 0
            peak = grid[np.argmax(np.where(half, v, -np.inf))]
            assert math.hypot(peak[0] - sign, peak[1]) <= 0.35


class TestPredictMarginal:
    def test_dirac_embedding(self, rng):
        data, ref = small_problem(rng)
        m = fit(data, ref)
        for x in rng.uniform(-1.5, 1.5, 50):
            mu = EmbeddingCoefficients([[x]], [1.0], m.input_kernel)
            np.testing.assert_allclose(predict_marginal(m, mu).beta, predict_point(m, [x]).beta,
                                       rtol=0, atol=1e-14)

    def test_average_of_two_points(self, rng):
        data, ref = small_problem(rng)
        m = fit(data, ref)
        mu = EmbeddingCoefficients([[-0.3], [0.6]], [0.5, 0.5], m.input_kernel)
        expected = 0.5 * (predict_point(m, [-0.3]).beta + predict_point(m, [0.6]).beta)
        np.testing.assert_allclose(predict_marginal(m, mu).beta, expected, rtol=1e-12, atol=1e-15)

    def test_linear_in_weights(self, rng):
        data, ref = small_problem(rng)
        m = fit(data, ref)
        A = rng.uniform(-1, 1, (7, 1))
        w1, w2 = rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(7))
        b = lambda w: predict_marginal(m, EmbeddingCoefficients(A, w, m.input_kernel)).beta
        lam = 0.25
        np.testing.assert_allclose(b(lam * w1 + (1 - lam) * w2), lam * b(w1) + (1 - lam) * b(w2),
                                   rtol=1e-12, atol=1e-15)

    def test_kernel_mismatch(self, rng):
        data, ref = small_problem(rng)
        m = fit(data, ref)
        with pytest.raises(ValueError, match="kernel"):
            predict_marginal(m, embed([[0.0]], KernelSpec.gaussian(1.0, 1)))

    def test_donut_ring(self, oracle):
        spec = DonutSpec()
        X, Y = spec.sample((0, 2500))
        m = fit(PairedData(X, Y), donut_reference(2500))
        r = math.cos(math.radians(spec.rotation_deg))
        U = np.random.default_rng((0, 2500, 1)).uniform(-r, r, (10_000, 1))
        evalref = uniform_reference(DONUT_BOX, 100**2)
        est = normalize_reference(predict_marginal(m, embed(U, m.input_kernel)), evalref)
        err = l1_error(est, spec.marginal_given_uniform(-r, r), evalref)
        assert err == pytest.approx(oracle["donut_marginal"]["errors"][0], rel=1e-6)
        assert err <= oracle["donut_marginal"]["tau2"]


class TestGrouped:
    def test_singleton_groups(self, rng):
        data, ref = small_problem(rng)
        g = PairedData(data.X, data.Y, np.arange(data.N), data.X)
        k, l = KernelSpec.laplace(0.5, 1), KernelSpec.gaussian(0.4, 1)
        a = fit(data, ref, k, l, alpha=0.01, alpha_out=0.01)
        b = fit_grouped(g, ref, k, l, alpha=0.01, alpha_out=0.01)
        for x in (-0.5, 0.0, 0.7):
            np.testing.assert_allclose(predict_point(b, [x]).beta, predict_point(a, [x]).beta,
                                       rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("n_per", [2, 5])
    def test_equal_groups_match_flat_fit(self, rng, n_per):
        n_d = 12
        Xd = rng.uniform(-1, 1, (n_d, 2))
        X = np.repeat(Xd, n_per, axis=0)
        Y = X[:, :1] + 0.3 * rng.standard_normal((n_d * n_per, 1))
        ref = uniform_reference([(-2, 2)], 20)
        k, l = KernelSpec.laplace(0.8, 2), KernelSpec.gaussian(0.5, 1)
        flat = fit(PairedData(X, Y), ref, k, l, alpha=0.02, alpha_out=0.01)
        grouped = fit_grouped(PairedData.with_groups(X, Y), ref, k, l, alpha=0.02, alpha_out=0.01)
        assert grouped.W.shape == (20, n_d) and grouped.grouped
        for x in rng.uniform(-1, 1, (5, 2)):
            b_flat = brute_force_beta(k, l, X, Y, ref.points, 0.02, 0.01, x)
            np.testing.assert_allclose(predict_point(flat, x).beta, b_flat, rtol=1e-8, atol=1e-12)
            np.testing.assert_allclose(predict_point(grouped, x).beta, b_flat, rtol=1e-8, atol=1e-12)

    def test_group_means_of_output_features(self):
        X = np.array([[0.0], [0.0], [1.0]])
        Y = np.array([[0.0], [1.0], [3.0]])
        ref = uniform_reference([(0, 1)], 1)
        l = KernelSpec.gaussian(1.0, 1)
        m = fit_grouped(PairedData.with_groups(X, Y), ref, KernelSpec.laplace(1.0, 1), l,
                        alpha=0.1, alpha_out=0.1)
        col = gram(l, ref.points, Y)[0]
        np.testing.assert_allclose(m.W[0], [col[:2].mean(), col[2]] / np.float64(1.1**2), rtol=1e-14)
        assert m.input_reg == pytest.approx(0.2)


class TestNormalize:
    def test_example(self):
        k = KernelSpec.gaussian(1.0, 1)
        n = normalize(DensityEstimate([[0.0], [1.0]], [2.0, 2.0], k))
        np.testing.assert_allclose(n.beta, [2 / (4 * math.sqrt(2 * math.pi))] * 2, rtol=1e-15)
        assert n.beta.sum() * density_mass(k) == pytest.approx(1.0, rel=1e-15)
        assert n.normalized

    def test_idempotent(self, rng):
        k = KernelSpec.laplace(0.3, 2)
        n = normalize(DensityEstimate(rng.normal(size=(6, 2)), rng.uniform(-0.2, 1, 6), k))
        np.testing.assert_allclose(normalize(n).beta, n.beta, rtol=1e-15, atol=0)
        fresh = DensityEstimate(n.ref_points, n.beta, k)
        np.testing.assert_allclose(normalize(fresh).beta, n.beta, rtol=1e-15, atol=0)

    def test_non_positive_mass(self):
        est = DensityEstimate([[0.0], [1.0]], [1.0, -1.0], KernelSpec.gaussian(1.0, 1))
        with pytest.raises(ValueError, match="mass non-positive, cannot normalize"):
            normalize(est)

    def test_laplace_integral(self):
        k = KernelSpec.laplace(0.2, 1)
        n = normalize(DensityEstimate([[0.0], [0.5]], [1.0, 3.0], k))
        ref = uniform_reference([(-8, 8)], 20000)
        assert ref.total_mass * evaluate(n, ref.points).mean() == pytest.approx(1.0, rel=1e-6)


class TestSample:
    def test_concentrated(self):
        est = DensityEstimate([[0.3, -1.0]], [1.0], KernelSpec.gaussian(1e-6, 2))
        s = sample(est, 1000, seed=0)
        assert s.shape == (1000, 2)
        assert np.max(np.abs(s - [0.3, -1.0])) <= 1e-4

    def test_zero_weight_never_drawn(self):
        est = DensityEstimate([[0.0], [100.0]], [1.0, 0.0], KernelSpec.laplace(0.1, 1))
        assert np.all(sample(est, 5000, seed=1) < 50)

    def test_balanced(self):
        est = DensityEstimate([[0.0], [10.0]], [0.5, 0.5], KernelSpec.gaussian(0.1, 1))
        frac = np.mean(sample(est, 10_000, seed=2)[:, 0] < 5)
        assert 0.47 <= frac <= 0.53

    def test_negative_weights_dropped(self):
        est = DensityEstimate([[0.0], [10.0]], [1.0, -3.0], KernelSpec.gaussian(0.1, 1))
        np.testing.assert_array_equal(output_weights(est), [1.0, 0.0])
        assert np.all(sample(est, 1000, seed=0) < 5)

    def test_deterministic(self):
        est = DensityEstimate([[0.0], [1.0]], [0.3, 0.7], KernelSpec.laplace(0.5, 1))
        np.testing.assert_array_equal(sample(est, 100, seed=9), sample(est, 100, seed=9))
        g1, g2 = np.random.default_rng(4), np.random.default_rng(4)
        np.testing.assert_array_equal(sample(est, 10, g1), sample(est, 10, g2))

    def test_errors(self):
        with pytest.raises(ValueError):
            sample(DensityEstimate([[0.0]], [-1.0], KernelSpec.gaussian(1.0, 1)), 5, 0)
        prod = KernelSpec.product([KernelSpec.laplace(1.0, 1), KernelSpec.gaussian(1.0, 1)])
        if not prod.is_density:
            with pytest.raises(ValueError):
                sample(DensityEstimate([[0.0, 0.0]], [1.0], prod), 5, 0)


class TestMeanVariance:
    def test_example(self):
        k = KernelSpec.gaussian(0.1, 1)
        n = normalize(DensityEstimate([[0.0], [2.0]], [0.5, 0.5], k))
        mean, var = mean_variance(n)
        assert mean[0] == pytest.approx(1.0)
        assert var[0] == pytest.approx(1.01)
        assert not mean_variance(n).renormalized

    def test_single_component(self):
        k = KernelSpec.laplace(0.3, 2)
        mom = mean_variance(normalize(DensityEstimate([[0.5, -1.0]], [2.0], k)))
        np.testing.assert_allclose(mom.mean, [0.5, -1.0])
        np.testing.assert_allclose(mom.variance, [0.18, 0.18])

    def test_unnormalized_flagged(self):
        est = DensityEstimate([[0.0], [2.0]], [0.3, -0.1], KernelSpec.gaussian(0.1, 1))
        mom = mean_variance(est)
        assert mom.renormalized
        assert mom.mean[0] == 0.0

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_sampling(self, seed):
        r = np.random.default_rng(seed)
        k = KernelSpec.gaussian(0.3, 2)
        est = normalize(DensityEstimate(r.uniform(-2, 2, (5, 2)), r.uniform(0, 1, 5), k))
        mean, var = mean_variance(est)
        s = sample(est, 100_000, seed=seed)
        se_mean = np.sqrt(var / len(s))
        assert np.all(np.abs(s.mean(axis=0) - mean) <= 3 * se_mean)
        se_var = np.sqrt(np.var((s - mean) ** 2, axis=0) / len(s))
        assert np.all(np.abs(s.var(axis=0) - var) <= 3 * se_var)

    def test_heteroscedastic(self):
        wins = 0
        for seed in range(10):
            r = np.random.default_rng(seed)
            x = r.uniform(-3, 3, (500, 1))
            y = r.standard_normal((500, 1)) * (1 + np.abs(x))
            m = fit(PairedData(x, y), uniform_reference([(-10, 10)], 200))
            v0 = mean_variance(predict_point(m, [0.0])).variance[0]
            v2 = mean_variance(predict_point(m, [2.0])).variance[0]
            wins += v2 > v0
        assert wins >= 9
