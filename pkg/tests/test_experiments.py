import numpy as np
import pytest

from kcdo.experiments import (
    DONUT_BOX,
    BoundSetup,
    DonutSpec,
    donut_reference,
    resolve_bandwidth,
    run_bound_check,
    run_donut,
    summarize_donut,
)
from kcdo.linalg import prop2_bound
from kcdo.reconstruct import uniform_reference


class TestDonutSpec:
    def test_sizes(self):
        s = DonutSpec()
        assert s.N == 2500
        X, Y = s.with_n(400).sample(0)
        assert X.shape == (400, 1) and Y.shape == (400, 2)

    def test_means_on_tilted_circle(self):
        m = DonutSpec(rotation_deg=30).means()
        np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0)
        np.testing.assert_allclose(m[:, 2], -np.tan(np.radians(30)) * m[:, 0], atol=1e-15)

    @pytest.mark.parametrize("kw", [{"noise_std": 0.0}, {"n_means": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DonutSpec(**kw)

    def test_ladder_multiple(self):
        with pytest.raises(ValueError):
            DonutSpec().with_n(120)

    @pytest.mark.parametrize("x", [0.0, 1.0])
    def test_conditional_integrates_to_one(self, x):
        box = uniform_reference(DONUT_BOX, 200**2)
        mass = box.total_mass * DonutSpec().conditional(x)(box.points).mean()
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_marginal_integrates_to_one(self):
        box = uniform_reference(DONUT_BOX, 200**2)
        r = np.cos(np.radians(10))
        f = DonutSpec().marginal_given_uniform(-r, r)
        assert box.total_mass * f(box.points).mean() == pytest.approx(1.0, abs=1e-6)

    def test_reference_is_floor_sqrt_squared(self):
        assert [donut_reference(N).M for N in (100, 400, 500, 2500)] == [100, 400, 484, 2500]


class TestResolveBandwidth:
    def test_explicit(self):
        k = resolve_bandwidth("product", 0.5, np.zeros((3, 2)))
        assert k.family == "product" and k.dimension == 2

    def test_unknown(self):
        with pytest.raises(ValueError):
            resolve_bandwidth("cauchy", 1.0, np.zeros((3, 1)))


class TestRunDonut:
    def test_small(self):
        runs = run_donut(DonutSpec(), ladder=(100,), seeds=(0, 1), eval_side=20)
        assert len(runs) == 2 and runs[0].M == 100
        med = summarize_donut(runs)
        assert set(med["100"]) == {"0", "1"}
        assert np.isfinite(med["100"]["0"])


class TestBoundCheck:
    def test_probability_column_is_the_bound(self):
        setup = BoundSetup(M0=20_000, n_basis=30)
        rows = run_bound_check([(500, 800)], trials=5, setup=setup)
        r = rows[0]
        expected = prop2_bound(800, 500, 0.25, 0.25, r["alpha"], 1.0, r["mu_norm"])
        assert r["probability"] == expected.probability
        assert r["epsilon"] == expected.epsilon

    def test_mu_error_halves_when_n_quadruples(self):
        setup = BoundSetup(M0=20_000, n_basis=30)
        rows = run_bound_check([(1000, 1000), (4000, 1000)], trials=100, alpha=0.05, setup=setup)
        ratio = rows[1]["median_mu_error"] / rows[0]["median_mu_error"]
        assert 0.35 <= ratio <= 0.65

    def test_span_covers_the_setup(self):
        setup = BoundSetup()
        basis = setup.basis()
        grid = np.linspace(0, 1, 1001)
        assert np.max(basis.residual(grid)) < 1e-6
