import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boltrom.fitting import (
    DAMPING_GUESS, GAMMA_GUESS, STIFFNESS_GUESS, FitError, fit_damping_model, fit_gamma_model,
    fit_stiffness_model, fit_zero_intercept_polynomial, nlls_fit, r_squared,
)
from boltrom.joint_models import (
    REF_CALIBRATION, REF_DAMPING, REF_LOOSENING, REF_STIFFNESS, LooseningModel,
)

PRELOADS = np.geomspace(5.8, 3013.0, 58)
GRID = np.arange(0.0, 3001.0, 100.0)


def params_of(model, names):
    return np.array([getattr(model, n) for n in names])


class TestRSquared:
    y = np.array([1.0, 2.0, 4.0, 7.0])

    def test_perfect(self):
        assert r_squared(self.y, self.y) == 1.0

    def test_mean_predictor(self):
        assert r_squared(self.y, np.full(4, self.y.mean())) == 0.0

    def test_worse_than_mean(self):
        assert r_squared(self.y, self.y[::-1]) < 0

    def test_constant_target(self):
        assert r_squared(np.ones(3), np.ones(3)) == 1.0
        assert np.isnan(r_squared(np.ones(3), np.array([1.0, 1.0, 2.0])))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30), st.integers(0, 2 ** 32 - 1))
    def test_at_most_one(self, y, seed):
        y = np.array(y)
        yhat = y + np.random.default_rng(seed).normal(size=y.size)
        r = r_squared(y, yhat)
        assert np.isnan(r) or r <= 1.0


class TestNlls:
    def test_linear_one_step(self):
        x = np.linspace(0, 1, 20)
        res = nlls_fit(lambda x, p: p[0] * x, x, 2.5 * x, [1.0])
        assert res.params[0] == pytest.approx(2.5, rel=1e-12)
        assert res.r_squared == pytest.approx(1.0, abs=1e-12) and res.converged
        # the first step points straight at the minimum; the initial damping
        # λ0 = 1e-3 max diag(JᵀJ) stops it short by the factor λ0 / (1 + λ0)
        shortfall = 1e-3 / (1 + 1e-3)
        assert res.cost_history[1] == pytest.approx(res.cost_history[0] * shortfall ** 2,
                                                    rel=1e-6)
        assert res.iterations <= 4

    def test_non_finite_at_start(self):
        with pytest.raises(FitError, match="not finite"):
            nlls_fit(lambda x, p: np.where(p[0] > 0, x, np.nan), np.ones(3), np.ones(3), [-1.0])

    def test_too_few_points(self):
        with pytest.raises(FitError):
            nlls_fit(lambda x, p: p[0] + p[1] * x, [1.0], [1.0], [0.0, 0.0])

    def test_bounds_respected(self):
        x = np.linspace(0, 1, 10)
        res = nlls_fit(lambda x, p: p[0] * x, x, 3.0 * x, [1.0], bounds=([0.0], [2.0]))
        assert res.params[0] == 2.0

    def test_inverted_bounds(self):
        with pytest.raises(FitError):
            nlls_fit(lambda x, p: p[0] * x, [1.0, 2.0], [1.0, 2.0], [1.0], bounds=([2.0], [1.0]))

    @settings(max_examples=25)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_cost_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        k = REF_STIFFNESS(PRELOADS) * (1 + 0.05 * rng.standard_normal(PRELOADS.size))
        _, res = fit_stiffness_model(PRELOADS, k)
        assert np.all(np.diff(res.cost_history) <= 0)
        assert res.residuals.size == PRELOADS.size

    @settings(max_examples=10)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        c = REF_DAMPING(PRELOADS) * (1 + 0.05 * rng.standard_normal(PRELOADS.size))
        perm = rng.permutation(PRELOADS.size)
        a, _ = fit_damping_model(PRELOADS, c)
        b, _ = fit_damping_model(PRELOADS[perm], c[perm])
        np.testing.assert_allclose([a.c_D, a.c_I, a.eta], [b.c_D, b.c_I, b.eta], rtol=1e-6)


class TestStiffnessFit:
    def test_noise_free_from_reference_guess(self):
        model, res = fit_stiffness_model(PRELOADS, REF_STIFFNESS(PRELOADS), STIFFNESS_GUESS)
        np.testing.assert_allclose(params_of(model, ("k_I", "alpha", "beta")),
                                   [9.763e5, -0.0608, 2.003], rtol=1e-6)
        assert res.r_squared == pytest.approx(1.0, abs=1e-12) and res.converged

    def test_two_percent_noise(self):
        # points span the logistic transition; R² is a property of the design
        # as much as of the fit, see the decision ledger
        t = np.concatenate(([0.0], np.geomspace(1.0, 3013.0, 57)))
        rng = np.random.default_rng(11)
        k = REF_STIFFNESS(t) * (1 + 0.02 * rng.standard_normal(t.size))
        model, res = fit_stiffness_model(t, k)
        assert model.k_I == pytest.approx(9.763e5, rel=0.03)
        assert res.r_squared > 0.99
        assert r_squared(k, REF_STIFFNESS(t)) <= res.r_squared + 1e-12

    def test_low_tension_scatter(self):
        # scatter that grows toward zero tension, as in measured data
        rng = np.random.default_rng(5)
        sigma = 0.06 * np.sqrt(100.0 / (PRELOADS + 100.0))
        k = REF_STIFFNESS(PRELOADS) * (1 + sigma * rng.standard_normal(PRELOADS.size))
        _, res = fit_stiffness_model(PRELOADS, k)
        assert 0.85 <= res.r_squared <= 0.99

    def test_too_few_points(self):
        with pytest.raises(FitError, match="at least 4"):
            fit_stiffness_model([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


class TestDampingFit:
    def test_noise_free(self):
        model, res = fit_damping_model(PRELOADS, REF_DAMPING(PRELOADS), DAMPING_GUESS)
        np.testing.assert_allclose(params_of(model, ("c_D", "c_I", "eta")),
                                   [1853.0, 1717.4, -0.00922], rtol=1e-6)
        assert res.converged

    def test_idempotent_on_grid(self):
        model, _ = fit_damping_model(GRID, REF_DAMPING(GRID))
        np.testing.assert_allclose(params_of(model, ("c_D", "c_I", "eta")),
                                   [1853.0, 1717.4, -0.00922], rtol=1e-6)

    def test_high_scatter_converges(self):
        rng = np.random.default_rng(2)
        c = REF_DAMPING(PRELOADS) + 250.0 * rng.standard_normal(PRELOADS.size)
        model, res = fit_damping_model(PRELOADS, c)
        assert res.converged
        assert model.c_I >= 0 and model.high_tension_limit >= 0

    def test_result_is_canonical(self):
        model, _ = fit_damping_model(GRID, REF_DAMPING(GRID), p0=(100.0, -2000.0, 0.01))
        assert model.c_I >= 0
        np.testing.assert_allclose(model(GRID), REF_DAMPING(GRID), rtol=1e-6)


class TestGammaFit:
    def test_noise_free(self):
        g = REF_LOOSENING(PRELOADS)
        model, res = fit_gamma_model(PRELOADS, g, GAMMA_GUESS)
        np.testing.assert_allclose(params_of(model, ("gamma_d", "gamma_I", "rho")),
                                   [11.79, 7.974, -0.00362], rtol=1e-6)
        assert res.converged

    def test_span_of_decades(self):
        t = np.linspace(0.0, 3013.0, 58)
        g = REF_LOOSENING(t)
        assert g.min() == pytest.approx(6.5e3, rel=0.01)
        assert g.max() == pytest.approx(6.4e7, rel=0.01)
        rng = np.random.default_rng(9)
        noisy = g * 10 ** (0.05 * rng.standard_normal(g.size) * np.log10(np.e))
        model, _ = fit_gamma_model(t, noisy)
        np.testing.assert_allclose(params_of(model, ("gamma_d", "gamma_I", "rho")),
                                   [11.79, 7.974, -0.00362], rtol=0.05)

    def test_linear_space_option(self):
        g = REF_LOOSENING(GRID)
        model, _ = fit_gamma_model(GRID, g, space="linear")
        assert model.gamma_d == pytest.approx(11.79, rel=1e-4)

    def test_unknown_space(self):
        with pytest.raises(ValueError):
            fit_gamma_model(GRID, REF_LOOSENING(GRID), space="ln")

    def test_negative_gamma_named(self):
        g = REF_LOOSENING(GRID)
        g[7] = -3.0
        with pytest.raises(FitError, match="index 7"):
            fit_gamma_model(GRID, g)

    def test_canonical_sign(self):
        # the mirrored parameter set describes the same curve
        mirrored = LooseningModel(11.79 - 7.974, -7.974, 0.00362)
        model, _ = fit_gamma_model(GRID, mirrored(GRID), p0=(4.0, -8.0, 0.0035))
        assert model.gamma_I > 0 and model.rho < 0


class TestCalibrationFit:
    strain = np.linspace(0.0, 0.4, 40)

    def test_reference_coefficients(self):
        poly, res = fit_zero_intercept_polynomial(self.strain, REF_CALIBRATION(self.strain))
        np.testing.assert_allclose(poly.coeffs[:3], [-575.63, 2363.7, 2718.7], rtol=1e-8)
        assert res.r_squared == pytest.approx(1.0)

    def test_linear_data(self):
        poly, _ = fit_zero_intercept_polynomial(self.strain, 2 * self.strain)
        np.testing.assert_allclose(poly.coeffs[:3], [0.0, 0.0, 2.0], atol=1e-10)

    def test_offset_not_absorbed(self):
        poly, res = fit_zero_intercept_polynomial(self.strain, self.strain + 5)
        assert np.max(np.abs(res.residuals)) > 0.1
        assert poly(0.0) == 0.0

    def test_rank_deficient(self):
        with pytest.raises(FitError):
            fit_zero_intercept_polynomial(np.zeros(10), np.ones(10))

    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=40))
    def test_zero_at_origin(self, x):
        x = np.array(x)
        if np.linalg.matrix_rank(x[:, None] ** np.arange(3, 0, -1)) < 3:
            return
        poly, _ = fit_zero_intercept_polynomial(x, np.sin(3 * x))
        assert poly(0.0) == 0.0
