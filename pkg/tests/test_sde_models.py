"""
Tests for the SDE models and their one-step update coefficients
"""

import numpy as np
import pytest

from src.config import GBM2D_PARAMS, HESTON_PARAMS, SABR_PARAMS
from src.errors import (
    ConfigurationError,
    DegenerateDiffusionError,
    ParameterDomainError,
    Wo2UnsupportedError,
)
from src.models.sde_models import (
    GbmModel,
    HestonModel,
    SabrModel,
    Schedule,
    build_model,
    builtin_models,
    euler_coeffs,
    wo2_coeffs,
)

DT = 1.0 / 12.0


class TestSchedule:

    def test_step_size(self):
        schedule = Schedule(1.0, 12, (30, 15))
        assert schedule.dt == pytest.approx(DT)
        np.testing.assert_allclose(schedule.times()[[0, -1]], [0.0, 1.0])
        assert schedule.sizes == (30, 15)

    @pytest.mark.parametrize('horizon, steps, sizes', [
        (0.0, 12, (10,)),
        (-1.0, 12, (10,)),
        (1.0, 0, (10,)),
        (1.0, 12, (0, 5)),
    ])
    def test_rejects_invalid_schedules(self, horizon, steps, sizes):
        with pytest.raises(ConfigurationError):
            Schedule(horizon, steps, sizes)


class TestCatalog:

    def test_builtin_models(self):
        models = builtin_models()
        assert set(models) == {'gbm', 'gbm2d', 'heston', 'sabr'}
        assert isinstance(models['heston'], HestonModel)
        assert isinstance(models['sabr'], SabrModel)
        assert models['gbm2d'].dim == 2
        assert models['gbm'].dim == 1

    def test_unknown_model(self):
        with pytest.raises(ValueError, match="Unknown model_type"):
            build_model('cir', {})

    def test_unknown_parameter(self):
        params = dict(HESTON_PARAMS, lambda_=0.1)
        with pytest.raises(ParameterDomainError, match="Unknown parameters"):
            build_model('heston', params)

    def test_missing_parameter(self):
        params = {k: v for k, v in SABR_PARAMS.items() if k != 'nu'}
        with pytest.raises(ParameterDomainError, match="Missing parameters"):
            build_model('sabr', params)

    @pytest.mark.parametrize('name, key, value', [
        ('heston', 'rho', 1.0),
        ('heston', 'v0', -0.01),
        ('heston', 'sigma', 0.0),
        ('sabr', 'beta', 1.2),
        ('sabr', 'y0', 0.0),
        ('gbm', 'sigma', -0.2),
    ])
    def test_parameter_domains(self, name, key, value):
        base = {'heston': HESTON_PARAMS, 'sabr': SABR_PARAMS, 'gbm': {'x0': 100.0, 'r': 0.0, 'sigma': 0.2}}[name]
        with pytest.raises(ParameterDomainError):
            build_model(name, dict(base, **{key: value}))

    def test_gbm_correlation(self):
        model = build_model('gbm2d', GBM2D_PARAMS)
        np.testing.assert_allclose(model.correlation, [[1.0, -0.6], [-0.6, 1.0]])
        assert model.name == 'gbm2d'

    def test_gbm_rejects_indefinite_correlation(self):
        corr = [[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]
        with pytest.raises(ParameterDomainError):
            GbmModel({'x0': [1.0, 1.0, 1.0], 'r': 0.0, 'sigma': 0.2, 'rho': corr})

    def test_sabr_rate_is_optional(self):
        assert build_model('sabr', SABR_PARAMS).rate == 0.0

    def test_heston_feller_ratio(self):
        assert build_model('heston', HESTON_PARAMS).feller_ratio == pytest.approx(1.0)


class TestEulerCoefficients:

    def test_gbm_values(self, gbm2d_model):
        c, m = euler_coeffs(gbm2d_model, np.array([110.0, 90.0]), 0, DT)
        assert c == pytest.approx(110.458333, abs=1e-6)
        assert m == pytest.approx(3.175426, abs=1e-6)

    def test_heston_variance_is_truncated(self, heston_model):
        x = np.array([[100.0, 100.0], [0.09, -0.01]])
        c, m = euler_coeffs(heston_model, x, 0, DT, allow_point_mass=True)
        assert m[0] == pytest.approx(0.3 * 100.0 * np.sqrt(DT))
        assert m[1] == 0.0
        with pytest.raises(DegenerateDiffusionError):
            euler_coeffs(heston_model, x, 1, DT)

    def test_heston_diffusion(self, heston_model):
        b = heston_model.diffusion(np.array([100.0, 0.09]))
        np.testing.assert_allclose(b, [30.0, 0.18])

    def test_point_mass_allowed_on_request(self):
        model = build_model('gbm', {'x0': 100.0, 'r': 0.05, 'sigma': 0.0})
        c, m = euler_coeffs(model, np.array([[100.0]]), 0, DT, allow_point_mass=True)
        assert m[0] == 0.0
        assert c[0] == pytest.approx(100.0 * (1.0 + 0.05 * DT))


class TestWo2Coefficients:

    def test_sabr_volatility(self, sabr_model):
        mbar, cbar, lam = wo2_coeffs(sabr_model, 0.4, 1, DT)
        assert mbar == pytest.approx(0.0026667, abs=1e-7)
        assert cbar == pytest.approx(0.4 - 0.064 / 24.0 - 0.2, abs=1e-12)
        assert lam == pytest.approx(75.0)

    def test_sabr_update_is_a_martingale(self, sabr_model):
        y = np.array([0.1, 0.4, 0.9])
        mbar, cbar, lam = wo2_coeffs(sabr_model, y, 1, DT)
        np.testing.assert_allclose(mbar * (1.0 + lam) + cbar, y, rtol=1e-12)

    def test_heston_variance(self, heston_model):
        mbar, _, _ = wo2_coeffs(heston_model, 0.09, 1, DT)
        assert mbar == pytest.approx(0.0075)

    def test_heston_mean_is_second_order(self, heston_model):
        kappa, theta = HESTON_PARAMS['kappa'], HESTON_PARAMS['theta']
        v = 0.05
        mbar, cbar, lam = wo2_coeffs(heston_model, v, 1, DT)
        drift = kappa * (theta - v)
        expected = v + drift * DT - 0.5 * kappa * drift * DT ** 2
        assert mbar * (1.0 + lam) + cbar == pytest.approx(expected, rel=1e-12)

    def test_zero_variance_is_floored(self, heston_model):
        mbar, cbar, lam = wo2_coeffs(heston_model, 0.0, 1, DT)
        assert np.isfinite(cbar) and np.isfinite(lam)
        assert mbar > 0.0

    def test_non_autonomous_dimension(self, heston_model):
        with pytest.raises(ConfigurationError):
            wo2_coeffs(heston_model, 100.0, 0, DT)

    def test_vanishing_diffusion_derivative(self):
        model = build_model('gbm', {'x0': 100.0, 'r': 0.05, 'sigma': 0.0})
        with pytest.raises(Wo2UnsupportedError):
            wo2_coeffs(model, 100.0, 0, DT)


class TestSecondOrderCorrection:

    LADDER = [1.0 / 12.0, 1.0 / 24.0, 1.0 / 48.0, 1.0 / 96.0]

    @staticmethod
    def _gap(model, n, xn, dt):
        a = model.scalar_coefficients(n, xn)[0]
        mbar, cbar, lam = wo2_coeffs(model, xn, n, dt)
        return float(mbar * (1.0 + lam) + cbar - (xn + a * dt))

    @pytest.mark.parametrize('name, n, xn', [('heston', 1, 0.05), ('gbm2d', 0, 110.0), ('gbm2d', 1, 90.0)])
    def test_mean_gap_to_euler_shrinks_like_dt_squared(self, name, n, xn):
        params = {'heston': HESTON_PARAMS, 'gbm2d': GBM2D_PARAMS}[name]
        model = build_model(name, params)
        gaps = [self._gap(model, n, xn, dt) for dt in self.LADDER]
        for coarse, fine in zip(gaps[:-1], gaps[1:]):
            assert coarse / fine == pytest.approx(4.0, rel=1e-6)

    def test_gbm_gap_value(self, gbm2d_model):
        r = GBM2D_PARAMS['r']
        assert self._gap(gbm2d_model, 0, 110.0, DT) == pytest.approx(0.5 * r * r * 110.0 * DT ** 2, rel=1e-8)

    def test_sabr_volatility_has_no_gap(self, sabr_model):
        for dt in self.LADDER:
            assert self._gap(sabr_model, 1, 0.4, dt) == pytest.approx(0.0, abs=1e-14)


class TestScalarCoefficientDerivatives:

    @staticmethod
    def _check(model, n, states):
        for xn in states:
            h = 1e-5 * xn
            up = model.scalar_coefficients(n, xn + h)
            down = model.scalar_coefficients(n, xn - h)
            a, da, d2a, b, db, d2b = model.scalar_coefficients(n, xn)
            fd = [(u - d) / (2.0 * h) for u, d in zip(up, down)]
            np.testing.assert_allclose(fd[0], da, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(fd[1], d2a, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(fd[3], db, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(fd[4], d2b, rtol=1e-6, atol=1e-9)

    def test_gbm(self, gbm2d_model, rng):
        for n in (0, 1):
            self._check(gbm2d_model, n, rng.uniform(50.0, 150.0, 5))

    def test_heston_variance(self, heston_model, rng):
        self._check(heston_model, 1, rng.uniform(0.01, 0.5, 5))

    def test_sabr_volatility(self, sabr_model, rng):
        self._check(sabr_model, 1, rng.uniform(0.05, 1.0, 5))

    def test_coefficients_match_drift_and_diffusion(self, heston_model):
        x = np.array([100.0, 0.07])
        a, _, _, b, _, _ = heston_model.scalar_coefficients(1, x[1])
        assert a == pytest.approx(heston_model.drift(x)[1])
        assert b == pytest.approx(heston_model.diffusion(x)[1])


class TestMonteCarloSteps:

    def test_gbm_exact_step(self):
        model = build_model('gbm', {'x0': 100.0, 'r': 0.05, 'sigma': 0.2})
        x = np.full((1, 3), 100.0)
        out = model.mc_step(x, np.zeros((1, 3)), DT)
        np.testing.assert_allclose(out, 100.0 * np.exp((0.05 - 0.02) * DT))

    def test_heston_uses_truncated_variance(self, heston_model):
        x = np.array([[100.0], [-0.02]])
        out = heston_model.mc_step(x, np.zeros((2, 1)), DT)
        assert out[0, 0] == pytest.approx(100.0 * np.exp(0.05 * DT))
        assert out[1, 0] == pytest.approx(-0.02 + 2.0 * 0.09 * DT)

    def test_sabr_volatility_stays_positive(self, sabr_model):
        x = np.array([[100.0], [0.4]])
        out = sabr_model.mc_step(x, np.array([[0.0], [-10.0]]), DT)
        assert out[1, 0] > 0.0
        assert out[0, 0] == pytest.approx(100.0)
