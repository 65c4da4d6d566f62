"""Kernel parametrisations and conversions."""

import math

import numpy as np
import pytest

from coagflux.errors import ParameterError
from coagflux.kernelspace import (
    HomogeneityParams,
    ShapeFunction,
    kernel_eval,
    kernel_from_profile,
    kernel_metric,
    log_grid,
    measure_envelope,
    phi_from_w,
    power_shape,
    shape_endpoint_limit,
    tabulate_phi,
    tabulate_w,
    unit_kernel,
    unit_shape,
    validate_params,
    w_from_phi,
)


class TestValidateParams:
    def test_constant_kernel(self):
        params = validate_params(0.0, 0.0)
        assert params.q == 0.0
        assert params.decay == 0.5
        assert params.power_law_exponent == 1.5

    def test_second_regime(self):
        params = validate_params(0.2, 0.1)
        assert params.q == pytest.approx(0.2)
        assert params.window == pytest.approx(0.4)

    def test_negative_window_is_normalised(self):
        params = validate_params(0.4, -0.3)
        assert params.p == pytest.approx(-0.1)
        assert params.window == pytest.approx(0.2)
        assert params.gamma == 0.4

    def test_constant_gamma_with_negative_p(self):
        params = validate_params(0.0, -0.3)
        assert params.p == pytest.approx(0.3)
        assert params.q == pytest.approx(0.3)
        assert params.window == pytest.approx(0.6)

    @pytest.mark.parametrize("gamma,p", [(0.5, 0.25), (1.0, 0.0), (0.0, -0.6), (math.nan, 0.0)])
    def test_outside_window_rejected(self, gamma, p):
        with pytest.raises(ParameterError):
            validate_params(gamma, p)

    def test_message_names_the_regime(self):
        with pytest.raises(ParameterError, match="no constant-flux regime"):
            validate_params(0.6, 0.2)

    def test_dataclass_guards_window(self):
        with pytest.raises(ParameterError):
            HomogeneityParams(gamma=0.0, p=-0.1)


class TestShapeFunctions:
    def test_outside_unit_interval_rejected(self):
        with pytest.raises(ParameterError):
            unit_shape()(np.array([0.0, 0.5]))

    def test_power_shape_symmetric(self):
        assert power_shape(0.2).symmetry_residual() < 1e-12

    def test_endpoint_limit_settles(self):
        values, spread = shape_endpoint_limit(power_shape(0.2))
        np.testing.assert_allclose(values, 1.0, rtol=1e-5)
        assert spread < 1e-6

    def test_negative_shape_rejected(self):
        with pytest.raises(ParameterError, match="non-negative"):
            ShapeFunction(phi=lambda s: np.cos(8.0 * s), p=0.0)

    def test_non_finite_shape_rejected(self):
        with pytest.raises(ParameterError, match="finite"):
            ShapeFunction(phi=lambda s: np.where(s < 0.25, np.inf, 1.0), p=0.0)

    def test_vanishing_endpoint_limit_rejected(self):
        with pytest.raises(ParameterError, match="positive limit"):
            ShapeFunction(phi=lambda s: np.where(s < 1e-5, 0.0, 1.0), p=0.0)

    @pytest.mark.parametrize("declared", [-0.2, 0.5])
    def test_wrong_endpoint_exponent_rejected(self, declared):
        with pytest.raises(ParameterError, match="does not settle"):
            ShapeFunction(phi=power_shape(0.2).phi, p=declared)

    def test_shape_of_a_log_kernel_is_accepted(self):
        params = HomogeneityParams(gamma=0.2, p=0.1)
        phi = phi_from_w(w_from_phi(power_shape(params.p), params), params)
        assert phi.p == 0.1


class TestConversions:
    def test_power_shape_in_log_variables(self):
        params = HomogeneityParams(gamma=0.2, p=0.1)
        w = w_from_phi(power_shape(params.p), params)
        y = np.linspace(-12.0, 12.0, 49)
        np.testing.assert_allclose(w(y), (2.0 * np.cosh(y / 2.0)) ** params.window, rtol=1e-12)

    def test_phi_round_trip(self):
        params = HomogeneityParams(gamma=0.2, p=0.1)
        phi = power_shape(params.p)
        back = phi_from_w(w_from_phi(phi, params), params)
        s = np.linspace(0.01, 0.99, 99)
        np.testing.assert_allclose(back(s), phi(s), rtol=1e-12)

    def test_kernel_in_log_variables(self):
        params = HomogeneityParams(gamma=0.2, p=0.1)
        phi = power_shape(params.p)
        w = w_from_phi(phi, params)
        y, z = 0.7, 5.3
        expected = (y * z) ** (params.gamma / 2.0) * w(math.log(z / y))
        assert kernel_eval(phi, params, y, z) == pytest.approx(expected, rel=1e-12)

    def test_kernel_is_symmetric_and_homogeneous(self):
        params = HomogeneityParams(gamma=0.2, p=0.1)
        phi = power_shape(params.p)
        x, y, lam = 0.3, 4.0, 7.5
        k = kernel_eval(phi, params, x, y)
        assert kernel_eval(phi, params, y, x) == pytest.approx(k, rel=1e-14)
        assert kernel_eval(phi, params, lam * x, lam * y) == pytest.approx(lam**params.gamma * k, rel=1e-12)

    def test_kernel_requires_positive_sizes(self):
        with pytest.raises(ParameterError):
            kernel_eval(unit_shape(), HomogeneityParams(0.0, 0.0), 0.0, 1.0)


class TestLogKernel:
    def test_linear_combinations(self):
        w = unit_kernel()
        z = np.linspace(-5.0, 5.0, 11)
        np.testing.assert_allclose((w + w)(z), 2.0)
        np.testing.assert_allclose(w.scaled(3.0)(z), 3.0)
        np.testing.assert_allclose((2.0 * w)(z), 2.0)

    def test_fingerprint_tracks_coefficients(self):
        assert unit_kernel().fingerprint() == unit_kernel().fingerprint()
        assert unit_kernel().fingerprint() != unit_kernel().scaled(2.0).fingerprint()

    def test_symmetry_and_envelope(self):
        w = kernel_from_profile(lambda z: 0.5 * np.exp(0.2 * np.abs(z)), q=0.2, kind="exp")
        assert w.symmetry_residual() == 0.0
        assert w.envelope_ratio() <= 1.0
        assert w.envelope_const == pytest.approx(0.5, rel=1e-8)

    def test_measure_envelope(self):
        assert measure_envelope(lambda z: 3.0 * np.exp(0.1 * np.abs(z)), 0.1) == pytest.approx(3.0, rel=1e-8)

    def test_log_grid(self):
        y = log_grid()
        assert y.size == 1024
        np.testing.assert_array_equal(y, -y[::-1])
        assert y.max() == pytest.approx(30.0)


class TestMetricAndTables:
    def test_metric(self):
        one = unit_shape()
        other = ShapeFunction(phi=lambda s: 1.5 * np.ones_like(s), p=0.0)
        assert kernel_metric(one, one, 0.0) == 0.0
        assert kernel_metric(one, other, 0.0) == pytest.approx(0.5)

    def test_tabulations(self):
        phi_df = tabulate_phi(unit_shape())
        assert list(phi_df.columns) == ["s", "phi"]
        assert len(phi_df) == 999
        w_df = tabulate_w(unit_kernel(), n=101)
        assert list(w_df.columns) == ["Y", "W"]
        assert np.allclose(w_df["W"], 1.0)
