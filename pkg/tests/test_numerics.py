"""Quadrature engine and stable primitives."""

import math

import numpy as np
import pytest

from coagflux.errors import QuadratureError
from coagflux.numerics import (
    QuadratureSpec,
    bracket_over_ik,
    gauss_legendre,
    half_weighted_log1pexp,
    integrate_interval,
    integrate_real_line,
    integrate_semi_infinite,
    log1pexp,
    real_line_rule,
    semi_infinite_rule,
    sinc_bracket,
    stable_bracket,
)


class TestGaussLegendre:
    def test_weights_sum_to_interval_length(self):
        _, w = gauss_legendre()
        assert math.isclose(w.sum(), 2.0, rel_tol=1e-14)

    def test_exact_for_degree_29(self):
        x, w = gauss_legendre()
        assert math.isclose(float(w @ x**28), 2.0 / 29.0, rel_tol=1e-13)
        assert abs(float(w @ x**29)) < 1e-15

    def test_cached_arrays_are_read_only(self):
        x, _ = gauss_legendre()
        with pytest.raises(ValueError):
            x[0] = 0.0


class TestStablePrimitives:
    def test_log1pexp_does_not_overflow(self):
        assert log1pexp(1000.0) == pytest.approx(1000.0)
        assert log1pexp(-1000.0) == pytest.approx(0.0, abs=1e-300)

    def test_half_weighted_log1pexp_matches_naive_form(self):
        x = np.linspace(-20.0, 20.0, 81)
        naive = np.exp(-x / 2.0) * np.log1p(np.exp(x))
        np.testing.assert_allclose(half_weighted_log1pexp(x), naive, rtol=1e-13)

    def test_half_weighted_log1pexp_finite_at_extremes(self):
        v = half_weighted_log1pexp(np.array([-800.0, 0.0, 800.0]))
        assert np.all(np.isfinite(v))
        assert v[1] == pytest.approx(math.log(2.0))

    def test_stable_bracket_matches_exponential(self):
        L, k = 2.0, 3.0
        assert stable_bracket(L, k) == pytest.approx(1.0 - np.exp(-1j * k * L), rel=1e-14)

    def test_stable_bracket_small_argument_uses_taylor_form(self):
        theta = 1e-10
        value = stable_bracket(theta, 1.0)
        assert value.imag == pytest.approx(theta, rel=1e-15)
        assert value.real == pytest.approx(theta**2 / 2.0, rel=1e-12)

    def test_stable_bracket_vectorised(self):
        out = stable_bracket(np.array([1e-10, 1.0]), 2.0)
        assert out.shape == (2,)
        assert out[1] == pytest.approx(1.0 - np.exp(-2j), rel=1e-14)

    def test_sinc_bracket(self):
        assert sinc_bracket(0.0) == pytest.approx(1.0)
        theta = 1.3
        assert sinc_bracket(theta) == pytest.approx((1.0 - np.exp(-1j * theta)) / (1j * theta), rel=1e-14)

    def test_bracket_over_ik_is_continuous_at_zero(self):
        assert bracket_over_ik(0.7, 0.0) == pytest.approx(0.7)
        assert bracket_over_ik(0.7, 1e-9) == pytest.approx(0.7, rel=1e-8)


class TestQuadratureSpec:
    @pytest.mark.parametrize(
        "changes",
        [{"abs_tol": 0.0}, {"rel_tol": -1.0}, {"tail_exponent": 0.0}, {"envelope_const": 0.0},
         {"oscillation_freq": -1.0}, {"phase_per_panel": 0.0}],
    )
    def test_rejects_bad_values(self, changes):
        with pytest.raises(QuadratureError):
            QuadratureSpec(**changes)

    def test_panel_width_caps_phase(self):
        spec = QuadratureSpec(oscillation_freq=40.0)
        assert spec.max_panel_width == pytest.approx(math.pi / 80.0)

    def test_halved(self):
        spec = QuadratureSpec().halved()
        assert spec.abs_tol == pytest.approx(5e-14)
        assert spec.rel_tol == pytest.approx(5e-12)


class TestIntegrators:
    def test_interval(self):
        value, err = integrate_interval(np.sin, 0.0, math.pi, QuadratureSpec())
        assert value.real == pytest.approx(2.0, rel=1e-13)
        assert err < 1e-12

    def test_semi_infinite_exponential(self):
        value, _ = integrate_semi_infinite(lambda z: np.exp(-z / 2.0), 0.0, QuadratureSpec())
        assert value.real == pytest.approx(2.0, rel=1e-12)

    def test_semi_infinite_oscillatory(self):
        spec = QuadratureSpec(oscillation_freq=20.0)
        value, _ = integrate_semi_infinite(lambda z: np.exp(-z / 2.0) * np.cos(20.0 * z), 0.0, spec)
        assert value.real == pytest.approx(0.5 / (0.25 + 400.0), rel=1e-9)

    def test_complex_integrand(self):
        spec = QuadratureSpec(oscillation_freq=3.0)
        value, _ = integrate_semi_infinite(lambda z: np.exp((-0.5 + 3j) * z), 0.0, spec)
        assert value == pytest.approx(1.0 / (0.5 - 3j), rel=1e-11)

    def test_real_line(self):
        value, _ = integrate_real_line(lambda z: np.exp(-np.abs(z) / 2.0), QuadratureSpec(), split=1.0)
        assert value.real == pytest.approx(4.0, rel=1e-12)

    def test_non_finite_integrand_raises(self):
        with pytest.raises(QuadratureError, match="non-finite"):
            integrate_interval(lambda z: np.full_like(z, np.nan), 0.0, 1.0, QuadratureSpec())

    def test_slow_tail_exceeds_extent(self):
        with pytest.raises(QuadratureError, match="max_extent"):
            integrate_semi_infinite(lambda z: np.exp(-1e-3 * z), 0.0, QuadratureSpec(tail_exponent=-1e-3))

    def test_bit_identical_reruns(self):
        spec = QuadratureSpec(oscillation_freq=7.0)
        f = lambda z: np.exp(-z / 2.0) * np.sin(7.0 * z) * np.log1p(z)  # noqa: E731
        a, _ = integrate_semi_infinite(f, 0.0, spec)
        b, _ = integrate_semi_infinite(f, 0.0, spec)
        assert a == b


class TestRules:
    def test_semi_infinite_rule_reusable(self):
        spec = QuadratureSpec(oscillation_freq=5.0)
        rule = semi_infinite_rule(lambda z: np.exp(-z / 2.0), 0.0, spec)
        for omega in (1.0, 3.0, 5.0):
            value = rule.integrate(np.exp(-rule.nodes / 2.0) * np.cos(omega * rule.nodes)).real
            assert value == pytest.approx(0.5 / (0.25 + omega**2), rel=1e-9)

    def test_real_line_rule_gaussian(self):
        rule = real_line_rule(lambda z: np.exp(-z * z), QuadratureSpec())
        assert rule.integrate(np.exp(-rule.nodes**2)).real == pytest.approx(math.sqrt(math.pi), rel=1e-12)
        assert np.all(np.diff(rule.nodes) > 0)

    def test_reflected_rule_covers_mirror_interval(self):
        rule = semi_infinite_rule(lambda z: np.exp(-z / 2.0), 0.0, QuadratureSpec())
        mirror = rule.reflected(0.0)
        assert np.all(mirror.nodes <= 0)
        assert mirror.integrate(np.exp(mirror.nodes / 2.0)).real == pytest.approx(2.0, rel=1e-12)
