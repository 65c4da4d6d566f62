"""Direct-quadrature flux oracles and the end-to-end verification report."""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from coagflux import fluxcheck
from coagflux.errors import ParameterError
from coagflux.fluxcheck import (
    CONSISTENCY_RTOL,
    VerificationReport,
    bilinear_direct,
    bilinear_direct_grid,
    compute_b,
    compute_cw,
    default_x_grid,
    flux_J,
    flux_constants,
    flux_spec,
    flux_spec_for,
    oracle_spec,
    powerlaw_sampler,
    verify_constant_flux,
    write_report,
)
from coagflux.kernelspace import HomogeneityParams, kernel_from_profile, power_shape, unit_shape, w_from_phi
from coagflux.numerics import half_weighted_log1pexp
from coagflux.spectral import PeriodicField, bilinear_fourier, build_symbol_table, random_band_limited
from coagflux.symbol import eval_psi

FLAT = HomogeneityParams(gamma=0.0, p=0.0)


def make_report(B, J, tol=1e-4):
    return VerificationReport(
        J0=1.0, X_grid=np.arange(len(B), dtype=float), B_values=np.asarray(B, dtype=float),
        x_grid=np.arange(1, len(J) + 1, dtype=float), J_values=np.asarray(J, dtype=float),
        tol=tol, tol_x=2 * tol, selfsim_residual=0.0,
    )


class TestConstants:
    def test_b_for_unit_kernel(self, w_unit):
        assert compute_b(w_unit) == pytest.approx((2.0 * math.pi) ** -0.5, rel=1e-9)

    def test_cw_for_unit_kernel(self, w_unit):
        assert compute_cw(w_unit) == pytest.approx(2.0 * math.pi, rel=1e-9)

    def test_flux_constants(self, w_unit):
        c = flux_constants(w_unit, j0=4.0)
        assert c.powerlaw_const == pytest.approx(2.0 * (2.0 * math.pi) ** -0.5, rel=1e-9)
        assert c.to_dict()["j0"] == 4.0

    def test_spec_reaches_the_symbol_cross_check(self, w_unit, monkeypatch):
        seen = []
        real = fluxcheck.eval_psi

        def recording(k, w, spec=None, *args):
            seen.append(spec)
            return real(k, w, spec, *args)

        monkeypatch.setattr(fluxcheck, "eval_psi", recording)
        spec = oracle_spec().halved()
        assert compute_b(w_unit, spec) == pytest.approx((2.0 * math.pi) ** -0.5, rel=CONSISTENCY_RTOL)
        assert seen == [spec]
        assert CONSISTENCY_RTOL == 1e-8

    def test_flux_spec_follows_the_oracle_spec(self):
        default = flux_spec_for(oracle_spec())
        assert default.abs_tol == pytest.approx(flux_spec().abs_tol)
        assert default.rel_tol == pytest.approx(flux_spec().rel_tol)
        halved = flux_spec_for(oracle_spec().halved())
        assert halved.abs_tol == pytest.approx(default.abs_tol / 2)
        assert flux_spec_for(None) == flux_spec()

    @pytest.mark.parametrize("gamma,p,window", [(0.5, 0.2, 0.9), (0.2, 0.37, 0.94)])
    def test_cw_near_the_window_edge(self, gamma, p, window):
        params = HomogeneityParams(gamma=gamma, p=p)
        assert params.window == pytest.approx(window)
        # W = (2cosh(Y/2))^{γ+2p}, the log form of the power shape, kept finite far out
        w = kernel_from_profile(lambda z: np.exp(window * np.logaddexp(z / 2.0, -z / 2.0)), q=params.q, kind="power")
        y = np.linspace(-30.0, 30.0, 61)
        np.testing.assert_allclose(w(y), w_from_phi(power_shape(p), params)(y), rtol=1e-12)

        def integrand(xi):
            return float(np.abs(w(np.array([xi]))[0]) * half_weighted_log1pexp(np.array([xi]))[0])

        edges = np.arange(-1500.0, 1501.0, 50.0)
        expected = math.fsum(quad(integrand, a, b, limit=200, epsabs=0.0, epsrel=1e-12)[0]
                             for a, b in zip(edges[:-1], edges[1:]))
        value = compute_cw(w)
        assert math.isfinite(value) and value > 0
        assert value == pytest.approx(expected, rel=1e-6)


class TestBilinearDirect:
    def test_constants_give_two_pi(self, w_unit):
        one = PeriodicField.constant(1.0, 1.0, 2)
        assert bilinear_direct(one, one, w_unit, 0.0) == pytest.approx(2.0 * math.pi, rel=1e-9)

    def test_periodic_in_X(self, w_unit):
        h = PeriodicField.constant(1.0, 3.0, 2) + PeriodicField.cosine(0.1, 3.0, 2)
        T = 2.0 * math.pi / 3.0
        values = bilinear_direct_grid(h, h, w_unit, [0.3, 0.3 + T])
        assert values[1] == pytest.approx(values[0], rel=1e-9)

    def test_translation_covariance(self, w_unit, rng):
        h = PeriodicField.constant(1.0, 3.0, 3) + random_band_limited(rng, 3.0, 3, scale=0.1)
        c = 0.41
        X = np.array([0.0, 0.8, 1.7])
        shifted = bilinear_direct_grid(h.shifted(c), h.shifted(c), w_unit, X)
        np.testing.assert_allclose(shifted, bilinear_direct_grid(h, h, w_unit, X + c), rtol=1e-9)

    def test_workers_do_not_change_values(self, w_unit):
        h = PeriodicField.constant(1.0, 3.0, 2) + PeriodicField.cosine(0.1, 3.0, 2)
        X = [0.0, 0.5, 1.0]
        np.testing.assert_allclose(bilinear_direct_grid(h, h, w_unit, X, workers=3),
                                   bilinear_direct_grid(h, h, w_unit, X), rtol=0, atol=0)


class TestFluxJ:
    def test_requires_positive_x(self):
        with pytest.raises(ParameterError):
            flux_J(powerlaw_sampler(1.0, FLAT), (unit_shape(), FLAT), 0.0)

    def test_default_x_grid(self):
        grid = default_x_grid(8.0)
        assert grid == pytest.approx([1.0, 2.0, 8.0**0.5, 4.0, 8.0, 80.0])

    @pytest.mark.slow
    @pytest.mark.parametrize("x", [1.0, 7.5])
    def test_power_law_carries_unit_flux(self, x):
        f = powerlaw_sampler((2.0 * math.pi) ** -0.5, FLAT)
        assert flux_J(f, (unit_shape(), FLAT), x) == pytest.approx(1.0, rel=1e-6)


class TestVerificationReport:
    def test_pass_and_fail(self):
        assert make_report([1.0, 1.00005], [1.0001]).passed
        assert not make_report([1.0, 1.001], [1.0]).passed
        assert not make_report([1.0], [1.0003]).passed

    def test_empty_x_grid_is_not_checked(self):
        report = make_report([1.0], [])
        assert report.max_rel_dev_x == 0.0
        assert report.passed

    def test_write_report(self, tmp_path):
        paths = write_report(make_report([1.0, 1.0], [1.0]), tmp_path, "a" * 64)
        assert [p.name for p in paths] == ["verify.json", "B_HH.csv", "J.csv"]
        assert all(p.exists() for p in paths)


@pytest.mark.slow
class TestAgainstBifurcationKernel:
    def test_table_matches_direct_quadrature(self, w0, bifurcation, default_config, rng):
        N = 8
        k = bifurcation.k_star
        table = build_symbol_table(w0, k, N, default_config.quadrature_spec())
        X = [0.0, 0.37 * 2.0 * math.pi / k]
        for _ in range(20):
            u1 = random_band_limited(rng, k, N)
            u2 = random_band_limited(rng, k, N)
            fourier = bilinear_fourier(u1, u2, table)(X)
            direct = bilinear_direct_grid(u1, u2, w0, X, oracle_spec())
            scale = max(np.max(np.abs(fourier)), 1e-300)
            assert np.max(np.abs(fourier - direct)) <= 1e-6 * scale

    def test_diagonal_identity(self, solver_context, w0, bifurcation):
        diag = solver_context.table0.psi_diagonal()
        N = solver_context.N
        for n in range(1, N + 1):
            expected = eval_psi(n * bifurcation.k_star, w0)
            assert abs(diag[N + n] - expected) <= 1e-8 * max(abs(expected), bifurcation.scale)

    def test_solution_has_constant_flux(self, solution):
        report = verify_constant_flux(solution)
        assert report.max_rel_dev_X <= 1e-4
        assert report.max_rel_dev_x <= 2e-4
        assert report.selfsim_residual <= 1e-10
        assert report.passed

    def test_corrupted_solution_fails(self, solution):
        bad = replace(solution, H=solution.H + PeriodicField.cosine(1e-3, solution.k_star, solution.N, mode=2))
        report = verify_constant_flux(bad, x_grid=[])
        assert report.max_rel_dev_X > 1e-4
        assert not report.passed
