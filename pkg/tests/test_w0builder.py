"""Bifurcation kernel construction and the perturbation pair."""

import math

import numpy as np
import pytest

from coagflux.errors import ConstructionError, ParameterError
from coagflux.kernelspace import HomogeneityParams, unit_kernel
from coagflux.numerics import QuadratureSpec, integrate_interval
from coagflux.symbol import eval_G, eval_psi
from coagflux.w0builder import (
    PerturbationPair,
    W0Recipe,
    build_perturbations,
    build_w0,
    bump_term,
    check_harmonics,
    check_positive,
    mollifier,
    solve_bifurcation_kernel,
    tail_term,
)

FLAT = HomogeneityParams(gamma=0.0, p=0.0)


def make_recipe(**changes):
    values = dict(z_a=2.0, z_b=1.0, epsilon=0.02, a=0.9, b=1.1, sigma=1.0, params=FLAT, k_star=19.4)
    values.update(changes)
    return W0Recipe(**values)


class TestBuildingBlocks:
    def test_mollifier_has_unit_mass(self):
        value, _ = integrate_interval(lambda z: mollifier(z, 1.0, 0.02), 0.5, 1.5, QuadratureSpec())
        assert value.real == pytest.approx(1.0, rel=1e-12)

    def test_mollifier_width_must_be_positive(self):
        with pytest.raises(ParameterError):
            mollifier(1.0, 1.0, 0.0)

    def test_mollified_g_converges_at_second_order(self):
        k, center = 5.0, 2.0
        spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12, oscillation_freq=2.0 * k)
        exact = complex(eval_G(center, k))
        errors = []
        for eps in (0.04, 0.02, 0.01):
            value, _ = integrate_interval(
                lambda z: mollifier(z, center, eps) * eval_G(z, k), center - 8.0 * eps, center + 8.0 * eps, spec
            )
            errors.append(abs(value - exact))
        for coarse, fine in zip(errors[:-1], errors[1:]):
            assert 3.5 <= coarse / fine <= 4.5

    def test_bump_term_is_even_with_support(self):
        term = bump_term(2.0, 0.02)
        assert term.support == pytest.approx((1.84, 2.16))
        assert term(-2.0) == term(2.0)
        assert term(2.0) == pytest.approx(1.0 / (0.02 * math.sqrt(math.pi)))

    def test_tail_switches_on_away_from_zero(self):
        tail = tail_term(0.02, 0.2)
        assert tail(0.0) == 0.0
        assert tail(500.0) == pytest.approx(math.exp(0.2 * math.sqrt(500.0**2 + 1.0)), rel=1e-12)


class TestRecipe:
    def test_json_round_trip(self):
        recipe = make_recipe()
        assert W0Recipe.from_json(recipe.to_json()) == recipe

    def test_bump_order(self):
        with pytest.raises(ParameterError):
            make_recipe(z_a=1.0, z_b=2.0)

    def test_epsilon_must_be_small(self):
        with pytest.raises(ParameterError):
            make_recipe(epsilon=0.5)

    @pytest.mark.parametrize("changes", [{"sigma": 2.0}, {"a": -1.0}, {"b": 0.0}])
    def test_amplitude_range(self, changes):
        with pytest.raises(ConstructionError):
            make_recipe(**changes)

    def test_built_kernel_is_positive_and_even(self):
        w = build_w0(make_recipe())
        assert check_positive(w) > 0
        assert w.symmetry_residual() == 0.0
        assert w.envelope_ratio() <= 1.0

    def test_negative_kernel_rejected(self):
        with pytest.raises(ConstructionError, match="not positive"):
            check_positive(unit_kernel().scaled(-1.0))


class TestPerturbationPair:
    def test_dual_forms_invert_the_dual_matrix(self):
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        pair = PerturbationPair(w11=unit_kernel(), w12=unit_kernel(), z1=1.0, z2=2.0, epsilon=0.02, dual_matrix=M)
        for j in range(2):
            c1 = complex(M[0, j], -M[1, j]) / 2.0
            np.testing.assert_allclose(pair.ell_forms(c1), np.eye(2)[j], atol=1e-14)

    def test_selected_pair_is_well_conditioned(self):
        pair = build_perturbations(19.4, 0.02, (0.5, 4.0), points=16)
        assert pair.z1 < pair.z2
        assert pair.condition() >= 0.05
        v = eval_psi(19.4, pair.w11)
        np.testing.assert_allclose(pair.dual_matrix[:, 0], [v.real, -v.imag], rtol=1e-10)

    def test_impossible_floor(self):
        with pytest.raises(ConstructionError, match="no perturbation pair"):
            build_perturbations(19.4, 0.02, (0.5, 4.0), points=8, cond_floor=1.1)

    def test_round_trip_through_manifest(self):
        pair = build_perturbations(19.4, 0.02, (0.5, 4.0), points=8)
        back = PerturbationPair.from_dict(pair.to_dict(), 0.0)
        assert back.z1 == pair.z1 and back.z2 == pair.z2
        np.testing.assert_array_equal(back.dual_matrix, pair.dual_matrix)
        assert back.w11.fingerprint() == pair.w11.fingerprint()


@pytest.mark.slow
class TestConstruction:
    def test_kstar_in_expected_range(self, bifurcation):
        assert 19.0 < bifurcation.k_star < 20.0

    def test_kstar_is_robust_to_the_bump_width(self, default_config, bifurcation):
        cfg = default_config
        _, narrow, _ = solve_bifurcation_kernel(
            cfg.z_a, cfg.z_b, 0.01, cfg.params(), cfg.k_scan,
            points=cfg.k_scan_points, K_max=cfg.K_max, spec=cfg.quadrature_spec(),
        )
        assert cfg.epsilon == 0.02
        assert abs(narrow.k_star - bifurcation.k_star) <= 0.05

    def test_symbol_vanishes_at_kstar(self, w0, bifurcation):
        assert bifurcation.residual <= 1e-10 * bifurcation.scale
        assert abs(eval_psi(bifurcation.k_star, w0)) <= 1e-10 * bifurcation.scale

    def test_sigma_and_positivity(self, w0, recipe):
        assert abs(recipe.sigma - 1.0) <= 0.5
        assert check_positive(w0) > 0

    def test_higher_harmonics_do_not_resonate(self, w0, bifurcation):
        mags = check_harmonics(w0, bifurcation, 16)
        assert mags.shape == (15,)
        assert np.all(mags >= 1e-3 * bifurcation.scale)

    def test_recipe_rebuilds_the_same_kernel(self, w0, recipe):
        again = build_w0(W0Recipe.from_json(recipe.to_json()))
        assert again.fingerprint() == w0.fingerprint()

    def test_pair_spans_the_critical_modes(self, pair, bifurcation):
        assert pair.condition() >= 0.05
        for j, w1 in enumerate((pair.w11, pair.w12)):
            # n = 1 coefficient of L(cos(k*X); W1j) is Psi(k*; W1j)/2
            c1 = eval_psi(bifurcation.k_star, w1) / 2.0
            np.testing.assert_allclose(pair.ell_forms(c1), np.eye(2)[j], atol=1e-10)
