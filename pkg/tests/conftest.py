"""
Shared fixtures.

The constructed kernel, the perturbation pair, the solver context and the
s = 0.01 solution are session-scoped: they take minutes to build and every
slow test reads them without modification.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from coagflux.config import RunConfig  # noqa: E402
from coagflux.kernelspace import HomogeneityParams, unit_kernel  # noqa: E402
from coagflux.solver import SolverContext, assemble_solution, fixed_point_solve  # noqa: E402
from coagflux.w0builder import build_perturbations, solve_bifurcation_kernel  # noqa: E402


@pytest.fixture(scope="session")
def default_config():
    return RunConfig()


@pytest.fixture(scope="session")
def flat_params():
    return HomogeneityParams(gamma=0.0, p=0.0)


@pytest.fixture(scope="session")
def w_unit():
    return unit_kernel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def construction(default_config):
    cfg = default_config
    return solve_bifurcation_kernel(
        cfg.z_a, cfg.z_b, cfg.epsilon, cfg.params(), cfg.k_scan,
        points=cfg.k_scan_points, K_max=cfg.K_max, spec=cfg.quadrature_spec(),
    )


@pytest.fixture(scope="session")
def w0(construction):
    return construction[0]


@pytest.fixture(scope="session")
def bifurcation(construction):
    return construction[1]


@pytest.fixture(scope="session")
def recipe(construction):
    return construction[2]


@pytest.fixture(scope="session")
def pair(default_config, bifurcation):
    cfg = default_config
    return build_perturbations(
        bifurcation.k_star, cfg.epsilon, cfg.z_search, 0.0, cfg.z_search_points, cfg.cond_floor,
        cfg.quadrature_spec(),
    )


@pytest.fixture(scope="session")
def solver_context(default_config, w0, pair, recipe, bifurcation):
    cfg = default_config
    return SolverContext.build(
        w0, pair, recipe, bifurcation.k_star, cfg.N, cfg.M, cfg.quadrature_spec(), scale=bifurcation.scale
    )


@pytest.fixture(scope="session")
def solution(solver_context):
    state = fixed_point_solve(0.01, solver_context, 1e-12, 50)
    return assemble_solution(state, solver_context, 1.0)
