# src/coagflux/solver.py
"""
Fixed-point solution of the projected constant-flux system.

Unknowns (α₁, α₂, ψ) with U = s·cos(k*X) + ψ, ψ ∈ Z2 (modes |n| ≥ 2) and
W = W0 + α₁W_{1,1} + α₂W_{1,2}. One application of the map T:

    α_j ← −(1/s)·ℓ_j(P1 B(U, U; W))
    ψ   ← −A_{W0}⁻¹(P2 𝓛(ψ; W1) + P2 B(U, U; W)),      W1 = α₁W_{1,1} + α₂W_{1,2}

iterated from (0, 0, 0) in the metric |Δα₁| + |Δα₂| + M·‖Δψ‖_1. The fixed
point gives H̃ = 1 + U with B(H̃, H̃; W) constant; rescaling by √(J0/K0)
sets the flux to J0, and f(x) = H(ln x)·x^{−(γ+3)/2} is the log-periodic
size distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from coagflux.errors import ConstructionError, SolverError
from coagflux.export import read_json, write_csv, write_json
from coagflux.kernelspace import HomogeneityParams, LogKernel, kernel_metric, phi_from_w
from coagflux.logging_config import get_logger
from coagflux.numerics import QuadratureSpec
from coagflux.spectral import (
    AwOperator,
    PeriodicField,
    SymbolTable,
    bilinear_fourier,
    build_symbol_table,
    linearized_L,
    norm,
    project,
)
from coagflux.w0builder import PerturbationPair, W0Recipe, build_w0, bump_kernel, check_positive

logger = get_logger(__name__)

BURN_IN = 3
RATIO_MAX = 0.9
S_MIN = 1e-6


@dataclass(frozen=True)
class SolverState:
    s: float
    alpha1: float
    alpha2: float
    psi: PeriodicField
    iter: int = 0
    dist_history: tuple[float, ...] = ()

    @classmethod
    def initial(cls, s: float, k_star: float, N: int) -> "SolverState":
        return cls(s=float(s), alpha1=0.0, alpha2=0.0, psi=PeriodicField.zeros(k_star, N))

    def distance(self, other: "SolverState", M: float) -> float:
        return abs(self.alpha1 - other.alpha1) + abs(self.alpha2 - other.alpha2) + M * norm(self.psi - other.psi, 1.0)

    def contraction_ratios(self) -> np.ndarray:
        d = np.asarray(self.dist_history, dtype=float)
        if d.size < 2:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


@dataclass(frozen=True, eq=False)
class SolverContext:
    """Everything the map T needs, built once per (W0, k*, N)."""

    w0: LogKernel
    pair: PerturbationPair
    recipe: W0Recipe
    k_star: float
    N: int
    M: float
    table0: SymbolTable
    table11: SymbolTable
    table12: SymbolTable
    a_op: AwOperator

    @property
    def params(self) -> HomogeneityParams:
        return self.recipe.params

    @classmethod
    def build(
        cls,
        w0: LogKernel,
        pair: PerturbationPair,
        recipe: W0Recipe,
        k_star: float,
        N: int = 16,
        M: float = 10.0,
        spec: QuadratureSpec | None = None,
        workers: int = 1,
        cache_dir: str | Path | None = None,
        scale: float | None = None,
    ) -> "SolverContext":
        logger.info(f"🔧 building interaction tables (N = {N})")
        t0 = build_symbol_table(w0, k_star, N, spec, workers, cache_dir)
        t11 = build_symbol_table(pair.w11, k_star, N, spec, workers, cache_dir)
        t12 = build_symbol_table(pair.w12, k_star, N, spec, workers, cache_dir)
        a_op = AwOperator.build(t0, k_star, N, w0.q, scale=scale)
        logger.info(f"ℹ️ A_W0 inverse surrogate = {a_op.surrogate:.4g}")
        return cls(w0=w0, pair=pair, recipe=recipe, k_star=float(k_star), N=int(N), M=float(M),
                   table0=t0, table11=t11, table12=t12, a_op=a_op)

    def table_w1(self, alpha1: float, alpha2: float) -> SymbolTable:
        return SymbolTable.linear_combination([(alpha1, self.table11), (alpha2, self.table12)])

    def table_for(self, alpha1: float, alpha2: float) -> SymbolTable:
        return SymbolTable.linear_combination([(1.0, self.table0), (alpha1, self.table11), (alpha2, self.table12)])

    def kernel_for(self, alpha1: float, alpha2: float) -> LogKernel:
        return self.pair.perturbed_kernel(self.w0, alpha1, alpha2)


def t_map(state: SolverState, ctx: SolverContext) -> SolverState:
    """
    One application of T.

    Raises
    ------
    SolverError
        A_W inversion failed or the P1 extraction is degenerate.
    """
    s = state.s
    if s == 0.0:
        return replace(state, alpha1=0.0, alpha2=0.0, psi=PeriodicField.zeros(ctx.k_star, ctx.N), iter=state.iter + 1)
    N = ctx.N
    U = PeriodicField.cosine(s, ctx.k_star, N) + state.psi.resized(N)
    t1 = ctx.table_w1(state.alpha1, state.alpha2)
    table = SymbolTable.linear_combination([(1.0, ctx.table0), (1.0, t1)])

    buu = bilinear_fourier(U, U, table)
    ell = ctx.pair.ell_forms(buu.coeff(1))
    if not np.all(np.isfinite(ell)):
        raise SolverError("degenerate P1 extraction (non-finite dual forms)")
    alpha1, alpha2 = (-ell / s).tolist()

    rhs = project(linearized_L(state.psi.resized(N), t1), "P2") + project(buu, "P2").resized(N)
    try:
        psi = -ctx.a_op.apply_inverse(rhs.resized(N))
    except ValueError as e:
        raise SolverError(f"A_W inversion failed: {e}") from e
    return SolverState(s=s, alpha1=alpha1, alpha2=alpha2, psi=psi, iter=state.iter + 1,
                       dist_history=state.dist_history)


def _check_trust_region(state: SolverState, M: float) -> None:
    s = abs(state.s)
    if abs(state.alpha1) + abs(state.alpha2) > M * s or norm(state.psi, 1.0) > s:
        raise SolverError(
            f"iterate left the trust region at s = {state.s:g} "
            f"(|alpha| = {abs(state.alpha1) + abs(state.alpha2):.3e}, ||psi|| = {norm(state.psi, 1.0):.3e}); reduce s"
        )


def _check_contraction(history: list[float], s: float, iteration: int) -> None:
    if len(history) > BURN_IN and history[-2] > 0 and history[-1] / history[-2] > RATIO_MAX:
        raise SolverError(
            f"fixed-point map is not contracting at s = {s:g} "
            f"(step ratio {history[-1] / history[-2]:.3f} at iteration {iteration}); reduce s"
        )


def fixed_point_solve(s: float, ctx: SolverContext, tol: float = 1e-12, max_iter: int = 50) -> SolverState:
    """
    Iterate T from (0, 0, 0) until the step distance drops below ``tol``.

    Raises
    ------
    SolverError
        Non-contraction after the burn-in (step ratio above RATIO_MAX),
        trust-region exit, or ``max_iter`` reached.
    """
    state = SolverState.initial(s, ctx.k_star, ctx.N)
    if s == 0.0:
        return state
    history: list[float] = []
    for _ in range(max_iter):
        new = t_map(state, ctx)
        d = new.distance(state, ctx.M)
        history.append(d)
        state = replace(new, dist_history=tuple(history))
        _check_trust_region(state, ctx.M)
        logger.debug("fixed point it=%d dist=%.3e alpha=(%.6e, %.6e)", state.iter, d, state.alpha1, state.alpha2)
        if d < tol:
            logger.info(f"🔧 fixed point at s = {s:g} converged in {state.iter} iterations (dist = {d:.2e})")
            return state
        _check_contraction(history, s, state.iter)
    raise SolverError(f"no convergence in {max_iter} iterations at s = {s:g} (dist = {history[-1]:.3e}); reduce s")


def find_contraction_threshold(
    ctx: SolverContext, s0: float, tol: float = 1e-12, max_iter: int = 50, s_min: float = S_MIN
) -> float:
    """Largest s = s0/2^j for which the iteration contracts and converges."""
    s = float(s0)
    while s >= s_min:
        try:
            fixed_point_solve(s, ctx, tol, max_iter)
            logger.info(f"ℹ️ empirical contraction threshold s0 ≈ {s:g}")
            return s
        except SolverError as e:
            logger.info(f"ℹ️ s = {s:g}: {e}")
            s /= 2.0
    raise SolverError(f"no contracting s found down to {s_min:g}")


# ---------------------------------------------------------------------------
# Solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Solution:
    h_tilde: PeriodicField
    H: PeriodicField
    kernel: LogKernel
    k_star: float
    K0: float
    J0: float
    recipe: W0Recipe
    s: float
    alpha1: float
    alpha2: float
    z1: float
    z2: float
    powerlaw_const: float
    residual_p1: float = 0.0
    residual_p2: float = 0.0
    iterations: int = 0
    dist_history: tuple[float, ...] = ()
    err_alpha: float = 0.0
    err_h: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def params(self) -> HomogeneityParams:
        return self.recipe.params

    @property
    def N(self) -> int:
        return self.h_tilde.N

    @property
    def Q(self) -> float:
        return math.exp(2.0 * math.pi / self.k_star)

    def f(self, x) -> np.ndarray:
        return back_transform(self, x)

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe.to_dict(),
            "perturbation": {"z1": self.z1, "z2": self.z2, "epsilon": self.recipe.epsilon},
            "s": self.s,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "k_star": self.k_star,
            "Q": self.Q,
            "N": self.N,
            "K0": self.K0,
            "J0": self.J0,
            "powerlaw_const": self.powerlaw_const,
            "residual_p1": self.residual_p1,
            "residual_p2": self.residual_p2,
            "iterations": self.iterations,
            "dist_history": list(self.dist_history),
            "err_alpha": self.err_alpha,
            "err_h": self.err_h,
            "h_tilde": self.h_tilde.to_dict(),
            "H": self.H.to_dict(),
            **self.extras,
        }


def propagated_errors(state: SolverState, ctx: SolverContext) -> tuple[float, float]:
    """
    First-order bounds on |Δα₁| + |Δα₂| and ‖ΔH̃‖_1 caused by the tables'
    quadrature error.

    An entry error e moves each coefficient of B(U, U) by at most e·(Σ|U_n|)²;
    that passes through the dual forms (α) and the A_W0 inverse surrogate (ψ),
    and the fixed point amplifies a per-step error by 1/(1 − RATIO_MAX).
    """
    s = abs(state.s)
    if s == 0.0:
        return 0.0, 0.0
    N = ctx.N
    table = ctx.table_for(state.alpha1, state.alpha2)
    e = table.err_est
    U = PeriodicField.cosine(state.s, ctx.k_star, N) + state.psi.resized(N)
    e_b = e * float(np.sum(np.abs(U.coeffs))) ** 2
    d_alpha = 2.0 * math.sqrt(2.0) * float(np.linalg.norm(ctx.pair.ell_matrix, 2)) * e_b / s

    n = np.abs(np.arange(-N, N + 1)).astype(float)
    active = n >= 2
    weights = 1.0 + n[active] ** (2.0 * (0.5 - ctx.params.q))
    e_lin = 2.0 * ctx.table_w1(state.alpha1, state.alpha2).err_est * float(np.sum(np.abs(state.psi.coeffs)))
    d_rhs = (e_b + e_lin) * math.sqrt(float(np.sum(weights)))
    psi_min = float(np.min(np.abs(ctx.a_op.psi[active])))
    d_psi = ctx.a_op.surrogate * d_rhs + norm(state.psi, 1.0) * 2.0 * ctx.table0.err_est / psi_min

    total = (d_alpha + ctx.M * d_psi) / (1.0 - RATIO_MAX)
    return total, total / ctx.M


def assemble_solution(state: SolverState, ctx: SolverContext, J0: float = 1.0) -> Solution:
    """
    H̃ = 1 + s·cos(k*X) + ψ and its rescaling H = √(J0/K0)·H̃.

    Raises
    ------
    SolverError
        K0 ≤ 0 or the perturbed kernel is not positive.
    """
    N, k = ctx.N, ctx.k_star
    h_tilde = PeriodicField.constant(1.0, k, N) + PeriodicField.cosine(state.s, k, N) + state.psi.resized(N)
    table = ctx.table_for(state.alpha1, state.alpha2)
    bhh = bilinear_fourier(h_tilde, h_tilde, table)
    K0 = float(bhh.coeff(0).real)
    if not K0 > 0:
        raise SolverError(f"achieved flux K0 = {K0:.6g} is not positive")
    kernel = ctx.kernel_for(state.alpha1, state.alpha2)
    try:
        check_positive(kernel)
    except ConstructionError as e:
        raise SolverError(f"{e}; reduce s") from e

    q = ctx.params.q
    res_p1 = norm(project(bhh, "P1"), 1.0) / K0
    res_p2 = norm(project(bhh, "P2"), 0.5 - q) / K0
    scale = math.sqrt(J0 / K0)
    j00 = float(table.J(0, 0).real)
    err_alpha, err_h = propagated_errors(state, ctx)
    sol = Solution(
        h_tilde=h_tilde,
        H=h_tilde * scale,
        kernel=kernel,
        k_star=k,
        K0=K0,
        J0=float(J0),
        recipe=ctx.recipe,
        s=state.s,
        alpha1=state.alpha1,
        alpha2=state.alpha2,
        z1=ctx.pair.z1,
        z2=ctx.pair.z2,
        powerlaw_const=math.sqrt(J0 / j00),
        residual_p1=res_p1,
        residual_p2=res_p2,
        iterations=state.iter,
        dist_history=state.dist_history,
        err_alpha=err_alpha,
        err_h=err_h,
    )
    logger.info(f"🔧 K0 = {K0:.12g}, residuals P1 = {res_p1:.2e}, P2 = {res_p2:.2e}, alpha error ≤ {err_alpha:.1e}")
    return sol


def back_transform(sol: Solution, x) -> np.ndarray:
    """f(x) = H(ln x)·x^{−(γ+3)/2}."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("back_transform requires x > 0")
    return sol.H(np.log(x)) * x ** (-sol.params.power_law_exponent)


def kernel_family_distance(
    ctx: SolverContext, s_values, tol: float = 1e-12, max_iter: int = 50
) -> pd.DataFrame:
    """Kernel metric between W0 and W0 + α₁(s)W_{1,1} + α₂(s)W_{1,2} along s."""
    params = ctx.params
    phi0 = phi_from_w(ctx.w0, params)
    rows = []
    for s in s_values:
        st = fixed_point_solve(float(s), ctx, tol, max_iter)
        phi = phi_from_w(ctx.kernel_for(st.alpha1, st.alpha2), params)
        rows.append({"s": float(s), "alpha1": st.alpha1, "alpha2": st.alpha2,
                     "dist": kernel_metric(phi0, phi, params.p)})
    return pd.DataFrame(rows, columns=["s", "alpha1", "alpha2", "dist"])


# ---------------------------------------------------------------------------
# Export / reload
# ---------------------------------------------------------------------------


def period_samples(sol: Solution, points: int = 256) -> pd.DataFrame:
    X = np.linspace(0.0, 2.0 * math.pi / sol.k_star, points, endpoint=False)
    return pd.DataFrame({"X": X, "H": sol.H(X)})


def powerlaw_samples(sol: Solution, points: int = 512, periods: int = 3) -> pd.DataFrame:
    x = np.geomspace(1.0, sol.Q**periods, points)
    beta = sol.params.power_law_exponent
    return pd.DataFrame({"x": x, "f": back_transform(sol, x), "powerlaw": sol.powerlaw_const * x**-beta})


def write_solution(sol: Solution, out_dir: str | Path, config_hash: str, tolerances: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    payload = sol.to_dict()
    if tolerances:
        payload["tolerances"] = dict(tolerances)
    return [
        write_json(payload, out / "solution.json", config_hash),
        write_csv(period_samples(sol), out / "H.csv", config_hash),
        write_csv(powerlaw_samples(sol), out / "f_vs_powerlaw.csv", config_hash),
    ]


def load_solution(path: str | Path) -> Solution:
    """Rebuild a Solution (kernel included) from solution.json."""
    d = read_json(path)
    recipe = W0Recipe.from_dict(d["recipe"])
    q = recipe.params.q
    w0 = build_w0(recipe)
    pert = d["perturbation"]
    kernel = w0 + bump_kernel(pert["z1"], pert["epsilon"], q).scaled(d["alpha1"]) \
        + bump_kernel(pert["z2"], pert["epsilon"], q).scaled(d["alpha2"])
    return Solution(
        h_tilde=PeriodicField.from_dict(d["h_tilde"]),
        H=PeriodicField.from_dict(d["H"]),
        kernel=kernel,
        k_star=float(d["k_star"]),
        K0=float(d["K0"]),
        J0=float(d["J0"]),
        recipe=recipe,
        s=float(d["s"]),
        alpha1=float(d["alpha1"]),
        alpha2=float(d["alpha2"]),
        z1=float(pert["z1"]),
        z2=float(pert["z2"]),
        powerlaw_const=float(d["powerlaw_const"]),
        residual_p1=float(d.get("residual_p1", 0.0)),
        residual_p2=float(d.get("residual_p2", 0.0)),
        iterations=int(d.get("iterations", 0)),
        dist_history=tuple(d.get("dist_history", ())),
        err_alpha=float(d.get("err_alpha", 0.0)),
        err_h=float(d.get("err_h", 0.0)),
    )
