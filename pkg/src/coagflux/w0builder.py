# src/coagflux/w0builder.py
"""
Bifurcation kernel W0 and the perturbation pair.

    W0(z) = a·ζ_ε(|z| − z_a) + b·ζ_ε(|z| − z_b) + (1 − e^{−(εz)²})·e^{q√(z²+1)}

with ζ_ε the unit-mass Gaussian of width ε. The amplitudes are written in
polar form, a = 1/R_a(k) and b = σ/R_b(k), where R_a, R_b are the moduli of
Ψ(k; ζ_ε(·−z_a)) and Ψ(k; ζ_ε(·−z_b)). Two real equations Ψ(k; W0) = 0 are
then solved for (k, σ) by Newton's method, starting from the delta-mass
alignment root and σ = 1.

Two further bumps W_{1,j} = ζ_ε(|z| − z_j) are chosen so that their
linearised images of cos(k*X) span the critical modes n = ±1; the dual forms
ℓ_1, ℓ_2 read off the coordinates of any P1 field in that basis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from coagflux.errors import ConstructionError, ParameterError
from coagflux.kernelspace import (
    HomogeneityParams,
    KernelTerm,
    LogKernel,
    log_grid,
    measure_envelope,
    term_envelope,
)
from coagflux.logging_config import get_logger
from coagflux.numerics import QuadratureSpec
from coagflux.symbol import (
    K_FLOOR,
    K_MAX,
    BifurcationPoint,
    alignment_scan,
    eval_psi,
    find_kstar,
    psi_term,
)

logger = get_logger(__name__)

BUMP_HALF_WIDTH = 8.0  # supports are center ± 8ε
NEWTON_STEP = 1e-6
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12
STALL_TOL = 1e-10
SIGMA_MAX_DEV = 0.5
COND_FLOOR = 0.05
HARMONIC_MARGIN = 1e-3


def mollifier(z, center: float, epsilon: float):
    """(1/(ε√π))·e^{−((z − center)/ε)²}; unit total mass."""
    if not epsilon > 0:
        raise ParameterError("mollifier width must be positive")
    z = np.asarray(z, dtype=float)
    return np.exp(-(((z - center) / epsilon) ** 2)) / (epsilon * math.sqrt(math.pi))


def bump_term(center: float, epsilon: float) -> KernelTerm:
    """Even profile z ↦ ζ_ε(|z| − center)."""
    center, epsilon = float(center), float(epsilon)
    return KernelTerm(
        kind="bump",
        params=(("center", center), ("epsilon", epsilon)),
        profile=lambda z: mollifier(z, center, epsilon),
        support=(max(center - BUMP_HALF_WIDTH * epsilon, 0.0), center + BUMP_HALF_WIDTH * epsilon),
    )


def tail_term(epsilon: float, q: float) -> KernelTerm:
    """(1 − e^{−(εz)²})·e^{q√(z²+1)}: switches the envelope on away from z = 0."""
    epsilon, q = float(epsilon), float(q)
    return KernelTerm(
        kind="tail",
        params=(("epsilon", epsilon), ("q", q)),
        profile=lambda z: -np.expm1(-((epsilon * z) ** 2)) * np.exp(q * np.sqrt(z * z + 1.0)),
    )


def bump_kernel(center: float, epsilon: float, q: float) -> LogKernel:
    term = bump_term(center, epsilon)
    return LogKernel(terms=((1.0, term),), q=q, envelope_const=term_envelope(term, q))


# ---------------------------------------------------------------------------
# Recipe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class W0Recipe:
    """Everything needed to rebuild W0 exactly; serialised as the construction manifest."""

    z_a: float
    z_b: float
    epsilon: float
    a: float
    b: float
    sigma: float
    params: HomogeneityParams
    k_star: float | None = None

    def __post_init__(self):
        if not (self.z_a > self.z_b > 0):
            raise ParameterError(f"need z_a > z_b > 0, got z_a={self.z_a}, z_b={self.z_b}")
        if not (0 < self.epsilon <= 0.25 * min(self.z_b, 1.0)):
            raise ParameterError(f"epsilon={self.epsilon} must be small against min(z_b, 1)")
        if not (self.a > 0 and self.b > 0):
            raise ConstructionError(f"bump amplitudes must be positive, got a={self.a}, b={self.b}")
        if abs(self.sigma - 1.0) > SIGMA_MAX_DEV:
            raise ConstructionError(
                f"sigma = {self.sigma:.6g} outside [1/2, 3/2]; try a smaller epsilon or another k_scan"
            )

    def to_dict(self) -> dict:
        return {
            "gamma": self.params.gamma,
            "p": self.params.p,
            "z_a": self.z_a,
            "z_b": self.z_b,
            "epsilon": self.epsilon,
            "a": self.a,
            "b": self.b,
            "sigma": self.sigma,
            "k_star": self.k_star,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "W0Recipe":
        k_star = d.get("k_star")
        return cls(
            z_a=float(d["z_a"]),
            z_b=float(d["z_b"]),
            epsilon=float(d["epsilon"]),
            a=float(d["a"]),
            b=float(d["b"]),
            sigma=float(d["sigma"]),
            params=HomogeneityParams(gamma=float(d["gamma"]), p=float(d["p"])),
            k_star=None if k_star is None else float(k_star),
        )

    @classmethod
    def from_json(cls, text: str) -> "W0Recipe":
        return cls.from_dict(json.loads(text))


def build_w0(recipe: W0Recipe) -> LogKernel:
    q = recipe.params.q
    terms = (
        (recipe.a, bump_term(recipe.z_a, recipe.epsilon)),
        (recipe.b, bump_term(recipe.z_b, recipe.epsilon)),
        (1.0, tail_term(recipe.epsilon, q)),
    )
    draft = LogKernel(terms=terms, q=q)
    return LogKernel(terms=terms, q=q, envelope_const=measure_envelope(draft, q))


def check_positive(w: LogKernel, grid: np.ndarray | None = None) -> float:
    """Minimum of W on the grid; raises if W is not strictly positive there."""
    y = log_grid() if grid is None else np.asarray(grid, dtype=float)
    low = float(np.min(w(y)))
    if not low > 0:
        raise ConstructionError(f"kernel not positive on the test grid (min W = {low:.3e})")
    return low


# ---------------------------------------------------------------------------
# (k, σ) Newton
# ---------------------------------------------------------------------------


@dataclass
class _PolarSymbol:
    """Ψ(k; W0(a(k), b(k, σ))) = e^{iθ_a} + σ·e^{iθ_b} + Ψ(k; tail), cached per k."""

    z_a: float
    z_b: float
    epsilon: float
    q: float
    spec: QuadratureSpec
    k_floor: float
    _cache: dict = field(default_factory=dict)

    def parts(self, k: float) -> tuple[complex, complex, complex]:
        if k not in self._cache:
            q = self.q
            terms = (bump_term(self.z_a, self.epsilon), bump_term(self.z_b, self.epsilon),
                     tail_term(self.epsilon, q))
            self._cache[k] = tuple(
                psi_term(k, t, q, term_envelope(t, q), self.spec, self.k_floor) for t in terms
            )
        return self._cache[k]

    def amplitudes(self, k: float, sigma: float) -> tuple[float, float]:
        pa, pb, _ = self.parts(k)
        return 1.0 / abs(pa), sigma / abs(pb)

    def residual(self, k: float, sigma: float) -> np.ndarray:
        pa, pb, pt = self.parts(k)
        a, b = self.amplitudes(k, sigma)
        value = a * pa + b * pb + pt
        return np.array([value.real, value.imag])


def _newton(polar: _PolarSymbol, k0: float, sigma0: float, step: float, max_iter: int) -> tuple[float, float, float]:
    x = np.array([k0, sigma0], dtype=float)
    F = polar.residual(*x)
    res = float(np.hypot(*F))
    for it in range(1, max_iter + 1):
        if res < NEWTON_TOL:
            return float(x[0]), float(x[1]), res
        J = np.empty((2, 2))
        for j in range(2):
            h = step * max(abs(x[j]), 1.0)
            xp = x.copy()
            xp[j] += h
            J[:, j] = (polar.residual(*xp) - F) / h
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as e:
            raise ConstructionError(f"singular Newton Jacobian at k={x[0]:.6g}: {e}") from e
        x = x + dx
        if not (x[0] > 0 and np.all(np.isfinite(x))):
            raise ConstructionError("Newton iteration left the admissible region; try a smaller epsilon or a wider scan")
        F = polar.residual(*x)
        res = float(np.hypot(*F))
        logger.debug("newton it=%d k=%.15g sigma=%.15g |F|=%.3e", it, x[0], x[1], res)
        if np.max(np.abs(dx) / np.maximum(np.abs(x), 1.0)) < 1e-15 and res < STALL_TOL:
            return float(x[0]), float(x[1]), res
    if res < NEWTON_TOL:
        return float(x[0]), float(x[1]), res
    raise ConstructionError(
        f"Newton did not converge in {max_iter} iterations (|Psi| = {res:.3e}); "
        "try a smaller epsilon or a wider k_scan"
    )


def solve_bifurcation_kernel(
    z_a: float,
    z_b: float,
    epsilon: float,
    params: HomogeneityParams,
    k_scan: tuple[float, float],
    *,
    points: int = 401,
    K_max: float = K_MAX,
    spec: QuadratureSpec | None = None,
    k_floor: float = K_FLOOR,
    certify_points: int | None = None,
    asymptotic_rtol: float | None = None,
    newton_step: float = NEWTON_STEP,
    newton_max_iter: int = NEWTON_MAX_ITER,
    workers: int = 1,
) -> tuple[LogKernel, BifurcationPoint, W0Recipe]:
    """
    Tune the bump amplitudes so that Ψ(·; W0) vanishes at a certified k*.

    Alignment roots in ``k_scan`` are tried from the largest down; the first
    Newton solve that lands with |σ − 1| ≤ 1/2 is kept.

    Raises
    ------
    ConstructionError
        No alignment root, Newton failure, σ out of range, or a zero of Ψ
        above the tuned wavenumber.
    """
    spec = spec or QuadratureSpec()
    brackets = alignment_scan(z_a, z_b, k_scan)
    if not brackets:
        raise ConstructionError(
            f"no alignment of G({z_a:g}, k) and G({z_b:g}, k) in k_scan={list(k_scan)}; widen the scan"
        )
    polar = _PolarSymbol(z_a=z_a, z_b=z_b, epsilon=epsilon, q=params.q, spec=spec, k_floor=k_floor)

    last_error: ConstructionError | None = None
    for br in sorted(brackets, key=lambda b: b.root, reverse=True):
        logger.info(f"🔧 alignment root k = {br.root:.10f}; solving for (k, sigma)")
        try:
            k, sigma, res = _newton(polar, br.root, 1.0, newton_step, newton_max_iter)
            if abs(sigma - 1.0) > SIGMA_MAX_DEV:
                raise ConstructionError(f"sigma = {sigma:.6g} outside [1/2, 3/2] at k = {k:.6g}")
        except ConstructionError as e:
            logger.warning(f"⚠️ {e}")
            last_error = e
            continue
        a, b = polar.amplitudes(k, sigma)
        recipe = W0Recipe(z_a=z_a, z_b=z_b, epsilon=epsilon, a=a, b=b, sigma=sigma, params=params, k_star=k)
        w0 = build_w0(recipe)
        kwargs = {} if certify_points is None else {"certify_points": certify_points}
        point = find_kstar(
            w0, k_scan, points=points, K_max=K_max, spec=spec, k_floor=k_floor,
            asymptotic_rtol=asymptotic_rtol, workers=workers, **kwargs,
        )
        if abs(point.k_star - k) > 1e-8 * k:
            raise ConstructionError(
                f"Psi(.; W0) has a zero at k = {point.k_star:.10g} above the tuned k = {k:.10g}; narrow k_scan"
            )
        recipe = W0Recipe(
            z_a=z_a, z_b=z_b, epsilon=epsilon, a=a, b=b, sigma=sigma, params=params, k_star=point.k_star
        )
        logger.info(f"🔧 W0: a = {a:.10g}, b = {b:.10g}, sigma = {sigma:.10g}, k* = {point.k_star:.12g}")
        return w0, point, recipe
    raise last_error or ConstructionError("bifurcation kernel construction failed")


def check_harmonics(
    w0: LogKernel, point: BifurcationPoint, N: int, spec: QuadratureSpec | None = None,
    margin: float = HARMONIC_MARGIN,
) -> np.ndarray:
    """|Ψ(n·k*; W0)| for n = 2..N; raises if any falls below margin·scale."""
    mags = np.array([abs(eval_psi(n * point.k_star, w0, spec)) for n in range(2, N + 1)])
    bad = np.nonzero(mags < margin * point.scale)[0]
    if bad.size:
        n = int(bad[0]) + 2
        raise ConstructionError(
            f"higher harmonic resonates: |Psi({n}k*)| = {mags[bad[0]]:.3e} < {margin:g}·scale"
        )
    return mags


# ---------------------------------------------------------------------------
# Perturbation pair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationPair:
    """
    Bumps W_{1,1}, W_{1,2} and the 2×2 dual matrix.

    Column j of ``dual_matrix`` holds the (cos, sin) coordinates
    (Re Ψ(k*; W_{1,j}), −Im Ψ(k*; W_{1,j})) of 𝓛(cos(k*·); W_{1,j}).
    """

    w11: LogKernel
    w12: LogKernel
    z1: float
    z2: float
    epsilon: float
    dual_matrix: np.ndarray

    @property
    def ell_matrix(self) -> np.ndarray:
        """Rows are the dual forms ℓ_1, ℓ_2 acting on (cos, sin) coordinates."""
        return np.linalg.inv(self.dual_matrix)

    def ell_forms(self, c1: complex) -> np.ndarray:
        """(ℓ_1, ℓ_2) of the P1 field with n = 1 coefficient ``c1``."""
        coords = np.array([2.0 * c1.real, -2.0 * c1.imag])
        return self.ell_matrix @ coords

    def condition(self) -> float:
        M = self.dual_matrix
        return abs(float(np.linalg.det(M))) / float(np.linalg.norm(M, 2)) ** 2

    def perturbed_kernel(self, w0: LogKernel, alpha1: float, alpha2: float) -> LogKernel:
        return w0 + self.w11.scaled(alpha1) + self.w12.scaled(alpha2)

    def to_dict(self) -> dict:
        return {
            "z1": self.z1,
            "z2": self.z2,
            "epsilon": self.epsilon,
            "dual_matrix": self.dual_matrix.tolist(),
            "condition": self.condition(),
        }

    @classmethod
    def from_dict(cls, d: dict, q: float) -> "PerturbationPair":
        eps = float(d["epsilon"])
        z1, z2 = float(d["z1"]), float(d["z2"])
        return cls(
            w11=bump_kernel(z1, eps, q),
            w12=bump_kernel(z2, eps, q),
            z1=z1,
            z2=z2,
            epsilon=eps,
            dual_matrix=np.asarray(d["dual_matrix"], dtype=float),
        )


def build_perturbations(
    k_star: float,
    epsilon: float,
    z_search: tuple[float, float],
    q: float = 0.0,
    points: int = 64,
    cond_floor: float = COND_FLOOR,
    spec: QuadratureSpec | None = None,
) -> PerturbationPair:
    """
    Pick z_1 < z_2 in ``z_search`` maximising |det M| among well-conditioned pairs.

    Raises
    ------
    ConstructionError
        No pair with |det M| ≥ cond_floor·‖M‖².
    """
    spec = spec or QuadratureSpec()
    zs = np.linspace(z_search[0], z_search[1], int(points))
    cols = np.empty((2, zs.size))
    for j, z in enumerate(zs):
        t = bump_term(z, epsilon)
        v = psi_term(k_star, t, q, term_envelope(t, q), spec)
        cols[:, j] = (v.real, -v.imag)

    best: tuple[float, int, int] | None = None
    for i in range(zs.size):
        for j in range(i + 1, zs.size):
            M = cols[:, [i, j]]
            det = abs(float(np.linalg.det(M)))
            norm2 = float(np.linalg.norm(M, 2)) ** 2
            if norm2 > 0 and det >= cond_floor * norm2 and (best is None or det > best[0]):
                best = (det, i, j)
    if best is None:
        raise ConstructionError(
            f"no perturbation pair in z_search={list(z_search)} with |det M| >= {cond_floor}·||M||^2"
        )
    _, i, j = best
    pair = PerturbationPair(
        w11=bump_kernel(zs[i], epsilon, q),
        w12=bump_kernel(zs[j], epsilon, q),
        z1=float(zs[i]),
        z2=float(zs[j]),
        epsilon=float(epsilon),
        dual_matrix=cols[:, [i, j]].copy(),
    )
    logger.info(f"🔧 perturbation pair z1 = {pair.z1:.6g}, z2 = {pair.z2:.6g}, condition = {pair.condition():.3g}")
    return pair
