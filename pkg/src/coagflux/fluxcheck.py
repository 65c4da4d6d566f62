# src/coagflux/fluxcheck.py
"""
Independent flux oracles.

bilinear_direct evaluates the flux operator in log variables,

    B(H1, H2; W)(X) = ∫_{−∞}^X dY ∫_{X+ln(1−e^{Y−X})}^∞ dZ e^{(Y−Z)/2} W(Y−Z) H1(Y) H2(Z),

by physical-space quadrature: with ξ = Y − Z and u = Y − X the region is
ξ ∈ ℝ, u ∈ [−ln(1 + e^{−ξ}), 0), so

    B(X) = ∫_ℝ e^{ξ/2} W(ξ) ∫_{−L(ξ)}^0 H1(X+u) H2(X+u−ξ) du dξ,    L(ξ) = ln(1 + e^{−ξ}).

The inner integrand is T-periodic in u; whole periods are summed exactly
with the trapezoidal rule and the remainder with a single Gauss-Legendre
rule sized to the field bandwidth.

flux_J evaluates the original-variable flux J(x; f) with nested adaptive
quadrature, for any size distribution f.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.special import roots_legendre

from coagflux.errors import ParameterError, QuadratureError, VerificationError
from coagflux.export import write_csv, write_json
from coagflux.kernelspace import HomogeneityParams, LogKernel, ShapeFunction, kernel_eval, phi_from_w
from coagflux.logging_config import get_logger
from coagflux.numerics import (
    QuadratureRule,
    QuadratureSpec,
    gauss_legendre,
    half_weighted_log1pexp,
    integrate_interval,
    integrate_semi_infinite,
    interval_rule,
    log1pexp,
    semi_infinite_rule,
)
from coagflux.solver import Solution, back_transform
from coagflux.spectral import PeriodicField
from coagflux.symbol import eval_psi

logger = get_logger(__name__)

ORACLE_PHASE = 8.0
TRIM_RTOL = 1e-15
XI_CHUNK = 2048
CONSISTENCY_RTOL = 1e-8
FLUX_ABS_FACTOR = 1e3
FLUX_REL_FACTOR = 1e2


def oracle_spec(phase_per_panel: float = ORACLE_PHASE) -> QuadratureSpec:
    return QuadratureSpec(abs_tol=1e-12, rel_tol=1e-10, phase_per_panel=phase_per_panel)


def flux_spec(phase_per_panel: float = ORACLE_PHASE) -> QuadratureSpec:
    """Looser tolerances for the nested original-variable integral."""
    return QuadratureSpec(abs_tol=1e-9, rel_tol=1e-8, phase_per_panel=phase_per_panel)


def flux_spec_for(spec: QuadratureSpec | None) -> QuadratureSpec:
    """The nested-integral spec matching an oracle spec, loosened by the same factors as the defaults."""
    if spec is None:
        return flux_spec()
    return QuadratureSpec(
        abs_tol=FLUX_ABS_FACTOR * spec.abs_tol, rel_tol=FLUX_REL_FACTOR * spec.rel_tol,
        phase_per_panel=spec.phase_per_panel,
    )


@dataclass(frozen=True)
class FluxConstants:
    b: float
    c_w: float
    j0: float = 1.0

    @property
    def powerlaw_const(self) -> float:
        """C0 = b·√J0 in f(x) = C0·x^{−(γ+3)/2}."""
        return self.b * math.sqrt(self.j0)

    def to_dict(self) -> dict:
        return {"b": self.b, "c_w": self.c_w, "j0": self.j0}


# ---------------------------------------------------------------------------
# Rules on the real line with the kernel's narrow features as breakpoints
# ---------------------------------------------------------------------------


def _breakpoints(w: LogKernel) -> np.ndarray:
    pts = {0.0}
    for coef, term in w.terms:
        if coef != 0.0 and term.support is not None:
            for edge in term.support:
                pts.update((edge, -edge))
    return np.array(sorted(pts))


def kernel_line_rule(
    envelope: Callable[[np.ndarray], np.ndarray], w: LogKernel, spec: QuadratureSpec
) -> QuadratureRule:
    """Rule on ℝ adapted to ``envelope``, split at ±support edges of every kernel term."""
    br = _breakpoints(w)
    pieces = [semi_infinite_rule(lambda t: envelope(-t), -br[0], spec).reflected(0.0)]
    for lo, hi in zip(br[:-1], br[1:]):
        if hi > lo:
            pieces.append(interval_rule(envelope, lo, hi, spec))
    pieces.append(semi_infinite_rule(envelope, br[-1], spec))
    return QuadratureRule.concatenate(pieces)


# ---------------------------------------------------------------------------
# Log-variable oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _DirectPlan:
    """Outer ξ rule and inner rules shared by every X for one (H1, H2, W)."""

    h1: PeriodicField
    h2: PeriodicField
    xi: np.ndarray
    outer_w: np.ndarray
    L: np.ndarray
    periods: np.ndarray
    rem: np.ndarray
    u_per: np.ndarray
    gl_x: np.ndarray
    gl_w: np.ndarray
    T: float


def _plan(h1: PeriodicField, h2: PeriodicField, w: LogKernel, spec: QuadratureSpec) -> _DirectPlan:
    if w.q >= 0.5:
        raise ParameterError(f"envelope exponent q = {w.q} must be < 1/2")
    if abs(h1.k_star - h2.k_star) > 1e-14 * h1.k_star:
        raise ValueError("fields live on different periods")
    h1, h2 = h1.trimmed(TRIM_RTOL), h2.trimmed(TRIM_RTOL)
    k = h1.k_star
    degree = h1.N + h2.N
    amp = h1.sup_bound() * h2.sup_bound()
    s = spec.with_(
        tail_exponent=w.q - 0.5,
        envelope_const=max(2.0 * w.envelope_const * amp, 1e-300),
        oscillation_freq=degree * k,
    )

    def envelope(xi: np.ndarray) -> np.ndarray:
        # e^{ξ/2}·L(ξ) = e^{−(−ξ)/2}·ln(1 + e^{−ξ})
        return np.abs(w(xi)) * half_weighted_log1pexp(-xi) * amp

    rule = kernel_line_rule(envelope, w, s)
    xi = rule.nodes
    T = 2.0 * math.pi / k
    L = log1pexp(-xi)
    periods = np.floor(L / T)
    rem = L - periods * T
    n_per = 2 * degree + 2
    n_rem = 20 + int(math.ceil(0.75 * 2.0 * math.pi * degree))
    x, wts = _gl_nodes(n_rem)
    outer_w = rule.weights * np.exp(xi / 2.0) * w(xi)
    return _DirectPlan(h1=h1, h2=h2, xi=xi, outer_w=outer_w, L=L, periods=periods, rem=rem,
                       u_per=T * np.arange(n_per) / n_per, gl_x=x, gl_w=wts, T=T)


def _gl_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n <= 15:
        return gauss_legendre()
    x, w = roots_legendre(n)
    return np.asarray(x), np.asarray(w)


def _direct_at(plan: _DirectPlan, X: float) -> float:
    h1, h2 = plan.h1, plan.h2
    g1_per = h1(X + plan.u_per)
    total = []
    for start in range(0, plan.xi.size, XI_CHUNK):
        sl = slice(start, start + XI_CHUNK)
        xi = plan.xi[sl, None]
        # whole periods: exact trapezoid for the band-limited product
        per = np.mean(g1_per[None, :] * h2(X + plan.u_per[None, :] - xi), axis=1) * plan.T
        # remainder [−L, −L + rem]
        L = plan.L[sl, None]
        r = plan.rem[sl, None]
        u = -L + 0.5 * r * (plan.gl_x[None, :] + 1.0)
        part = 0.5 * plan.rem[sl] * np.sum(plan.gl_w[None, :] * h1(X + u) * h2(X + u - xi), axis=1)
        inner = plan.periods[sl] * per + part
        total.append(plan.outer_w[sl] * inner)
    return math.fsum(np.concatenate(total))


def bilinear_direct_grid(
    h1: PeriodicField,
    h2: PeriodicField,
    w: LogKernel,
    X_grid: Sequence[float],
    spec: QuadratureSpec | None = None,
    workers: int = 1,
) -> np.ndarray:
    """bilinear_direct at every X of the grid, sharing the outer rule."""
    plan = _plan(h1, h2, w, spec or oracle_spec())
    Xs = [float(X) for X in X_grid]
    if workers > 1 and len(Xs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(lambda X: _direct_at(plan, X), Xs)))
    return np.array([_direct_at(plan, X) for X in Xs])


def bilinear_direct(h1: PeriodicField, h2: PeriodicField, w: LogKernel, X: float,
                    spec: QuadratureSpec | None = None) -> float:
    """B(H1, H2; W)(X) by direct quadrature in log variables."""
    return float(bilinear_direct_grid(h1, h2, w, [X], spec)[0])


# ---------------------------------------------------------------------------
# Original-variable oracle
# ---------------------------------------------------------------------------


def _segments(lo: float, cuts: np.ndarray) -> list[float]:
    inside = cuts[cuts > lo]
    return [lo, *inside.tolist()]


def flux_J(
    f: Callable[[np.ndarray], np.ndarray],
    kernel: tuple[ShapeFunction, HomogeneityParams],
    x: float,
    spec: QuadratureSpec | None = None,
    freq: float = 0.0,
    features: Sequence[float] = (),
) -> float:
    """
    J(x; f) = ∫_0^x dy ∫_{x−y}^∞ dz K(y, z)·y·f(y)·f(z).

    With y = xη and z = xe^v,

        J = x³ ∫_0^1 η f(xη) ∫_{ln(1−η)}^∞ e^v K(xη, xe^v) f(xe^v) dv dη,

    and the η-integral is split at 1/2 and graded at both ends by η = e^{−τ}
    and 1 − η = e^{−τ}. ``features`` lists log-ratios ln(z/y) around which
    K has narrow structure (bump edges); the inner integral is split there.
    ``freq`` is the log-variable bandwidth of f.

    Raises
    ------
    ParameterError
        γ + 2p ≥ 1 or x ≤ 0 (the integral diverges).
    """
    phi, params = kernel
    if params.window >= 1.0:
        raise ParameterError("flux integral diverges for gamma + 2p >= 1")
    if not x > 0:
        raise ParameterError("flux_J requires x > 0")
    spec = spec or flux_spec()
    decay = 0.5 - params.q
    s = spec.with_(tail_exponent=-decay, oscillation_freq=freq)
    feats = np.array(sorted({float(c) for c in features} | {-float(c) for c in features}))

    def inner(eta: float, v_lo: float) -> float:
        y = x * eta

        def g(v: np.ndarray) -> np.ndarray:
            z = x * np.exp(v)
            return np.exp(v) * kernel_eval(phi, params, y, z) * f(z)

        cuts = _segments(v_lo, math.log(eta) + feats) if feats.size else [v_lo]
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            total += integrate_interval(g, a, b, s)[0].real
        total += integrate_semi_infinite(g, cuts[-1], s)[0].real
        return total

    def outer_small(tau: np.ndarray) -> np.ndarray:
        eta = np.exp(-tau)
        v_lo = np.log1p(-eta)
        vals = np.array([inner(e, v) for e, v in zip(eta, v_lo)])
        return eta * f(x * eta) * vals * eta

    def outer_large(tau: np.ndarray) -> np.ndarray:
        one_minus = np.exp(-tau)
        eta = -np.expm1(-tau)
        vals = np.array([inner(e, -t) for e, t in zip(eta, tau)])
        return eta * f(x * eta) * vals * one_minus

    start = math.log(2.0)
    left, _ = integrate_semi_infinite(outer_small, start, s)
    right, _ = integrate_semi_infinite(outer_large, start, s)
    return float(x**3 * (left.real + right.real))


def powerlaw_sampler(c0: float, params: HomogeneityParams) -> Callable[[np.ndarray], np.ndarray]:
    beta = params.power_law_exponent
    return lambda x: c0 * np.asarray(x, dtype=float) ** (-beta)


def kernel_features(w: LogKernel) -> list[float]:
    """Support edges of the narrow terms of W (log-ratio positions)."""
    return [float(e) for e in _breakpoints(w) if e > 0]


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------


def compute_b(w: LogKernel, spec: QuadratureSpec | None = None) -> float:
    """
    b = B(1, 1; W)^{−1/2}, cross-checked against (Ψ(0; W)/2)^{−1/2}.

    Raises
    ------
    VerificationError
        Non-positive integral or disagreement with the symbol at k = 0.
    """
    spec = spec or oracle_spec()
    one = PeriodicField.constant(1.0, 1.0, 0)
    b11 = bilinear_direct(one, one, w, 0.0, spec)
    if not b11 > 0:
        raise VerificationError(f"B(1,1;W) = {b11:.6g} is not positive")
    half_psi0 = eval_psi(0.0, w, spec).real / 2.0
    if abs(b11 - half_psi0) > CONSISTENCY_RTOL * abs(b11):
        raise VerificationError(f"B(1,1;W) = {b11:.15g} disagrees with Psi(0;W)/2 = {half_psi0:.15g}")
    return b11 ** -0.5


def compute_cw(w: LogKernel, spec: QuadratureSpec | None = None) -> float:
    """
    C_W = ∫_{−∞}^0 dY ∫_{ln(1−e^Y)}^∞ dZ e^{(Y−Z)/2}|W(Y−Z)|.

    Exchanging the order (ξ = Y − Z) leaves ∫_ℝ e^{−ξ/2}|W(ξ)| ln(1 + e^ξ) dξ.
    """
    spec = (spec or oracle_spec()).with_(tail_exponent=w.q - 0.5, envelope_const=2.0 * w.envelope_const)

    def integrand(xi: np.ndarray) -> np.ndarray:
        return np.abs(w(xi)) * half_weighted_log1pexp(xi)

    rule = kernel_line_rule(integrand, w, spec)
    value = rule.integrate(integrand(rule.nodes)).real
    if not (value > 0 and math.isfinite(value)):
        raise QuadratureError(f"C_W = {value!r} is not a positive finite number")
    return float(value)


def flux_constants(w: LogKernel, j0: float = 1.0, spec: QuadratureSpec | None = None) -> FluxConstants:
    return FluxConstants(b=compute_b(w, spec), c_w=compute_cw(w, spec), j0=float(j0))


# ---------------------------------------------------------------------------
# End-to-end verification
# ---------------------------------------------------------------------------


def default_x_grid(Q: float) -> list[float]:
    return [1.0, Q ** (1 / 3), Q**0.5, Q ** (2 / 3), Q, 10.0 * Q]


@dataclass
class VerificationReport:
    J0: float
    X_grid: np.ndarray
    B_values: np.ndarray
    x_grid: np.ndarray
    J_values: np.ndarray
    tol: float
    tol_x: float
    selfsim_residual: float
    extras: dict = field(default_factory=dict)

    @property
    def max_rel_dev_X(self) -> float:
        return float(np.max(np.abs(self.B_values - self.J0)) / self.J0) if self.B_values.size else 0.0

    @property
    def max_rel_dev_x(self) -> float:
        return float(np.max(np.abs(self.J_values - self.J0)) / self.J0) if self.J_values.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_dev_X <= self.tol and self.max_rel_dev_x <= self.tol_x

    def to_dict(self) -> dict:
        return {
            "J0": self.J0,
            "max_rel_dev_X": self.max_rel_dev_X,
            "max_rel_dev_x": self.max_rel_dev_x,
            "selfsim_residual": self.selfsim_residual,
            "grids": {"X": self.X_grid, "x": self.x_grid},
            "tolerances": {"X": self.tol, "x": self.tol_x},
            "pass": self.passed,
            **self.extras,
        }


def selfsim_residual(sol: Solution, xs: Sequence[float] = (1.0, 2.7, 10.0)) -> float:
    """max |f(Qx)·Q^{(γ+3)/2} − f(x)| / f(x)."""
    x = np.asarray(xs, dtype=float)
    beta = sol.params.power_law_exponent
    fx = back_transform(sol, x)
    fq = back_transform(sol, sol.Q * x) * sol.Q**beta
    return float(np.max(np.abs(fq - fx) / np.abs(fx)))


def verify_constant_flux(
    sol: Solution,
    X_grid: Sequence[float] | None = None,
    x_grid: Sequence[float] | None = None,
    tol: float = 1e-4,
    tol_x: float | None = None,
    X_points: int = 32,
    spec: QuadratureSpec | None = None,
    workers: int = 1,
) -> VerificationReport:
    """
    Evaluate B(H, H; W)(X) and J(x; f) against J0.

    Defaults: X_points equispaced over one period, x at 1, Q^{1/3}, Q^{1/2},
    Q^{2/3}, Q and 10Q. The x-space tolerance defaults to 2·tol.
    """
    T = 2.0 * math.pi / sol.k_star
    Xg = np.linspace(0.0, T, X_points, endpoint=False) if X_grid is None else np.asarray(X_grid, dtype=float)
    xg = np.asarray(default_x_grid(sol.Q) if x_grid is None else x_grid, dtype=float)
    logger.info(f"🔧 verifying flux at {Xg.size} X-points and {xg.size} x-points")

    B = bilinear_direct_grid(sol.H, sol.H, sol.kernel, Xg, spec, workers)
    kernel = (phi_from_w(sol.kernel, sol.params), sol.params)
    trimmed = sol.H.trimmed(1e-12)
    freq = trimmed.N * sol.k_star
    feats = kernel_features(sol.kernel)
    f = lambda x: back_transform(sol, x)  # noqa: E731
    x_spec = flux_spec_for(spec)

    def one(x: float) -> float:
        return flux_J(f, kernel, float(x), spec=x_spec, freq=freq, features=feats)

    if workers > 1 and xg.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            J = np.array(list(pool.map(one, xg)))
    else:
        J = np.array([one(x) for x in xg])

    report = VerificationReport(
        J0=sol.J0, X_grid=Xg, B_values=B, x_grid=xg, J_values=J, tol=float(tol),
        tol_x=2.0 * tol if tol_x is None else float(tol_x), selfsim_residual=selfsim_residual(sol),
    )
    icon = "✅" if report.passed else "❌"
    logger.info(
        f"{icon} flux deviation X-space {report.max_rel_dev_X:.2e} (tol {report.tol:g}), "
        f"x-space {report.max_rel_dev_x:.2e} (tol {report.tol_x:g})"
    )
    return report


def write_report(report: VerificationReport, out_dir: str | Path, config_hash: str) -> list[Path]:
    out = Path(out_dir)
    return [
        write_json(report.to_dict(), out / "verify.json", config_hash),
        write_csv(pd.DataFrame({"X": report.X_grid, "B_HH": report.B_values}), out / "B_HH.csv", config_hash),
        write_csv(pd.DataFrame({"x": report.x_grid, "J": report.J_values}), out / "J.csv", config_hash),
    ]
