# src/coagflux/symbol.py
"""
Linearisation symbol Ψ(k; W).

The linearised flux operator acts diagonally on Fourier modes,
𝓛(e^{ik·}; W) = Ψ(k; W)·e^{ik·}, with

    Ψ(k; W) = (1/(ik)) ∫_0^∞ W(z)·G(z, k) dz
    G(z, k) = e^{−z/2}(1 + e^{ikz})(1 − (e^z + 1)^{−ik})
            + e^{z/2}(1 + e^{−ikz})(1 − (e^{−z} + 1)^{−ik})

and, at small |k|, the equivalent whole-line form

    Ψ(k; W) = ∫_ℝ e^{−z/2} W(z) (1 + e^{ikz}) (1 − (e^z + 1)^{−ik}) / (ik) dz,

whose bracket quotient is continuous through k = 0
(Ψ(0; W) = 2∫ e^{−z/2} W(z) ln(e^z + 1) dz).

Real zeros k* of Ψ are bifurcation wavenumbers. A two-bump kernel can place
a zero where G(z_a, k) and G(z_b, k) point in opposite directions, which is
what ``alignment_scan`` locates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn
from scipy.special import loggamma

from coagflux.errors import ConstructionError, ParameterError
from coagflux.kernelspace import HomogeneityParams, KernelTerm, LogKernel, term_envelope
from coagflux.logging_config import get_logger
from coagflux.numerics import (
    QuadratureSpec,
    half_weighted_log1pexp,
    integrate_interval,
    integrate_semi_infinite,
    log1pexp,
    sinc_bracket,
    stable_bracket,
)

logger = get_logger(__name__)

K_FLOOR = 1e-4
K_MAX = 500.0
ZERO_RTOL = 1e-10
ALIGN_WIDTH = 1e-10
CERTIFY_POINTS = 256
CERTIFY_PHASE = 8.0
DIFF_STEP = 1e-5
ROOT_XTOL = 1e-14


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BifurcationPoint:
    """
    Largest positive zero k* of Ψ(·; W0).

    ``residual`` is |Ψ(k*; W0)|, ``scale`` the median |Ψ| on the scan grid,
    ``asymptotic_ratio`` the value ik·Ψ(K_max)/psi_asymptotic(K_max).
    ``k_err`` bounds the shift of k* caused by quadrature error,
    (err_Ψ(k*) + abs_tol)/|Ψ'(k*)| plus the root tolerance.
    """

    k_star: float
    residual: float
    scale: float
    certified_to: float
    asymptotic_ratio: complex | None = None
    k_err: float = 0.0

    @property
    def T(self) -> float:
        return 2.0 * math.pi / self.k_star

    @property
    def Q(self) -> float:
        return math.exp(self.T)

    def to_dict(self) -> dict:
        ratio = self.asymptotic_ratio
        return {
            "k_star": self.k_star,
            "T": self.T,
            "Q": self.Q,
            "residual": self.residual,
            "scale": self.scale,
            "k_err": self.k_err,
            "certified_to": self.certified_to,
            "asymptotic_ratio": None if ratio is None else [ratio.real, ratio.imag],
        }


@dataclass(frozen=True)
class SymbolAsymptotics:
    """
    Large-|k| behaviour a·sgn(k)·e^{i(π sgn k/2)(q − 1/2)}·|k|^{1/2+q}.

    This is the leading term of ik·Ψ(k; W) (the G-integral); Ψ itself is this
    expression divided by ik.
    """

    amplitude: complex
    exponent: float
    phase_per_sign: float

    @classmethod
    def from_q(cls, q: float) -> "SymbolAsymptotics":
        # 1 + γ + 2p = 1 + 2q
        a = 2j * gamma_fn(0.5 - q) / (1.0 + 2.0 * q)
        return cls(amplitude=complex(a), exponent=0.5 + q, phase_per_sign=0.5 * math.pi * (q - 0.5))

    @classmethod
    def from_params(cls, params: HomogeneityParams) -> "SymbolAsymptotics":
        return cls.from_q(params.q)

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        sgn = np.sign(k)
        return self.amplitude * sgn * np.exp(1j * self.phase_per_sign * sgn) * np.abs(k) ** self.exponent


def psi_asymptotic(k, params: HomogeneityParams):
    """Leading large-|k| term of ik·Ψ(k; W) for a kernel with exponents ``params``."""
    if np.any(np.asarray(k) == 0):
        raise ParameterError("psi_asymptotic requires k != 0")
    return SymbolAsymptotics.from_params(params)(k)


@dataclass(frozen=True)
class AlignmentBracket:
    lo: float
    hi: float
    product: complex

    @property
    def root(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


# ---------------------------------------------------------------------------
# G and alignment
# ---------------------------------------------------------------------------


def eval_G(z, k):
    """
    G(z, k), even in z, evaluated on |z| with stable bracket factors.

    The e^{z/2} branch is written as ik·e^{−z/2}·(ln(1+u)/u)·(1 + e^{−ikz})·
    sinc_bracket(k·ln(1+u)) with u = e^{−z}, which stays finite for any z.
    """
    z = np.abs(np.asarray(z, dtype=float))
    k = float(k)
    l_plus = log1pexp(z)
    first = np.exp(-z / 2.0) * (1.0 + np.exp(1j * k * z)) * stable_bracket(l_plus, k)
    u = np.exp(-z)
    l_minus = np.log1p(u)
    ratio = np.divide(l_minus, u, out=np.ones_like(u), where=u > 0)
    second = 1j * k * np.exp(-z / 2.0) * ratio * (1.0 + np.exp(-1j * k * z)) * sinc_bracket(k * l_minus)
    out = first + second
    return out[()] if np.ndim(out) == 0 else out


def alignment_product(z_a: float, z_b: float, k):
    """conj(G(z_b, k))·G(z_a, k), vectorised over k."""
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.array([np.conj(eval_G(z_b, kk)) * eval_G(z_a, kk) for kk in ks])
    return out[0] if np.ndim(k) == 0 else out


def _bisect_bracket(h, lo: float, hi: float, h_lo: float, width: float) -> tuple[float, float]:
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        h_mid = h(mid)
        if h_mid == 0.0:
            return mid, mid
        if (h_mid > 0) == (h_lo > 0):
            lo, h_lo = mid, h_mid
        else:
            hi = mid
    return lo, hi


def alignment_scan(
    z_a: float, z_b: float, k_range: tuple[float, float], grid: int = 1000, width: float = ALIGN_WIDTH
) -> list[AlignmentBracket]:
    """
    Brackets where Im(conj(G(z_b,k))·G(z_a,k)) changes sign with negative real part.

    An empty list is not an error; the caller widens the range.
    """
    lo, hi = map(float, k_range)
    if not (0 < lo < hi):
        raise ValueError(f"k_range must be positive and increasing, got {k_range}")
    if z_a == z_b:
        return []
    ks = np.linspace(lo, hi, int(grid))
    prod = alignment_product(z_a, z_b, ks)
    im = prod.imag

    def h(k: float) -> float:
        return float(alignment_product(z_a, z_b, k).imag)

    out: list[AlignmentBracket] = []
    for i in np.nonzero(im[:-1] * im[1:] < 0)[0]:
        a, b = _bisect_bracket(h, ks[i], ks[i + 1], im[i], width)
        product = complex(alignment_product(z_a, z_b, 0.5 * (a + b)))
        if product.real < 0:
            out.append(AlignmentBracket(lo=a, hi=b, product=product))
    logger.debug("alignment_scan(%g, %g, %s): %d brackets", z_a, z_b, k_range, len(out))
    return out


# ---------------------------------------------------------------------------
# Ψ
# ---------------------------------------------------------------------------


def _term_spec(spec: QuadratureSpec, q: float, envelope: float, freq: float) -> QuadratureSpec:
    return spec.with_(tail_exponent=q - 0.5, envelope_const=envelope, oscillation_freq=freq)


def _psi_term_regular(k: float, term: KernelTerm, q: float, envelope: float,
                      spec: QuadratureSpec) -> tuple[complex, float]:
    s = _term_spec(spec, q, envelope * (4.0 + 2.0 * abs(k)), 2.0 * abs(k))

    def f(z: np.ndarray) -> np.ndarray:
        return term(z) * eval_G(z, k)

    if term.support is not None:
        lo, hi = term.support
        value, err = integrate_interval(f, max(lo, 0.0), hi, s)
    else:
        value, err = integrate_semi_infinite(f, 0.0, s)
    return value / (1j * k), err / abs(k)


def _psi_term_small_k(k: float, term: KernelTerm, q: float, envelope: float,
                      spec: QuadratureSpec) -> tuple[complex, float]:
    s = _term_spec(spec, q, 4.0 * envelope, 2.0 * abs(k))

    def f(z: np.ndarray) -> np.ndarray:
        l_plus = log1pexp(z)
        return (
            term(z)
            * (1.0 + np.exp(1j * k * z))
            * half_weighted_log1pexp(z)
            * sinc_bracket(k * l_plus)
        )

    if term.support is not None:
        lo, hi = term.support
        right, err_r = integrate_interval(f, max(lo, 0.0), hi, s)
        left, err_l = integrate_interval(lambda t: f(-t), max(lo, 0.0), hi, s)
        return right + left, err_r + err_l
    right, err_r = integrate_semi_infinite(f, 0.0, s)
    left, err_l = integrate_semi_infinite(lambda t: f(-t), 0.0, s)
    return right + left, err_r + err_l


def psi_term_with_error(k: float, term: KernelTerm, q: float, envelope: float = 1.0,
                        spec: QuadratureSpec | None = None, k_floor: float = K_FLOOR) -> tuple[complex, float]:
    """Ψ(k; g) for a single even profile g, with the quadrature error estimate."""
    spec = spec or QuadratureSpec()
    if abs(k) < k_floor:
        value, err = _psi_term_small_k(float(k), term, q, envelope, spec)
    else:
        value, err = _psi_term_regular(float(k), term, q, envelope, spec)
    return complex(value), float(err)


def psi_term(k: float, term: KernelTerm, q: float, envelope: float = 1.0, spec: QuadratureSpec | None = None,
             k_floor: float = K_FLOOR) -> complex:
    """Ψ(k; g) for a single even profile g."""
    return psi_term_with_error(k, term, q, envelope, spec, k_floor)[0]


def eval_psi_with_error(k: float, w: LogKernel, spec: QuadratureSpec | None = None,
                        k_floor: float = K_FLOOR) -> tuple[complex, float]:
    """Ψ(k; W) and Σ|c_j|·err_j over the kernel's terms."""
    if w.q >= 0.5:
        raise ConstructionError(f"envelope exponent q = {w.q} must be < 1/2")
    total, err = 0.0 + 0.0j, 0.0
    for coef, term in w.terms:
        if coef != 0.0:
            v, e = psi_term_with_error(k, term, w.q, term_envelope(term, w.q), spec, k_floor)
            total += coef * v
            err += abs(coef) * e
    return total, err


def eval_psi(k: float, w: LogKernel, spec: QuadratureSpec | None = None, k_floor: float = K_FLOOR) -> complex:
    """Ψ(k; W) as the coefficient-weighted sum over the kernel's terms."""
    return eval_psi_with_error(k, w, spec, k_floor)[0]


def psi_scan(w: LogKernel, ks: Sequence[float], spec: QuadratureSpec | None = None,
             k_floor: float = K_FLOOR, workers: int = 1) -> np.ndarray:
    """Ψ on a k grid; with workers > 1 the points run on a thread pool, results in grid order."""
    ks = [float(k) for k in ks]
    if workers > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(lambda k: eval_psi(k, w, spec, k_floor), ks)), dtype=complex)
    return np.array([eval_psi(k, w, spec, k_floor) for k in ks], dtype=complex)


def psi_unit_kernel(k):
    """
    Closed form of Ψ(k; W ≡ 1) for γ = p = 0:

        √π·Γ(1/2 + ik)/Γ(1 + ik)·(2 − 1/(ik − 1/2)),   Ψ(0) = 4π.
    """
    k = np.asarray(k, dtype=float)
    ik = 1j * k
    ratio = np.exp(loggamma(0.5 + ik) - loggamma(1.0 + ik))
    return math.sqrt(math.pi) * ratio * (2.0 - 1.0 / (ik - 0.5))


# ---------------------------------------------------------------------------
# Bifurcation wavenumber
# ---------------------------------------------------------------------------


def _refine_zero(w: LogKernel, k_lo: float, k_hi: float, spec: QuadratureSpec, k_floor: float):
    """
    Zero of Ψ inside [k_lo, k_hi] along the direction of Ψ' (None if absent).

    Near a genuine zero Ψ(k) ≈ Ψ'(k*)(k − k*), so h(k) = Re(conj(d)·Ψ(k)) with
    d ≈ Ψ' changes sign exactly at k*.
    """
    p_lo = eval_psi(k_lo, w, spec, k_floor)
    p_hi = eval_psi(k_hi, w, spec, k_floor)
    d = (p_hi - p_lo) / (k_hi - k_lo)

    def h(k: float) -> float:
        return float((np.conj(d) * eval_psi(k, w, spec, k_floor)).real)

    h_lo, h_hi = (np.conj(d) * p_lo).real, (np.conj(d) * p_hi).real
    if h_lo * h_hi > 0:
        return None
    if h_lo == 0:
        return k_lo
    if h_hi == 0:
        return k_hi
    return brentq(h, k_lo, k_hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)


def _zeros_on_grid(w, ks, vals, scale, spec, k_floor, zero_rtol) -> list[float]:
    mags = np.abs(vals)
    found = []
    for i in range(1, len(ks) - 1):
        if mags[i] <= mags[i - 1] and mags[i] <= mags[i + 1]:
            root = _refine_zero(w, ks[i - 1], ks[i + 1], spec, k_floor)
            if root is not None and abs(eval_psi(root, w, spec, k_floor)) <= zero_rtol * scale:
                found.append(float(root))
    return found


def find_kstar(
    w0: LogKernel,
    k_scan: tuple[float, float],
    points: int = 401,
    K_max: float = K_MAX,
    spec: QuadratureSpec | None = None,
    k_floor: float = K_FLOOR,
    certify_points: int = CERTIFY_POINTS,
    asymptotic_rtol: float | None = None,
    zero_rtol: float = ZERO_RTOL,
    workers: int = 1,
) -> BifurcationPoint:
    """
    Largest positive zero of Ψ(·; w0) in ``k_scan``, certified up to K_max.

    The certification sweep runs a geometric grid from the top of the scan
    to K_max with wider panels and refines every local minimum of |Ψ|; any
    genuine zero above k* is an error. The agreement of ik·Ψ(K_max) with the
    asymptotic law is always recorded and raises only when
    ``asymptotic_rtol`` is given.

    Raises
    ------
    ConstructionError
        No zero in the scan, a zero above k*, or asymptotic disagreement.
    """
    spec = spec or QuadratureSpec()
    lo, hi = map(float, k_scan)
    ks = np.linspace(lo, hi, int(points))
    vals = psi_scan(w0, ks, spec, k_floor, workers)
    scale = float(np.median(np.abs(vals)))
    zeros = _zeros_on_grid(w0, ks, vals, scale, spec, k_floor, zero_rtol)
    if not zeros:
        raise ConstructionError(
            f"no zero of Psi found in k_scan=[{lo:g}, {hi:g}]; widen the scan or reduce epsilon"
        )
    k_star = max(zeros)
    value, psi_err = eval_psi_with_error(k_star, w0, spec, k_floor)
    residual = abs(value)
    slope = abs(eval_psi(k_star + DIFF_STEP, w0, spec, k_floor) - eval_psi(k_star - DIFF_STEP, w0, spec, k_floor))
    slope /= 2.0 * DIFF_STEP
    k_err = (psi_err + spec.abs_tol) / slope + ROOT_XTOL if slope > 0 else math.inf
    logger.info(f"🔧 k* = {k_star:.12f} ± {k_err:.1e} (|Psi| = {residual:.3e}, scale = {scale:.3e})")

    ratio = None
    if K_max > hi:
        sweep_spec = spec.with_(phase_per_panel=max(spec.phase_per_panel, CERTIFY_PHASE))
        kc = np.geomspace(hi, K_max, int(certify_points))
        cvals = psi_scan(w0, kc, sweep_spec, k_floor, workers)
        above = _zeros_on_grid(w0, kc, cvals, scale, spec, k_floor, zero_rtol)
        above = [k for k in above if k > k_star + 1e-9]
        if above:
            raise ConstructionError(
                f"Psi has a zero at k = {min(above):.6g} above the scan; widen k_scan"
            )
        asym = SymbolAsymptotics.from_q(w0.q)
        ratio = complex(1j * K_max * eval_psi(K_max, w0, sweep_spec, k_floor) / asym(K_max))
        logger.info(f"ℹ️ ik·Psi/asymptotic at K_max = {K_max:g}: |r| = {abs(ratio):.4f}, arg r = {np.angle(ratio):+.4f}")
        if asymptotic_rtol is not None and abs(ratio - 1.0) > asymptotic_rtol:
            raise ConstructionError(
                f"asymptotic certification failed at K_max = {K_max:g} (ratio {ratio:.4g}); increase K_max"
            )

    return BifurcationPoint(
        k_star=k_star, residual=residual, scale=scale, certified_to=max(K_max, hi), asymptotic_ratio=ratio,
        k_err=k_err,
    )
