# src/coagflux/kernelspace.py
"""
Homogeneous coagulation kernels in three equivalent forms.

    K(x, y) = (x + y)^γ · Φ(x / (x + y))                 original variables
    Φ(s)    = K(s, 1 − s)                                 shape on (0, 1)
    W(Y)    = (e^{Y/2} + e^{−Y/2})^γ · Φ(1 / (1 + e^Y))   log variables

Φ is symmetric about s = 1/2 and behaves like s^{−p} at the endpoints, so W
is even and grows like e^{q|Y|} with q = γ/2 + p.

A LogKernel is a linear combination of even profiles ("terms"). Keeping the
terms separate lets the symbol and table integrals run each term over its own
support (narrow bumps vs. the broad tail) and combine linearly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from coagflux.errors import ParameterError
from coagflux.logging_config import get_logger

logger = get_logger(__name__)

Profile = Callable[[np.ndarray], np.ndarray]

S_EDGE = 1e-9
GRID_EXTENT = 30.0
GRID_POINTS = 1024
METRIC_POINTS = 4096
ENDPOINT_SAMPLES = (1e-6, 1e-7, 1e-8)
CHECK_POINTS = 33
ENDPOINT_SLOPE_MAX = 0.25


# ---------------------------------------------------------------------------
# Exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HomogeneityParams:
    """Homogeneity degree γ and endpoint exponent p, with 0 ≤ γ + 2p < 1."""

    gamma: float
    p: float

    def __post_init__(self):
        w = self.gamma + 2.0 * self.p
        if not (math.isfinite(w) and 0.0 <= w < 1.0):
            raise ParameterError(f"gamma + 2p = {w:.6g} outside [0, 1); use validate_params")

    @property
    def q(self) -> float:
        return self.gamma / 2.0 + self.p

    @property
    def window(self) -> float:
        return self.gamma + 2.0 * self.p

    @property
    def decay(self) -> float:
        """1/2 − q > 0, the decay rate of e^{−|z|/2}·W(z)."""
        return 0.5 - self.q

    @property
    def power_law_exponent(self) -> float:
        """f(x) ∝ x^{−(γ+3)/2}."""
        return (self.gamma + 3.0) / 2.0

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "p": self.p}


def validate_params(gamma: float, p: float) -> HomogeneityParams:
    """
    Check the exponent window and normalise p.

    When γ + 2p < 0 the kernel is rewritten with p̃ = −(γ + p), which leaves
    K unchanged and brings γ + 2p̃ into [0, 1).

    Raises
    ------
    ParameterError
        γ + 2p ≥ 1 (no constant-flux solution) or γ + 2p ≤ −1.
    """
    gamma, p = float(gamma), float(p)
    w = gamma + 2.0 * p
    if not math.isfinite(w):
        raise ParameterError("gamma and p must be finite")
    if w >= 1.0:
        raise ParameterError(f"no constant-flux regime: gamma + 2p = {w:.6g} >= 1")
    if w < 0.0:
        p_tilde = -(gamma + p)
        if gamma + 2.0 * p_tilde >= 1.0:
            raise ParameterError(f"no constant-flux regime: gamma + 2p = {w:.6g} <= -1")
        logger.info(f"ℹ️ gamma + 2p = {w:.6g} < 0; normalising p -> p̃ = {p_tilde:.6g}")
        p = p_tilde
    return HomogeneityParams(gamma=gamma, p=p)


# ---------------------------------------------------------------------------
# Shape functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapeFunction:
    """Φ on (0, 1), symmetric, with s^p·Φ(s) → finite positive limit."""

    phi: Profile = field(repr=False)
    p: float
    label: str = "phi"

    def __post_init__(self):
        s = np.concatenate([np.linspace(ENDPOINT_SAMPLES[0], 0.5, CHECK_POINTS), ENDPOINT_SAMPLES])
        values = np.asarray(self.phi(s), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ParameterError(f"shape function {self.label} must be finite and non-negative on (0, 1/2]")
        ends = np.asarray(ENDPOINT_SAMPLES)
        limit = ends**self.p * values[-ends.size:]
        if not np.all(limit > 0.0):
            raise ParameterError(f"s^p·Φ(s) of {self.label} must tend to a positive limit (p = {self.p:g})")
        slope = math.log(limit[-1] / limit[0]) / math.log(ends[-1] / ends[0])
        if abs(slope) > ENDPOINT_SLOPE_MAX:
            raise ParameterError(
                f"s^p·Φ(s) of {self.label} does not settle as s → 0 (log-slope {slope:+.3f}); check p = {self.p:g}"
            )

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any((s <= 0.0) | (s >= 1.0)):
            raise ParameterError("shape function evaluated outside (0, 1)")
        return self.phi(s)

    def symmetry_residual(self, n: int = 257) -> float:
        s = np.linspace(S_EDGE, 0.5, n)
        a, b = self(s), self(1.0 - s)
        return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))

    def endpoint_limit(self) -> tuple[np.ndarray, float]:
        return shape_endpoint_limit(self)


def unit_shape() -> ShapeFunction:
    """Φ ≡ 1 (the constant kernel when γ = 0)."""
    return ShapeFunction(phi=lambda s: np.ones_like(np.asarray(s, dtype=float)), p=0.0, label="unit")


def power_shape(p: float) -> ShapeFunction:
    """Φ(s) = s^{−p}(1 − s)^{−p}."""
    return ShapeFunction(phi=lambda s: (s * (1.0 - s)) ** (-p), p=float(p), label=f"power({p!r})")


def shape_endpoint_limit(phi: ShapeFunction, samples: Sequence[float] = ENDPOINT_SAMPLES):
    """
    Cauchy-sequence check of lim_{s→0} s^p·Φ(s).

    Returns
    -------
    values : ndarray
        s^p·Φ(s) at each sample.
    spread : float
        (max − min) / max of the values; small when the limit has settled.
    """
    s = np.asarray(samples, dtype=float)
    values = s ** phi.p * phi(s)
    top = float(np.max(np.abs(values)))
    spread = float((np.max(values) - np.min(values)) / top) if top > 0 else math.inf
    return values, spread


# ---------------------------------------------------------------------------
# Kernels in log variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelTerm:
    """
    One even profile z ↦ g(|z|).

    ``support`` is the |z| interval outside which the profile is negligible
    (None: the whole line). ``params`` feeds the fingerprint, so two terms
    with the same kind and params must be the same function.
    """

    kind: str
    params: tuple[tuple[str, float], ...]
    profile: Profile = field(repr=False, compare=False)
    support: tuple[float, float] | None = None

    def __call__(self, z) -> np.ndarray:
        return self.profile(np.abs(np.asarray(z, dtype=float)))

    def describe(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.params}}


@dataclass(frozen=True)
class LogKernel:
    """
    W(z) = Σ_j c_j · g_j(|z|).

    Parameters
    ----------
    terms : tuple of (coefficient, KernelTerm)
    q : float
        Envelope exponent, |W(z)| ≤ envelope_const · e^{q|z|}.
    envelope_const : float
    symmetric : bool
        Always True for kernels built from even terms.
    """

    terms: tuple[tuple[float, KernelTerm], ...]
    q: float
    envelope_const: float = 1.0
    symmetric: bool = True

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for coef, term in self.terms:
            if coef != 0.0:
                out = out + coef * term(z)
        return out

    def __add__(self, other: "LogKernel") -> "LogKernel":
        return LogKernel(
            terms=self.terms + other.terms,
            q=max(self.q, other.q),
            envelope_const=self.envelope_const + other.envelope_const,
            symmetric=self.symmetric and other.symmetric,
        )

    def scaled(self, c: float) -> "LogKernel":
        return LogKernel(
            terms=tuple((c * coef, term) for coef, term in self.terms),
            q=self.q,
            envelope_const=max(abs(c), 1e-300) * self.envelope_const,
            symmetric=self.symmetric,
        )

    def __mul__(self, c: float) -> "LogKernel":
        return self.scaled(float(c))

    __rmul__ = __mul__

    def describe(self) -> list[dict]:
        return [{"coef": coef, **term.describe()} for coef, term in self.terms]

    def fingerprint(self) -> str:
        payload = json.dumps({"q": self.q, "terms": self.describe()}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def symmetry_residual(self, grid: np.ndarray | None = None) -> float:
        y = log_grid() if grid is None else np.asarray(grid, dtype=float)
        w = self(y)
        return float(np.max(np.abs(w - self(-y))) / max(np.max(np.abs(w)), 1e-300))

    def envelope_ratio(self, grid: np.ndarray | None = None) -> float:
        """max |W(Y)| e^{−q|Y|} / envelope_const on the grid (≤ 1 when the envelope holds)."""
        y = log_grid() if grid is None else np.asarray(grid, dtype=float)
        return float(np.max(np.abs(self(y)) * np.exp(-self.q * np.abs(y))) / self.envelope_const)


def log_grid(n: int = GRID_POINTS, extent: float = GRID_EXTENT) -> np.ndarray:
    """Symmetric grid of n points with |Y| ≤ extent, geometric in |Y|."""
    half = np.geomspace(1e-3, extent, n // 2)
    return np.concatenate([-half[::-1], half])


def measure_envelope(profile: Profile, q: float, grid: np.ndarray | None = None) -> float:
    """Smallest C with |W| ≤ C·e^{q|Y|} on the grid (slightly inflated)."""
    y = log_grid() if grid is None else grid
    c = float(np.max(np.abs(profile(y)) * np.exp(-q * np.abs(y))))
    return max(c, 1e-300) * (1.0 + 1e-9)


@lru_cache(maxsize=256)
def term_envelope(term: KernelTerm, q: float) -> float:
    """measure_envelope for a single term; terms with equal kind and params share it."""
    return measure_envelope(term, q)


def kernel_from_profile(
    profile: Profile, q: float, kind: str, params: dict | None = None, support=None
) -> LogKernel:
    term = KernelTerm(kind=kind, params=tuple(sorted((params or {}).items())), profile=profile, support=support)
    return LogKernel(terms=((1.0, term),), q=q, envelope_const=measure_envelope(term, q))


def unit_kernel() -> LogKernel:
    """W ≡ 1."""
    return kernel_from_profile(lambda z: np.ones_like(z), q=0.0, kind="unit")


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------


def _two_cosh_half(y: np.ndarray) -> np.ndarray:
    # e^{Y/2} + e^{−Y/2}
    return 2.0 * np.cosh(y / 2.0)


def w_from_phi(phi: ShapeFunction, params: HomogeneityParams) -> LogKernel:
    """W(Y) = (e^{Y/2} + e^{−Y/2})^γ · Φ(1/(1 + e^Y)), evaluated on the s ≤ 1/2 branch."""
    gamma = params.gamma

    def profile(y: np.ndarray) -> np.ndarray:
        s = expit(-np.abs(y))
        return _two_cosh_half(y) ** gamma * phi.phi(s)

    return kernel_from_profile(profile, q=params.q, kind=f"shape:{phi.label}", params={"gamma": gamma, "p": phi.p})


def phi_from_w(w: LogKernel, params: HomogeneityParams) -> ShapeFunction:
    """Φ(s) = W(log((1−s)/s)) / (√((1−s)/s) + √(s/(1−s)))^γ."""
    gamma = params.gamma

    def phi(s: np.ndarray) -> np.ndarray:
        y = -logit(s)
        return w(y) / _two_cosh_half(y) ** gamma

    return ShapeFunction(phi=phi, p=params.p, label=f"from_w:{w.fingerprint()[:12]}")


def kernel_eval(phi: ShapeFunction, params: HomogeneityParams, x, y) -> np.ndarray:
    """K(x, y) = (x + y)^γ · Φ(x/(x + y)); uses Φ(s) = Φ(1 − s) to stay off s = 1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise ParameterError("kernel_eval requires x > 0 and y > 0")
    total = x + y
    s = np.minimum(x, y) / total
    return total ** params.gamma * phi(s)


def metric_grid(n: int = METRIC_POINTS) -> np.ndarray:
    """Logit-uniform grid on [1e−9, 1 − 1e−9], dense near both endpoints."""
    edge = float(logit(1.0 - S_EDGE))
    return expit(np.linspace(-edge, edge, n))


def kernel_metric(phi1: ShapeFunction, phi2: ShapeFunction, p: float, grid: np.ndarray | None = None) -> float:
    """sup_s s^p·|Φ₁(s) − Φ₂(s)| over the metric grid."""
    s = metric_grid() if grid is None else np.asarray(grid, dtype=float)
    return float(np.max(s**p * np.abs(phi1(s) - phi2(s))))


# ---------------------------------------------------------------------------
# Tabulations
# ---------------------------------------------------------------------------


def tabulate_phi(phi: ShapeFunction, n: int = 999) -> pd.DataFrame:
    s = np.linspace(1e-3, 1.0 - 1e-3, n)
    return pd.DataFrame({"s": s, "phi": phi(s)})


def tabulate_w(w: LogKernel, extent: float = GRID_EXTENT, n: int = 1201) -> pd.DataFrame:
    y = np.linspace(-extent, extent, n)
    return pd.DataFrame({"Y": y, "W": w(y)})
