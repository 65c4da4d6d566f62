# src/coagflux/spectral.py
"""
Periodic-field algebra in Fourier coordinates.

Fields are real T-periodic functions f(X) = Σ_{|n|≤N} a_n e^{ink*X},
T = 2π/k*, stored as the coefficient vector (a_{−N}, …, a_N).

The flux operator B acts on two fields through the interaction table

    Ĵ(n, ℓ) = ∫_ℝ e^{inkξ} W(ξ) e^{−ξ/2} ln(1 + e^ξ) Q(ℓk·ln(1 + e^ξ)) dξ,
    Q(θ) = (1 − e^{−iθ})/(iθ),                                   k = k*,

as c_ℓ = Σ_{m+n=ℓ} Ĵ(n, ℓ)·a_m·b_n. The table depends on W linearly, so it
is built term by term and combined with the kernel's coefficients.

Sobolev-type norm used throughout (|0|^{2s} taken as 0):

    ‖f‖_s² = Σ_n (1 + |n|^{2s}) |a_n|²
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np

from coagflux.errors import SolverError
from coagflux.kernelspace import KernelTerm, LogKernel, term_envelope
from coagflux.logging_config import get_logger
from coagflux.numerics import (
    QuadratureRule,
    QuadratureSpec,
    half_weighted_log1pexp,
    interval_rule,
    log1pexp,
    real_line_rule,
    sinc_bracket,
)
from coagflux.symbol import eval_psi

logger = get_logger(__name__)

Projection = Literal["P0", "P1", "P2"]

N_DEFAULT = 16
NODE_CHUNK = 32768
A_MARGIN = 1e-3
K_MATCH_RTOL = 1e-14


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Real periodic field with Hermitian coefficients a_{−n} = conj(a_n)."""

    coeffs: np.ndarray
    k_star: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coefficient vector must have odd length 2N+1")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        if not self.k_star > 0:
            raise ValueError("k_star must be positive")

    # -- constructors -----------------------------------------------------

    @classmethod
    def zeros(cls, k_star: float, N: int) -> "PeriodicField":
        return cls(np.zeros(2 * N + 1, dtype=complex), k_star)

    @classmethod
    def constant(cls, value: float, k_star: float, N: int) -> "PeriodicField":
        c = np.zeros(2 * N + 1, dtype=complex)
        c[N] = value
        return cls(c, k_star)

    @classmethod
    def cosine(cls, amplitude: float, k_star: float, N: int, mode: int = 1) -> "PeriodicField":
        """amplitude·cos(mode·k*X)."""
        if not 1 <= mode <= N:
            raise ValueError(f"mode {mode} outside 1..{N}")
        c = np.zeros(2 * N + 1, dtype=complex)
        c[N + mode] = c[N - mode] = amplitude / 2.0
        return cls(c, k_star)

    @classmethod
    def from_positive_modes(cls, a: np.ndarray, k_star: float) -> "PeriodicField":
        """Field from (a_0, a_1, …, a_N); negative modes by conjugation."""
        a = np.asarray(a, dtype=complex)
        a0 = complex(a[0].real, 0.0)
        c = np.concatenate([np.conj(a[:0:-1]), [a0], a[1:]])
        return cls(c, k_star)

    # -- access -----------------------------------------------------------

    @property
    def N(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.k_star

    def coeff(self, n: int) -> complex:
        return complex(self.coeffs[self.N + n]) if abs(n) <= self.N else 0.0j

    def modes(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def hermitian_residual(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(c - np.conj(c[::-1])))) if c.size else 0.0

    def evaluate(self, X) -> np.ndarray:
        """Σ a_n e^{ink*X} (complex; imaginary part is roundoff for real fields)."""
        X = np.asarray(X, dtype=float)
        z = np.exp(1j * self.k_star * X)
        return np.polynomial.polynomial.polyval(z, self.coeffs) * z ** (-self.N)

    def __call__(self, X) -> np.ndarray:
        return self.evaluate(X).real

    # -- algebra ----------------------------------------------------------

    def resized(self, N: int) -> "PeriodicField":
        """Zero-pad or truncate to |n| ≤ N."""
        if N == self.N:
            return self
        out = np.zeros(2 * N + 1, dtype=complex)
        m = min(N, self.N)
        out[N - m:N + m + 1] = self.coeffs[self.N - m:self.N + m + 1]
        return PeriodicField(out, self.k_star)

    def trimmed(self, rtol: float = 1e-15) -> "PeriodicField":
        """Drop the highest modes whose coefficients are all below rtol·max|a_n|."""
        mags = np.abs(self.coeffs)
        top = float(np.max(mags)) if mags.size else 0.0
        if top == 0.0:
            return self.resized(0)
        n_keep = 0
        for n in range(self.N, 0, -1):
            if max(mags[self.N + n], mags[self.N - n]) > rtol * top:
                n_keep = n
                break
        return self.resized(n_keep)

    def sup_bound(self) -> float:
        """Σ|a_n| ≥ max_X |f(X)|."""
        return float(np.sum(np.abs(self.coeffs)))

    def _aligned(self, other: "PeriodicField") -> tuple[np.ndarray, np.ndarray, int]:
        check_k_star(self.k_star, other.k_star)
        N = max(self.N, other.N)
        return self.resized(N).coeffs, other.resized(N).coeffs, N

    def __add__(self, other: "PeriodicField") -> "PeriodicField":
        a, b, _ = self._aligned(other)
        return PeriodicField(a + b, self.k_star)

    def __sub__(self, other: "PeriodicField") -> "PeriodicField":
        a, b, _ = self._aligned(other)
        return PeriodicField(a - b, self.k_star)

    def __mul__(self, c: float) -> "PeriodicField":
        return PeriodicField(self.coeffs * c, self.k_star)

    __rmul__ = __mul__

    def __neg__(self) -> "PeriodicField":
        return PeriodicField(-self.coeffs, self.k_star)

    def shifted(self, c: float) -> "PeriodicField":
        """X ↦ f(X + c)."""
        return PeriodicField(self.coeffs * np.exp(1j * self.k_star * self.modes() * c), self.k_star)

    def oscillation_amplitude(self, points: int = 2048) -> float:
        """(max − min)/2 over one period."""
        X = np.linspace(0.0, self.period, points, endpoint=False)
        v = self(X)
        return float(0.5 * (np.max(v) - np.min(v)))

    def to_dict(self) -> dict:
        return {"k_star": self.k_star, "N": self.N, "re": self.coeffs.real.tolist(), "im": self.coeffs.imag.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodicField":
        return cls(np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float), float(d["k_star"]))


def check_k_star(k1: float, k2: float) -> None:
    if abs(k1 - k2) > K_MATCH_RTOL * max(abs(k1), abs(k2)):
        raise ValueError(f"fields live on different periods (k* = {k1!r} vs {k2!r})")


def random_band_limited(rng: np.random.Generator, k_star: float, N: int, bandwidth: int | None = None,
                        scale: float = 1.0) -> PeriodicField:
    """Random real field with modes |n| ≤ bandwidth, coefficients decaying like 1/(1+n²)."""
    bw = N if bandwidth is None else min(bandwidth, N)
    a = np.zeros(N + 1, dtype=complex)
    n = np.arange(bw + 1)
    a[: bw + 1] = scale * (rng.standard_normal(bw + 1) + 1j * rng.standard_normal(bw + 1)) / (1.0 + n**2)
    return PeriodicField.from_positive_modes(a, k_star)


# ---------------------------------------------------------------------------
# Norms and projections
# ---------------------------------------------------------------------------


def _weights(modes: np.ndarray, s: float) -> np.ndarray:
    n = np.abs(modes).astype(float)
    return 1.0 + np.where(n > 0, n ** (2.0 * s), 0.0)


def norm(f: PeriodicField, s: float = 1.0) -> float:
    """(Σ (1 + |n|^{2s})|a_n|²)^{1/2}, with the n = 0 weight equal to 1."""
    return float(np.sqrt(np.sum(_weights(f.modes(), s) * np.abs(f.coeffs) ** 2)))


def h1_integral_norm(f: PeriodicField) -> float:
    """((1/T)∫_0^T |f|² + |f'|² dX)^{1/2} = (Σ (1 + (nk*)²)|a_n|²)^{1/2}."""
    nk = f.modes() * f.k_star
    return float(np.sqrt(np.sum((1.0 + nk**2) * np.abs(f.coeffs) ** 2)))


def norm_equivalence(k_star: float, N: int | None = None) -> tuple[float, float]:
    """
    Constants (c, C) with c·norm(f, 1) ≤ h1_integral_norm(f) ≤ C·norm(f, 1).

    With N given the bounds are sharp for fields truncated at |n| ≤ N;
    otherwise they hold for every N.
    """
    k2 = k_star * k_star
    if N is None:
        ratios = [1.0, (1.0 + k2) / 2.0, k2]
    else:
        n = np.arange(1, N + 1, dtype=float)
        ratios = [1.0, *((1.0 + n * n * k2) / (1.0 + n * n))]
    return math.sqrt(min(ratios)), math.sqrt(max(ratios))


def project(f: PeriodicField, which: Projection) -> PeriodicField:
    """P0 keeps n = 0, P1 keeps n = ±1, P2 keeps |n| ≥ 2."""
    n = np.abs(f.modes())
    if which == "P0":
        keep = n == 0
    elif which == "P1":
        keep = n == 1
    elif which == "P2":
        keep = n >= 2
    else:
        raise ValueError(f"Unknown projection: {which}")
    return PeriodicField(np.where(keep, f.coeffs, 0.0), f.k_star)


# ---------------------------------------------------------------------------
# Interaction table
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymbolTable:
    """
    Ĵ(n, ℓ) for |n| ≤ N, |ℓ| ≤ 2N, stored at jhat[n + N, ℓ + 2N].

    ``err_est`` bounds the quadrature error of every entry.
    """

    jhat: np.ndarray
    k_star: float
    N: int
    kernel_id: str = ""
    err_est: float = 0.0

    def J(self, n: int, ell: int) -> complex:
        return complex(self.jhat[n + self.N, ell + 2 * self.N])

    def conjugate_residual(self) -> float:
        j = self.jhat
        return float(np.max(np.abs(j[::-1, ::-1] - np.conj(j))))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.jhat)))

    def psi_diagonal(self) -> np.ndarray:
        """Ĵ(n, n) + Ĵ(0, n) for n = −N..N, i.e. Ψ(n·k*; W)."""
        n = np.arange(-self.N, self.N + 1)
        return self.jhat[n + self.N, n + 2 * self.N] + self.jhat[self.N, n + 2 * self.N]

    @staticmethod
    def linear_combination(parts: list[tuple[float, "SymbolTable"]], kernel_id: str = "") -> "SymbolTable":
        first = parts[0][1]
        jhat = np.zeros_like(first.jhat)
        err = 0.0
        for coef, table in parts:
            if table.N != first.N:
                raise ValueError("truncation mismatch between tables")
            check_k_star(table.k_star, first.k_star)
            if coef != 0.0:
                jhat = jhat + coef * table.jhat
                err += abs(coef) * table.err_est
        return SymbolTable(jhat=jhat, k_star=first.k_star, N=first.N, kernel_id=kernel_id, err_est=err)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            np.savez(f, jhat=self.jhat, k_star=np.float64(self.k_star), N=np.int64(self.N),
                     kernel_id=np.array(self.kernel_id), err_est=np.float64(self.err_est))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SymbolTable":
        with np.load(path, allow_pickle=False) as z:
            err = float(z["err_est"]) if "err_est" in z.files else 0.0
            return cls(jhat=z["jhat"].copy(), k_star=float(z["k_star"]), N=int(z["N"]), kernel_id=str(z["kernel_id"]),
                       err_est=err)


def table_cache_key(w: LogKernel, k_star: float, N: int, spec: QuadratureSpec) -> str:
    payload = json.dumps(
        {
            "kernel": w.fingerprint(),
            "k_star": repr(float(k_star)),
            "N": int(N),
            "abs_tol": spec.abs_tol,
            "rel_tol": spec.rel_tol,
            "phase_per_panel": spec.phase_per_panel,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _term_rule(term: KernelTerm, q: float, k_star: float, N: int, spec: QuadratureSpec) -> QuadratureRule:
    """Shared nodes for every (n, ℓ) entry of one term; panels capped at the top frequency 3N·k*."""
    s = spec.with_(
        tail_exponent=q - 0.5,
        envelope_const=2.0 * term_envelope(term, q),
        oscillation_freq=3.0 * N * k_star,
    )

    def envelope(xi: np.ndarray) -> np.ndarray:
        return np.abs(term(xi)) * half_weighted_log1pexp(xi)

    if term.support is not None:
        lo, hi = term.support
        right = interval_rule(envelope, lo, hi, s)
        left = interval_rule(lambda t: envelope(-t), lo, hi, s).reflected(0.0)
        return QuadratureRule.concatenate([left, right])
    return real_line_rule(envelope, s)


def _chunk_table(term: KernelTerm, k_star: float, N: int, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    base = weights * term(nodes) * half_weighted_log1pexp(nodes)
    n = np.arange(0, N + 1)
    e_pos = np.exp(1j * k_star * np.outer(n, nodes))
    E = np.concatenate([np.conj(e_pos[:0:-1]), e_pos]) * base[None, :]
    ell = np.arange(0, 2 * N + 1)
    f_pos = sinc_bracket(k_star * np.outer(ell, log1pexp(nodes)))
    F = np.concatenate([np.conj(f_pos[:0:-1]), f_pos])
    return E @ F.T


@lru_cache(maxsize=64)
def _term_table(
    term: KernelTerm, q: float, k_star: float, N: int, spec: QuadratureSpec, workers: int
) -> tuple[np.ndarray, float]:
    """One term's table and a bound on each entry's error; |e^{inkξ}·Q| ≤ 1 on every node."""
    rule = _term_rule(term, q, k_star, N, spec)
    starts = range(0, len(rule), NODE_CHUNK)

    def one(i: int) -> np.ndarray:
        sl = slice(i, i + NODE_CHUNK)
        return _chunk_table(term, k_star, N, rule.nodes[sl], rule.weights[sl])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(one, starts))
    else:
        partials = [one(i) for i in starts]
    jhat = np.zeros((2 * N + 1, 4 * N + 1), dtype=complex)
    for part in partials:
        jhat += part
    # rows −n, −ℓ are conjugates node by node; remove the summation-order residue
    jhat = 0.5 * (jhat + np.conj(jhat[::-1, ::-1]))
    logger.debug("table term %s: %d nodes, N=%d", term.kind, len(rule), N)
    jhat.flags.writeable = False
    mass = float(np.sum(np.abs(rule.weights * term(rule.nodes)) * half_weighted_log1pexp(rule.nodes)))
    return jhat, rule.err_est + spec.rel_tol * mass + spec.abs_tol


def build_symbol_table(
    w: LogKernel,
    k_star: float,
    N: int = N_DEFAULT,
    spec: QuadratureSpec | None = None,
    workers: int = 1,
    cache_dir: str | Path | None = None,
) -> SymbolTable:
    """
    Ĵ(n, ℓ) for |n| ≤ N, |ℓ| ≤ 2N.

    Each kernel term is integrated once on its own node set (its support for
    bumps, the whole line otherwise) and the results are combined with the
    kernel's coefficients. With ``cache_dir`` the table is stored as
    ``<sha256>.npz`` and reused on later runs.
    """
    spec = spec or QuadratureSpec()
    if not w.symmetric:
        raise ValueError("interaction table requires a symmetric kernel")
    if w.q >= 0.5:
        raise ValueError(f"envelope exponent q = {w.q} must be < 1/2")
    key = table_cache_key(w, k_star, N, spec)
    path = Path(cache_dir) / f"{key}.npz" if cache_dir is not None else None
    if path is not None and path.exists():
        logger.info(f"ℹ️ symbol table cache hit {path.name[:12]}")
        return SymbolTable.load(path)

    jhat = np.zeros((2 * N + 1, 4 * N + 1), dtype=complex)
    err = 0.0
    for coef, term in w.terms:
        if coef != 0.0:
            part, part_err = _term_table(term, w.q, float(k_star), int(N), spec, int(workers))
            jhat = jhat + coef * part
            err += abs(coef) * part_err
    table = SymbolTable(jhat=jhat, k_star=float(k_star), N=int(N), kernel_id=w.fingerprint(), err_est=err)
    if path is not None:
        table.save(path)
        logger.info(f"💾 Wrote {path}")
    return table


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def bilinear_fourier(u1: PeriodicField, u2: PeriodicField, table: SymbolTable) -> PeriodicField:
    """B(u1, u2; W) with c_ℓ = Σ_{m+n=ℓ} Ĵ(n, ℓ)·a_m·b_n, output |ℓ| ≤ 2N."""
    N = table.N
    if u1.N > N or u2.N > N:
        raise ValueError(f"truncation mismatch: fields have N = {u1.N}, {u2.N} but table N = {N}")
    check_k_star(u1.k_star, table.k_star)
    check_k_star(u2.k_star, table.k_star)
    a = u1.resized(N).coeffs
    b = u2.resized(N).coeffs
    # A[ℓ, n] = a_{ℓ−n}, zero where |ℓ − n| > N
    ell = np.arange(-2 * N, 2 * N + 1)[:, None]
    n = np.arange(-N, N + 1)[None, :]
    m = ell - n
    inside = np.abs(m) <= N
    A = np.where(inside, a[np.clip(m + N, 0, 2 * N)], 0.0)
    c = np.einsum("nl,ln,n->l", table.jhat, A, b)
    return PeriodicField(c, table.k_star)


def _psi_modes(w: LogKernel | SymbolTable, k_star: float, N: int, spec: QuadratureSpec | None) -> np.ndarray:
    """Ψ(n·k*; W) for n = −N..N, from a table or by direct quadrature."""
    if isinstance(w, SymbolTable):
        if N > w.N:
            raise ValueError(f"truncation mismatch: N = {N} exceeds table N = {w.N}")
        check_k_star(k_star, w.k_star)
        diag = w.psi_diagonal()
        return diag[w.N - N:w.N + N + 1]
    pos = np.array([eval_psi(n * k_star, w, spec) for n in range(0, N + 1)])
    return np.concatenate([np.conj(pos[:0:-1]), [complex(pos[0].real, 0.0)], pos[1:]])


def linearized_L(f: PeriodicField, w: LogKernel | SymbolTable, spec: QuadratureSpec | None = None) -> PeriodicField:
    """(𝓛f)_n = Ψ(n·k*; W)·a_n."""
    psi = _psi_modes(w, f.k_star, f.N, spec)
    return PeriodicField(psi * f.coeffs, f.k_star)


@dataclass(frozen=True, eq=False)
class AwOperator:
    """
    A_W = 𝓛(·; W) restricted to modes 2 ≤ |n| ≤ N.

    ``surrogate`` bounds ‖A_W⁻¹f‖_{H¹} / ‖f‖_{H^{1/2−q}} over the truncation.
    """

    psi: np.ndarray
    k_star: float
    N: int
    q: float
    surrogate: float = field(init=False)

    def __post_init__(self):
        n = np.abs(np.arange(-self.N, self.N + 1)).astype(float)
        active = n >= 2
        s_prime = 0.5 - self.q
        ratio = np.sqrt(1.0 + n[active] ** 2) / (np.sqrt(1.0 + n[active] ** (2 * s_prime)) * np.abs(self.psi[active]))
        object.__setattr__(self, "surrogate", float(np.max(ratio)) if ratio.size else 0.0)

    @classmethod
    def build(cls, w: LogKernel | SymbolTable, k_star: float, N: int, q: float, scale: float | None = None,
              margin: float = A_MARGIN, spec: QuadratureSpec | None = None) -> "AwOperator":
        """
        Raises
        ------
        SolverError
            Some |Ψ(n·k*)|, 2 ≤ |n| ≤ N, is below margin·scale. ``scale``
            defaults to the median of those magnitudes.
        """
        psi = _psi_modes(w, k_star, N, spec)
        n = np.arange(-N, N + 1)
        active = np.abs(n) >= 2
        mags = np.abs(psi[active])
        ref = float(np.median(mags)) if scale is None else float(scale)
        if mags.size and np.min(mags) < margin * ref:
            bad = int(np.abs(n[active])[np.argmin(mags)])
            raise SolverError(
                f"A_W not invertible: |Psi({bad}k*)| = {np.min(mags):.3e} below {margin:g}·scale; the kernel is invalid"
            )
        return cls(psi=psi, k_star=float(k_star), N=int(N), q=float(q))

    def _check_z2(self, f: PeriodicField) -> PeriodicField:
        if f.N > self.N:
            raise ValueError(f"truncation mismatch: field N = {f.N} exceeds operator N = {self.N}")
        check_k_star(f.k_star, self.k_star)
        g = f.resized(self.N)
        low = np.abs(g.coeffs[self.N - 1:self.N + 2])
        if np.any(low != 0.0):
            raise ValueError("A_W acts on fields with a_0 = a_{±1} = 0")
        return g

    def apply(self, f: PeriodicField) -> PeriodicField:
        g = self._check_z2(f)
        return PeriodicField(self.psi * g.coeffs, self.k_star)

    def apply_inverse(self, f: PeriodicField) -> PeriodicField:
        g = self._check_z2(f)
        n = np.abs(np.arange(-self.N, self.N + 1))
        out = np.where(n >= 2, g.coeffs / np.where(n >= 2, self.psi, 1.0), 0.0)
        return PeriodicField(out, self.k_star)


def apply_Aw_inverse(f: PeriodicField, w: LogKernel | SymbolTable, q: float | None = None,
                     scale: float | None = None, spec: QuadratureSpec | None = None) -> tuple[PeriodicField, float]:
    """
    A_W⁻¹f for f in Z2, dividing mode n by Ψ(n·k*; W).

    Returns the result and the operator-norm surrogate.
    """
    if q is None:
        if not isinstance(w, LogKernel):
            raise ValueError("q is required when A_W comes from a table")
        q = w.q
    op = AwOperator.build(w, f.k_star, f.N, q, scale=scale, spec=spec)
    return op.apply_inverse(f), op.surrogate
