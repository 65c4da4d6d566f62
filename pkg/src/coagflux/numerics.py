# src/coagflux/numerics.py
"""
Shared quadrature engine.

All integrals in the package are one of:
- exponentially decaying on a half line (possibly oscillatory),
- the same on the whole real line (split at a point and reflected),
- smooth on a finite interval.

Method
------
15-point Gauss–Legendre panels. The initial panel width is capped at
``phase_per_panel / max(freq, 1)`` so that every panel sees a bounded phase
of the oscillatory factor; panels are then bisected until the one-panel and
two-half-panel estimates agree to a share of the tolerance budget.

Semi-infinite ranges are truncated at

    Z_max = lower⁺ + ln(10·C / (abs_tol·|λ|)) / |λ| + margin

for integrands bounded by C·e^{λz} (λ = ``tail_exponent`` < 0), so the
discarded tail is below abs_tol / 10.

Accepted panels are kept in left-edge order and summed with ``math.fsum``,
so identical inputs give bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_legendre

from coagflux.errors import QuadratureError
from coagflux.logging_config import get_logger

logger = get_logger(__name__)

Integrand = Callable[[np.ndarray], np.ndarray]

GL_ORDER = 15
TAYLOR_CUTOFF = 1e-8
_PANEL_CHUNK = 16384
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureSpec:
    """
    Tolerances and integrand envelope for one family of integrals.

    Parameters
    ----------
    abs_tol, rel_tol : float
        Target absolute / relative accuracy (> 0).
    max_panels : int
        Hard cap on accepted + active panels.
    tail_exponent : float
        λ < 0 with |f(z)| ≤ envelope_const·e^{λz} for large z.
    oscillation_freq : float
        Largest angular frequency present in the integrand.
    envelope_const : float
        C in the envelope bound.
    phase_per_panel : float
        Phase budget per initial panel (π/2 by default).
    margin : float
        Extra length added beyond the envelope truncation point; absorbs
        polynomial prefactors.
    max_extent : float
        Longest admissible truncated range.
    """

    abs_tol: float = 1e-13
    rel_tol: float = 1e-11
    max_panels: int = 2_000_000
    tail_exponent: float = -0.5
    oscillation_freq: float = 0.0
    envelope_const: float = 1.0
    phase_per_panel: float = math.pi / 2
    margin: float = 10.0
    max_extent: float = 1500.0
    max_rounds: int = 40

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise QuadratureError("abs_tol and rel_tol must be positive")
        if not self.tail_exponent < 0:
            raise QuadratureError(f"tail_exponent must be negative, got {self.tail_exponent}")
        if self.oscillation_freq < 0:
            raise QuadratureError("oscillation_freq must be nonnegative")
        if not self.envelope_const > 0:
            raise QuadratureError("envelope_const must be positive")
        if not self.phase_per_panel > 0:
            raise QuadratureError("phase_per_panel must be positive")
        if self.max_panels < 1:
            raise QuadratureError("max_panels must be >= 1")

    @property
    def max_panel_width(self) -> float:
        return self.phase_per_panel / max(self.oscillation_freq, 1.0)

    def truncation_length(self) -> float:
        lam = abs(self.tail_exponent)
        return max(math.log(10.0 * self.envelope_const / (self.abs_tol * lam)), 0.0) / lam + self.margin

    def truncation_point(self, lower: float) -> float:
        return max(lower, 0.0) + self.truncation_length()

    def with_(self, **changes) -> "QuadratureSpec":
        return replace(self, **changes)

    def halved(self) -> "QuadratureSpec":
        return replace(self, abs_tol=self.abs_tol / 2, rel_tol=self.rel_tol / 2)


@dataclass(frozen=True)
class QuadratureRule:
    """Flattened nodes and weights of an adapted panel grid."""

    nodes: np.ndarray
    weights: np.ndarray
    err_est: float

    def integrate(self, values: np.ndarray) -> complex:
        terms = self.weights * np.asarray(values)
        if np.iscomplexobj(terms):
            return complex(math.fsum(terms.real), math.fsum(terms.imag))
        return complex(math.fsum(terms), 0.0)

    def __len__(self) -> int:
        return self.nodes.size

    @staticmethod
    def concatenate(rules: "list[QuadratureRule]") -> "QuadratureRule":
        return QuadratureRule(
            nodes=np.concatenate([r.nodes for r in rules]),
            weights=np.concatenate([r.weights for r in rules]),
            err_est=float(sum(r.err_est for r in rules)),
        )

    def reflected(self, about: float = 0.0) -> "QuadratureRule":
        """Rule for z -> 2·about − z (same weights)."""
        return QuadratureRule(2.0 * about - self.nodes[::-1], self.weights[::-1].copy(), self.err_est)


@lru_cache(maxsize=8)
def gauss_legendre(order: int = GL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1] (read-only arrays)."""
    x, w = roots_legendre(order)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


# ---------------------------------------------------------------------------
# Stable primitives
# ---------------------------------------------------------------------------


def log1pexp(x):
    """ln(1 + e^x) without overflow."""
    return np.logaddexp(0.0, x)


def _log1p_ratio(u: np.ndarray) -> np.ndarray:
    # log1p(u)/u, with value 1 at u = 0
    out = np.ones_like(u)
    nz = u != 0.0
    out[nz] = np.log1p(u[nz]) / u[nz]
    return out


def half_weighted_log1pexp(x) -> np.ndarray:
    """e^{−x/2}·ln(1 + e^x), finite for all real x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    neg = x < 0.0
    xn = x[neg]
    out[neg] = np.exp(xn / 2.0) * _log1p_ratio(np.exp(xn))
    xp = x[~neg]
    out[~neg] = np.exp(-xp / 2.0) * (xp + np.log1p(np.exp(-xp)))
    return out


def stable_bracket(L, k):
    """
    1 − e^{−ikL} evaluated as 2·sin²(kL/2) + i·sin(kL).

    For |kL| < 1e−8 the second-order Taylor form ikL·(1 − ikL/2) is returned.
    """
    theta = np.asarray(k * np.asarray(L, dtype=float), dtype=float)
    out = 2.0 * np.sin(theta / 2.0) ** 2 + 1j * np.sin(theta)
    small = np.abs(theta) < TAYLOR_CUTOFF
    if np.any(small):
        ts = theta[small] if theta.ndim else theta
        taylor = 1j * ts * (1.0 - 0.5j * ts)
        if theta.ndim:
            out[small] = taylor
        else:
            out = taylor
    return out[()] if np.ndim(out) == 0 else out


def sinc_bracket(theta) -> np.ndarray:
    """(1 − e^{−iθ}) / (iθ), equal to 1 at θ = 0."""
    theta = np.asarray(theta, dtype=float)
    half = theta / 2.0
    return np.sinc(theta / np.pi) - 1j * np.sin(half) * np.sinc(half / np.pi)


def bracket_over_ik(L, k) -> np.ndarray:
    """(1 − e^{−ikL}) / (ik), continuous through k = 0 where it equals L."""
    L = np.asarray(L, dtype=float)
    return L * sinc_bracket(k * L)


# ---------------------------------------------------------------------------
# Adaptive panels
# ---------------------------------------------------------------------------


def _panel_sums(f: Integrand, left: np.ndarray, right: np.ndarray):
    """One-panel and two-half-panel GL sums, plus a roundoff floor per panel."""
    x, w = gauss_legendre()
    n = x.size
    coarse = np.empty(left.size, dtype=complex)
    fine = np.empty(left.size, dtype=complex)
    floor = np.empty(left.size, dtype=float)
    for start in range(0, left.size, _PANEL_CHUNK):
        sl = slice(start, start + _PANEL_CHUNK)
        a, b = left[sl], right[sl]
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        quarter = 0.5 * half
        nodes = np.concatenate(
            [
                mid[:, None] + half[:, None] * x[None, :],
                (mid - quarter)[:, None] + quarter[:, None] * x[None, :],
                (mid + quarter)[:, None] + quarter[:, None] * x[None, :],
            ],
            axis=1,
        )
        vals = np.asarray(f(nodes.ravel()), dtype=complex).reshape(nodes.shape)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite integrand sample")
        coarse[sl] = half * (vals[:, :n] @ w)
        fine[sl] = quarter * (vals[:, n : 2 * n] @ w + vals[:, 2 * n :] @ w)
        floor[sl] = 64.0 * _EPS * quarter * (np.abs(vals[:, n:]) @ np.concatenate([w, w]))
    return coarse, fine, floor


def adapt_panels(f: Integrand, lo: float, hi: float, spec: QuadratureSpec):
    """
    Bisect panels of [lo, hi] until each meets its share of the tolerance.

    Returns
    -------
    left, right : ndarray
        Accepted panel edges, sorted by left edge.
    values : ndarray
        Two-half-panel estimate on each accepted panel.
    err_est : float
        Sum of |fine − coarse| over accepted panels.
    """
    if not hi > lo:
        return np.empty(0), np.empty(0), np.empty(0, dtype=complex), 0.0
    length = hi - lo
    n0 = max(1, int(math.ceil(length / spec.max_panel_width)))
    if n0 > spec.max_panels:
        raise QuadratureError(
            f"{n0} initial panels exceed max_panels={spec.max_panels}; lower the frequency or range"
        )
    edges = np.linspace(lo, hi, n0 + 1)
    act_l, act_r = edges[:-1], edges[1:]
    done_l, done_r, done_v, done_e = [], [], [], []
    accepted_sum = 0.0 + 0.0j

    for _ in range(spec.max_rounds):
        coarse, fine, floor = _panel_sums(f, act_l, act_r)
        err = np.abs(fine - coarse)
        total = abs(accepted_sum + fine.sum())
        budget = max(spec.abs_tol, spec.rel_tol * total)
        local = budget * (act_r - act_l) / length
        ok = (err <= local) | (err <= floor)
        done_l.append(act_l[ok])
        done_r.append(act_r[ok])
        done_v.append(fine[ok])
        done_e.append(err[ok])
        accepted_sum += fine[ok].sum()
        if ok.all():
            break
        bad_l, bad_r = act_l[~ok], act_r[~ok]
        mid = 0.5 * (bad_l + bad_r)
        act_l = np.concatenate([bad_l, mid])
        act_r = np.concatenate([mid, bad_r])
        n_total = sum(a.size for a in done_l) + act_l.size
        if n_total > spec.max_panels:
            raise QuadratureError(f"panel count {n_total} exceeds max_panels={spec.max_panels}")
    else:
        raise QuadratureError(f"no convergence on [{lo:.6g}, {hi:.6g}] after {spec.max_rounds} rounds")

    left = np.concatenate(done_l)
    right = np.concatenate(done_r)
    values = np.concatenate(done_v)
    errs = np.concatenate(done_e)
    order = np.argsort(left, kind="stable")
    logger.debug("adapt_panels [%.4g, %.4g]: %d panels", lo, hi, left.size)
    return left[order], right[order], values[order], float(errs.sum())


def _fsum_complex(values: np.ndarray) -> complex:
    return complex(math.fsum(values.real), math.fsum(values.imag))


def integrate_interval(f: Integrand, lo: float, hi: float, spec: QuadratureSpec) -> tuple[complex, float]:
    """∫_lo^hi f with adaptive panels; returns (value, err_est)."""
    _, _, values, err = adapt_panels(f, lo, hi, spec)
    return _fsum_complex(values), err


def _checked_upper(lower: float, spec: QuadratureSpec) -> float:
    upper = spec.truncation_point(lower)
    if upper - lower > spec.max_extent:
        raise QuadratureError(
            f"truncated range {upper - lower:.1f} exceeds max_extent={spec.max_extent}; "
            "tail decays too slowly for the requested tolerance"
        )
    return upper


def integrate_semi_infinite(f: Integrand, lower: float, spec: QuadratureSpec) -> tuple[complex, float]:
    """
    ∫_lower^∞ f(z) dz for |f(z)| ≤ C·e^{λz}.

    Returns
    -------
    value : complex
    err_est : float
        Panel error estimate plus the truncation bound abs_tol / 10.
    """
    upper = _checked_upper(lower, spec)
    value, err = integrate_interval(f, lower, upper, spec)
    return value, err + spec.abs_tol / 10.0


def integrate_real_line(f: Integrand, spec: QuadratureSpec, split: float = 0.0) -> tuple[complex, float]:
    """∫_ℝ f, as ∫_split^∞ f(z) dz + ∫_0^∞ f(split − t) dt."""
    right, err_r = integrate_semi_infinite(f, split, spec)
    left, err_l = integrate_semi_infinite(lambda t: f(split - t), 0.0, spec)
    return right + left, err_r + err_l


# ---------------------------------------------------------------------------
# Reusable rules (one adapted grid, many integrands)
# ---------------------------------------------------------------------------


def _rule_from_panels(left: np.ndarray, right: np.ndarray, err: float) -> QuadratureRule:
    x, w = gauss_legendre()
    mid = 0.5 * (left + right)
    quarter = 0.25 * (right - left)
    centres = np.concatenate([mid - quarter, mid + quarter])
    scale = np.concatenate([quarter, quarter])
    order = np.argsort(centres, kind="stable")
    centres, scale = centres[order], scale[order]
    nodes = (centres[:, None] + scale[:, None] * x[None, :]).ravel()
    weights = (scale[:, None] * w[None, :]).ravel()
    return QuadratureRule(nodes=nodes, weights=weights, err_est=err)


def interval_rule(envelope: Integrand, lo: float, hi: float, spec: QuadratureSpec) -> QuadratureRule:
    """
    Adapt panels of [lo, hi] on ``envelope`` and return the resulting rule.

    The envelope should be the non-oscillatory amplitude of the integrand
    family; oscillation is covered by the frequency-capped panel width.
    """
    left, right, _, err = adapt_panels(envelope, lo, hi, spec)
    return _rule_from_panels(left, right, err)


def semi_infinite_rule(envelope: Integrand, lower: float, spec: QuadratureSpec) -> QuadratureRule:
    upper = _checked_upper(lower, spec)
    rule = interval_rule(envelope, lower, upper, spec)
    return QuadratureRule(rule.nodes, rule.weights, rule.err_est + spec.abs_tol / 10.0)


def real_line_rule(envelope: Integrand, spec: QuadratureSpec, split: float = 0.0) -> QuadratureRule:
    right = semi_infinite_rule(envelope, split, spec)
    left = semi_infinite_rule(lambda t: envelope(split - t), 0.0, spec).reflected(0.0)
    left = QuadratureRule(left.nodes + split, left.weights, left.err_est)
    return QuadratureRule.concatenate([left, right])
