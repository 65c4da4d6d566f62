# src/coagflux/config.py
"""
Run configuration.

Defaults live in ``RunConfig``; the packaged ``config.yaml`` next to this file
overrides them, a user file passed with ``--config`` overrides that, and
command-line flags win over everything:

    gamma: 0.0
    p: 0.0
    z_a: 2.0
    z_b: 1.0
    epsilon: 0.02
    s: 0.01
    N: 16
    ...

The file is flat key/value YAML. Unknown keys are an error so that a typo
never silently falls back to a default.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from coagflux.errors import ConfigError
from coagflux.kernelspace import HomogeneityParams, validate_params
from coagflux.logging_config import get_logger
from coagflux.numerics import QuadratureSpec

logger = get_logger(__name__)

HERE = Path(__file__).resolve().parent
CONFIG_PATH = HERE / "config.yaml"

# Fields that do not change any number in the outputs.
_NON_NUMERICAL = ("out_dir", "cache_dir", "workers", "log_level")


@dataclass(frozen=True)
class RunConfig:
    # kernel exponents
    gamma: float = 0.0
    p: float = 0.0
    # bifurcation kernel
    z_a: float = 2.0
    z_b: float = 1.0
    epsilon: float = 0.02
    k_scan_lo: float = 15.0
    k_scan_hi: float = 25.0
    k_scan_points: int = 401
    K_max: float = 500.0
    certify_points: int = 256
    k_floor: float = 1e-4
    asymptotic_rtol: float | None = None
    newton_step: float = 1e-6
    newton_max_iter: int = 50
    # perturbation pair
    z_search_lo: float = 0.5
    z_search_hi: float = 4.0
    z_search_points: int = 64
    cond_floor: float = 0.05
    # fixed point
    s: float = 0.01
    s0: float = 0.02
    search_s0: bool = False
    J0: float = 1.0
    N: int = 16
    M: float = 10.0
    fp_tol: float = 1e-12
    max_iter: int = 50
    # quadrature
    quad_abs_tol: float = 1e-13
    quad_rel_tol: float = 1e-11
    quad_phase_per_panel: float = math.pi / 2
    oracle_phase_per_panel: float = 8.0
    # verification
    verify_tol: float = 1e-4
    verify_X_points: int = 32
    seed: int = 12345
    # plot data
    figdata_k_lo: float = 19.31
    figdata_k_hi: float = 19.53
    figdata_points: int = 512
    # plumbing
    out_dir: str = "out"
    cache_dir: str | None = None
    workers: int = 1
    log_level: str = "INFO"

    def validate(self) -> "RunConfig":
        """
        Check ranges that are configuration mistakes rather than math failures.

        The exponent window is checked later by ``params()`` and reported as a
        construction failure.
        """
        tols = ("quad_abs_tol", "quad_rel_tol", "fp_tol", "verify_tol", "epsilon", "k_floor",
                "newton_step", "cond_floor", "quad_phase_per_panel", "oracle_phase_per_panel", "J0", "M")
        for name in tols:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.N < 8:
            raise ConfigError(f"N must be >= 8, got {self.N}")
        if not (0 < self.z_b < self.z_a):
            raise ConfigError(f"need 0 < z_b < z_a, got z_a={self.z_a}, z_b={self.z_b}")
        if not (0 < self.k_scan_lo < self.k_scan_hi):
            raise ConfigError("need 0 < k_scan_lo < k_scan_hi")
        if not (0 < self.z_search_lo < self.z_search_hi):
            raise ConfigError("need 0 < z_search_lo < z_search_hi")
        if not (0 < self.figdata_k_lo < self.figdata_k_hi):
            raise ConfigError("need 0 < figdata_k_lo < figdata_k_hi")
        for name in ("k_scan_points", "certify_points", "z_search_points", "max_iter",
                     "newton_max_iter", "verify_X_points", "figdata_points", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.asymptotic_rtol is not None and not self.asymptotic_rtol > 0:
            raise ConfigError("asymptotic_rtol must be > 0 when set")
        if abs(self.s) > self.s0:
            logger.warning(f"⚠️ |s| = {abs(self.s):g} exceeds s0 = {self.s0:g}; contraction is not expected")
        return self

    def params(self) -> HomogeneityParams:
        return validate_params(self.gamma, self.p)

    def quadrature_spec(self) -> QuadratureSpec:
        return QuadratureSpec(
            abs_tol=self.quad_abs_tol, rel_tol=self.quad_rel_tol, phase_per_panel=self.quad_phase_per_panel
        )

    @property
    def k_scan(self) -> tuple[float, float]:
        return (self.k_scan_lo, self.k_scan_hi)

    @property
    def z_search(self) -> tuple[float, float]:
        return (self.z_search_lo, self.z_search_hi)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def numerical_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if k not in _NON_NUMERICAL}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of all numerical fields."""
        payload = json.dumps(self.numerical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes).validate()


def field_names() -> list[str]:
    return [f.name for f in fields(RunConfig)]


def _coerce(name: str, value: Any) -> Any:
    """Cast a YAML/CLI value to the declared field type."""
    if value is None:
        return None
    default = RunConfig.__dataclass_fields__[name].default
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float) or name == "asymptotic_rtol":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {name}: {value!r} ({e})") from e


def _read_yaml(path: Path) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path} must contain a flat key/value mapping")
    unknown = sorted(set(raw) - set(field_names()))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return dict(raw)


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    packaged: bool = True,
) -> RunConfig:
    """
    Build a RunConfig from the packaged defaults, an optional file and overrides.

    Parameters
    ----------
    path : path-like, optional
        User config file (``--config``). Must exist when given.
    overrides : mapping, optional
        Highest-precedence values (command-line flags); ``None`` entries are
        ignored.
    packaged : bool
        Read ``config.yaml`` shipped with the package.
    """
    values: dict[str, Any] = {}
    if packaged:
        if CONFIG_PATH.exists():
            values.update(_read_yaml(CONFIG_PATH))
        else:
            logger.info(f"ℹ️ No config.yaml at {CONFIG_PATH}; using built-in defaults.")
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(_read_yaml(p))
    for key, value in (overrides or {}).items():
        if key not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"unknown config key: {key}")
        if value is not None:
            values[key] = value
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    return RunConfig(**coerced).validate()
