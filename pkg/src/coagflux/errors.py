# src/coagflux/errors.py
"""
Exception hierarchy. Each class carries the CLI exit code of the stage it
normally belongs to; the CLI may override it by stage.
"""

from __future__ import annotations


class CoagFluxError(Exception):
    exit_code = 1


class ConfigError(CoagFluxError):
    """Bad configuration value or unknown key (usage error)."""

    exit_code = 1


class ParameterError(CoagFluxError):
    """Exponents or arguments outside the admissible window."""

    exit_code = 2


class ConstructionError(CoagFluxError):
    exit_code = 2


class QuadratureError(CoagFluxError):
    """Non-convergence or non-finite samples inside an integral."""

    exit_code = 2


class SolverError(CoagFluxError):
    exit_code = 3


class VerificationError(CoagFluxError):
    exit_code = 4
