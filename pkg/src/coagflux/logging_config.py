# src/coagflux/logging_config.py
"""
Logger factory. Messages are plain one-liners prefixed with the status
emoji used across the pipeline (🔧 ℹ️ ⚠️ ❌ 💾 ✅).
"""

from __future__ import annotations

import logging
import os
import sys

_ROOT_NAME = "coagflux"
_configured = False


def _configure_root(level: str | None = None) -> logging.Logger:
    global _configured
    root = logging.getLogger(_ROOT_NAME)
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    level = level or os.getenv("COAGFLUX_LOG_LEVEL", "INFO")
    root.setLevel(level.upper())
    return root


def set_level(level: str) -> None:
    _configure_root(level)


def get_logger(name: str) -> logging.Logger:
    if not _configured:
        _configure_root()
    if not name.startswith(_ROOT_NAME):
        name = f"{_ROOT_NAME}.{name}"
    return logging.getLogger(name)
