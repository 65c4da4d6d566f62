# src/coagflux/export.py
"""
Output writers shared by every stage.

CSV files start with a ``# coagflux <version> config=<hash>`` comment line,
then a header row; floats are written with 17 significant digits and LF line
endings. JSON is sorted and indented with no timestamps, so identical runs
produce identical bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from coagflux import __version__
from coagflux.logging_config import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"


def header_line(config_hash: str) -> str:
    return f"# coagflux {__version__} config={config_hash}\n"


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and complex numbers to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_csv(df: pd.DataFrame, path: str | Path, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header_line(config_hash))
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"💾 Wrote {path} (rows={len(df)})")
    return path


def read_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_json(payload: dict, path: str | Path, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body.setdefault("version", __version__)
    if config_hash is not None:
        body.setdefault("config_hash", config_hash)
    text = json.dumps(to_jsonable(body), sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.info(f"💾 Wrote {path}")
    return path


def read_json(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
