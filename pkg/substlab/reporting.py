"""
Deterministic report emission: JSON through simplejson with every float
rendered at a fixed number of significant digits, CSV through pandas.
"""
import logging
import math
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
import simplejson as json
from pydantic import BaseModel

from substlab_config import settings

from . import __version__

logger = logging.getLogger(__name__)


def to_decimal(value: float, digits: Optional[int] = None) -> Optional[Decimal]:
    """Float rendered at `digits` significant digits; None for ±inf and nan."""
    if not math.isfinite(value):
        return None
    digits = digits or settings.FLOAT_DIGITS
    return Decimal(format(value, f".{digits}g"))


def normalize(obj: Any, digits: Optional[int] = None) -> Any:
    """Recursively converts a report payload into JSON-ready builtins."""
    if isinstance(obj, BaseModel):
        return normalize(obj.model_dump(mode="python"), digits)
    if isinstance(obj, dict):
        return {str(k): normalize(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return normalize(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return to_decimal(float(obj), digits)
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def report_header(command: str, model_sha256: str, parameters: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "substlab_version": __version__,
        "model_sha256": model_sha256,
        "command": command,
        "parameters": parameters,
    }


def dumps_report(payload: Dict[str, Any]) -> str:
    return json.dumps(normalize(payload), use_decimal=True, sort_keys=True, indent=2) + "\n"


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_report(payload))
    logger.debug("wrote %s", path)
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=f"%.{settings.FLOAT_DIGITS}g", lineterminator="\n")
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path
