"""Deterministic JSON artifacts: floats at 9 significant digits."""

from __future__ import annotations

import datetime as dt
import json
import math

import numpy as np

FLOAT_DIGITS = 9


def round_floats(obj, digits=FLOAT_DIGITS):
    """Recursively convert to plain JSON types, rounding floats."""
    if isinstance(obj, dict):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{digits}g}")
    if isinstance(obj, dt.date):
        return obj.isoformat()
    return obj


def dumps(obj):
    return json.dumps(round_floats(obj), indent=1) + "\n"


def dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
