import os
from enum import Enum
from typing import Any

import numpy as np


def get_max_workers() -> int:
    raw = os.getenv("LT_THREADS", "")
    cpus = os.cpu_count() or 1
    if not raw:
        return cpus
    try:
        n = int(raw)
    except ValueError:
        return cpus
    return max(1, min(n, cpus))


def to_builtin(data: Any) -> Any:
    if isinstance(data, dict):
        return {str(k): to_builtin(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_builtin(v) for v in data]
    if isinstance(data, Enum):
        return data.value
    if isinstance(data, np.ndarray):
        return to_builtin(data.tolist())
    if isinstance(data, np.bool_):
        return bool(data)
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return float(data)
    return data


def canonicalize(data: Any) -> Any:
    data = to_builtin(data)
    if isinstance(data, dict):
        return {k: canonicalize(data[k]) for k in sorted(data)}
    if isinstance(data, list):
        return [canonicalize(v) for v in data]
    return data


def relative(num: float, den: float, floor: float = 1e-300) -> float:
    return float(num) / max(float(den), floor)
