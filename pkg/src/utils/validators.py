from __future__ import annotations

from typing import Optional

import numpy as np


def is_positive_int(value) -> bool:
    try:
        return int(value) > 0
    except Exception:
        return False


def is_non_negative_number(value) -> bool:
    try:
        return float(value) >= 0
    except Exception:
        return False


def is_positive_number(value) -> bool:
    try:
        v = float(value)
    except Exception:
        return False
    return bool(np.isfinite(v) and v > 0)


def as_vector(x, size: Optional[int] = None, *, name: str = "vector") -> np.ndarray:
    """Convierte a vector float 1D y valida la dimensión.

    Lanza ValueError si la forma no corresponde o hay valores no finitos.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name}: se esperaba un vector 1D, forma {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name}: dimensión {arr.shape[0]} distinta de {size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contiene valores no finitos")
    return arr


def as_matrix(a, rows: Optional[int] = None, cols: Optional[int] = None, *, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name}: se esperaba una matriz 2D, forma {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name}: {arr.shape[0]} filas, se esperaban {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name}: {arr.shape[1]} columnas, se esperaban {cols}")
    return arr


def relative_error(actual, expected) -> float:
    """‖actual − expected‖ / max(‖expected‖, tiny)."""
    a = np.asarray(actual, dtype=float)
    e = np.asarray(expected, dtype=float)
    denom = max(float(np.linalg.norm(e)), np.finfo(float).tiny)
    return float(np.linalg.norm(a - e) / denom)
