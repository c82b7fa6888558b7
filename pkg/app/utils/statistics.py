# app/utils/statistics.py
"""
Estadísticos básicos compartidos por los módulos de calidad y características.
"""
from typing import Sequence

import numpy as np

from app.core.exceptions import FlatSignalError


def pearson_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Coeficiente de correlación de Pearson entre dos series de igual longitud.

    Raises:
        FlatSignalError: si alguna de las series tiene varianza nula.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"Length mismatch: {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0:
        raise FlatSignalError("Pearson correlation undefined for zero-variance input")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Similitud coseno; FlatSignalError si alguna norma es cero"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        raise FlatSignalError("Cosine similarity undefined for zero-norm input")
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def coefficient_of_variation(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    if mean == 0:
        return float("inf")
    return float(values.std() / abs(mean))


def safe_ratio(numerator: float, denominator: float, eps: float = 1e-6) -> float:
    """numerator / max(denominator, eps)"""
    return float(numerator / max(denominator, eps))


def resample_to_length(values: Sequence[float], length: int) -> np.ndarray:
    """Interpolación lineal de una serie a una longitud fija"""
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        return np.full(length, values[0])
    src = np.linspace(0.0, 1.0, values.size)
    dst = np.linspace(0.0, 1.0, length)
    return np.interp(dst, src, values)
