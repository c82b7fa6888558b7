#!/usr/bin/env python3
"""
Normalización de señales de pulso entre dispositivos heterogéneos.

Ingesta de filas (timestamp, canales...), remuestreo a una rejilla uniforme,
filtrado pasabanda Butterworth de fase cero, eliminación de la componente DC,
ventaneo y estandarización con suavizado Savitzky-Golay.

Las operaciones que transforman muestras aceptan un ``np.ndarray``, un
``Segment`` o un ``PpgTrace`` y devuelven el mismo tipo.
"""
import logging
import math
from dataclasses import replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from scipy.signal import butter, savgol_filter, sosfiltfilt

from app.core.exceptions import (
    BandOutOfRangeError,
    ChannelLengthMismatchError,
    DegenerateSpanError,
    EmptyInputError,
    FlatSignalError,
    InvalidParamsError,
    NonMonotonicTimestampsError,
    SegmentTooShortError,
    TraceTooShortError,
)
from app.models.signal import PpgTrace, Segment, Stage, TraceMeta

logger = logging.getLogger(__name__)

# Banda cardíaca usada por calidad y características (Hz)
CARDIAC_BAND: Tuple[float, float] = (0.5, 2.0)

Signal = TypeVar("Signal", np.ndarray, Segment, PpgTrace)
Row = Tuple[float, Sequence[float]]

_GRID_EPS = 1e-9


# ==================== UTILIDADES INTERNAS ====================

def samples_of(signal: Union[np.ndarray, Segment, PpgTrace]) -> np.ndarray:
    if isinstance(signal, Segment):
        return signal.samples
    if isinstance(signal, PpgTrace):
        return signal.channels
    return np.asarray(signal, dtype=float)


def rate_of(signal: Union[np.ndarray, Segment, PpgTrace], rate: Optional[float]) -> float:
    if isinstance(signal, Segment):
        return signal.rate
    if isinstance(signal, PpgTrace):
        return signal.nominal_rate
    if rate is None:
        raise InvalidParamsError("A sampling rate is required for raw arrays")
    return float(rate)


def map_samples(signal: Signal, fn: Callable[[np.ndarray], np.ndarray], stage: Optional[Stage] = None) -> Signal:
    """Aplica ``fn`` a las muestras conservando el tipo del contenedor"""
    if isinstance(signal, Segment):
        changes = {"samples": fn(signal.samples)}
        if stage is not None:
            changes["stage"] = stage
        return replace(signal, **changes)
    if isinstance(signal, PpgTrace):
        return replace(signal, channels=fn(signal.channels))
    return fn(np.asarray(signal, dtype=float))


def odd_window(length: float) -> int:
    """Redondea una longitud en muestras al entero impar >= 1 más cercano por arriba"""
    n = max(1, int(round(length)))
    return n if n % 2 == 1 else n + 1


def centered_rolling_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Media móvil centrada con bordes truncados, a lo largo del último eje"""
    if x.ndim == 1:
        return pd.Series(x).rolling(window, center=True, min_periods=1).mean().to_numpy()
    frame = pd.DataFrame(x.T)
    return frame.rolling(window, center=True, min_periods=1).mean().to_numpy().T


# ==================== INGESTA ====================

def ingest_trace(raw_rows: Iterable[Row], meta: TraceMeta) -> PpgTrace:
    """
    Construye un PpgTrace a partir de filas (t_ms, [canales...]).

    Los duplicados exactos (mismo timestamp y mismos valores) se descartan;
    cualquier otro retroceso o repetición de timestamp se rechaza.
    """
    rows = list(raw_rows)
    if len(rows) < 2:
        raise EmptyInputError(f"Trace {meta.subject_id}/{meta.device_id} needs >= 2 rows, got {len(rows)}")

    widths = {len(values) for _, values in rows}
    if len(widths) != 1:
        raise ChannelLengthMismatchError(f"Rows carry different channel counts: {sorted(widths)}")
    if widths.pop() == 0:
        raise EmptyInputError(f"Trace {meta.subject_id}/{meta.device_id} has no channels")

    timestamps = np.array([float(t) for t, _ in rows])
    values = np.array([[float(v) for v in vals] for _, vals in rows])

    # Duplicados exactos consecutivos
    repeated = (np.diff(timestamps) == 0) & np.all(values[1:] == values[:-1], axis=1)
    if repeated.any():
        keep = np.concatenate([[True], ~repeated])
        logger.debug(f"Dropping {int(repeated.sum())} duplicate rows from {meta.subject_id}/{meta.device_id}")
        timestamps, values = timestamps[keep], values[keep]

    steps = np.diff(timestamps)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise NonMonotonicTimestampsError(
            f"Timestamp {timestamps[bad]} at row {bad} does not increase past {timestamps[bad - 1]}"
        )
    if timestamps.size < 2:
        raise EmptyInputError(f"Trace {meta.subject_id}/{meta.device_id} has < 2 distinct rows")

    channels = values.T.copy()
    if meta.invert:
        channels = -channels

    rate = meta.nominal_rate or 1000.0 / float(np.median(steps))
    return PpgTrace(
        subject_id=meta.subject_id,
        device_id=meta.device_id,
        device_kind=meta.device_kind,
        channels=channels,
        timestamps=timestamps,
        nominal_rate=float(rate),
        polarity_inverted=meta.invert,
        tags=dict(meta.tags),
    )


# ==================== REMUESTREO ====================

def resample_uniform(trace: PpgTrace, target_rate: float, anchor_ms: Optional[float] = None) -> PpgTrace:
    """
    Interpolación lineal sobre una rejilla uniforme a ``target_rate``.

    Sin ancla la rejilla arranca en t0 y tiene floor((t_end - t0)·rate/1000) + 1
    muestras. Con ancla la rejilla es ``anchor_ms + k·1000/rate`` restringida
    a [t0, t_end], de modo que todos los dispositivos de una sesión comparten
    los mismos instantes.
    """
    if target_rate <= 0:
        raise InvalidParamsError(f"target_rate must be > 0, got {target_rate}")
    t0, t_end = trace.t0, trace.t_end
    if t_end <= t0:
        raise DegenerateSpanError(f"Trace {trace.subject_id}/{trace.device_id} spans zero time")

    step = 1000.0 / target_rate
    origin = t0 if anchor_ms is None else float(anchor_ms)
    k_first = 0 if anchor_ms is None else math.ceil((t0 - origin) / step - _GRID_EPS)
    k_last = math.floor((t_end - origin) / step + _GRID_EPS)
    if k_last < k_first:
        raise DegenerateSpanError(f"Trace {trace.subject_id}/{trace.device_id} shorter than one output step")

    grid = origin + np.arange(k_first, k_last + 1) * step
    # Los extremos pueden caer un épsilon fuera del soporte
    grid = np.clip(grid, t0, t_end)
    channels = np.vstack([np.interp(grid, trace.timestamps, ch) for ch in trace.channels])
    return replace(trace, channels=channels, timestamps=grid, nominal_rate=float(target_rate))


# ==================== FILTRADO ====================

def bandpass(signal: Signal, lo: float = CARDIAC_BAND[0], hi: float = CARDIAC_BAND[1],
             order: int = 4, rate: Optional[float] = None) -> Signal:
    """Butterworth pasabanda en secciones de segundo orden, aplicado ida y vuelta"""
    fs = rate_of(signal, rate)
    if not 0 < lo < hi < fs / 2:
        raise BandOutOfRangeError(f"Band [{lo}, {hi}] Hz invalid for rate {fs} Hz (Nyquist {fs / 2})")
    sos = butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")

    def _filter(x: np.ndarray) -> np.ndarray:
        try:
            return sosfiltfilt(sos, x, axis=-1)
        except ValueError as e:
            raise TraceTooShortError(f"Signal of {x.shape[-1]} samples too short for order-{order} filter: {e}")

    return map_samples(signal, _filter)


def detrend_dc(signal: Signal, window_s: float = 1.5, rate: Optional[float] = None) -> Signal:
    """
    Resta una línea base de media deslizante centrada (bordes truncados) y
    después la media residual, de forma que la salida tiene media nula.
    """
    fs = rate_of(signal, rate)
    window = odd_window(window_s * fs)

    def _detrend(x: np.ndarray) -> np.ndarray:
        out = x - centered_rolling_mean(x, window)
        return out - out.mean(axis=-1, keepdims=True)

    return map_samples(signal, _detrend)


# ==================== VENTANEO ====================

def window_layout(timestamps: np.ndarray, rate: float, window_s: float, hop_s: float,
                  origin_ms: Optional[float] = None) -> Tuple[int, int, int, int]:
    """
    Calcula (índice inicial, muestras por ventana, muestras por salto, número
    de ventanas) con los inicios alineados a ``origin_ms + k·hop``.
    """
    if window_s <= 0 or hop_s <= 0:
        raise InvalidParamsError(f"window_s and hop_s must be > 0, got {window_s}, {hop_s}")
    width = int(round(window_s * rate))
    hop = int(round(hop_s * rate))
    n = int(timestamps.shape[0])
    t0 = float(timestamps[0])

    start = 0
    if origin_ms is not None:
        hop_ms = hop_s * 1000.0
        k = math.ceil((t0 - origin_ms) / hop_ms - _GRID_EPS)
        first_time = origin_ms + k * hop_ms
        start = int(round((first_time - t0) * rate / 1000.0))

    available = n - start
    if width < 1 or available < width:
        duration = n / rate
        raise TraceTooShortError(f"Trace of {duration:.2f} s cannot hold a {window_s} s window")
    count = (available - width) // hop + 1
    return start, width, hop, count


def segment_windows(trace: PpgTrace, window_s: float, hop_s: float, origin_ms: Optional[float] = None,
                    channel: int = 0) -> List[Segment]:
    """Corta un canal en ventanas de ``window_s`` con salto ``hop_s``"""
    start, width, hop, count = window_layout(trace.timestamps, trace.nominal_rate, window_s, hop_s, origin_ms)
    segments = []
    for i in range(count):
        lo = start + i * hop
        segments.append(Segment(
            subject_id=trace.subject_id,
            device_id=trace.device_id,
            device_kind=trace.device_kind,
            start_time=float(trace.timestamps[lo]),
            duration_s=window_s,
            rate=trace.nominal_rate,
            samples=trace.channels[channel, lo:lo + width].copy(),
            stage=Stage.FILTERED,
            tags=dict(trace.tags),
        ))
    return segments


def segment_channels(trace: PpgTrace, window_s: float, hop_s: float,
                     origin_ms: Optional[float] = None) -> List[List[Segment]]:
    """Para cada ventana, la lista de segmentos de todos los canales"""
    per_channel = [segment_windows(trace, window_s, hop_s, origin_ms, ch) for ch in range(trace.n_channels)]
    return [list(window) for window in zip(*per_channel)]


# ==================== ESTANDARIZACIÓN ====================

def _zscore(x: np.ndarray) -> np.ndarray:
    std = x.std()
    if not np.isfinite(std) or std == 0:
        raise FlatSignalError("Cannot standardize a zero-variance signal")
    return (x - x.mean()) / std


def standardize_smooth(signal: Signal, savgol_order: int = 3, savgol_window: int = 11) -> Signal:
    """z-score → Savitzky-Golay → z-score; el resultado tiene media 0 y desviación 1"""
    if savgol_window % 2 == 0 or savgol_window <= savgol_order:
        raise InvalidParamsError(f"savgol_window must be odd and > order, got {savgol_window}/{savgol_order}")

    def _standardize(x: np.ndarray) -> np.ndarray:
        if x.ndim != 1:
            raise InvalidParamsError("standardize_smooth expects a single channel")
        if x.shape[0] < savgol_window:
            raise SegmentTooShortError(f"{x.shape[0]} samples shorter than Savitzky-Golay window {savgol_window}")
        z = _zscore(x)
        smoothed = savgol_filter(z, savgol_window, savgol_order, mode="interp")
        return _zscore(smoothed)

    return map_samples(signal, _standardize, stage=Stage.STANDARDIZED)
