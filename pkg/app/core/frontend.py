#!/usr/bin/env python3
"""
Front-end por dispositivo: de la traza cruda a la señal procesada de 60 Hz y a
las ventanas estandarizadas de características.
"""
import logging
from typing import List, Optional

import numpy as np

from app.config.pipeline import PreprocessConfig, QualityConfig
from app.core.exceptions import AllChannelsInvalidError, FlatSignalError, NoBeatsError
from app.core.quality import best_channel_index, classify_artifact, detect_beats, mitigate_weak, score_channels
from app.core.signal_core import bandpass, detrend_dc, resample_uniform, segment_channels, standardize_smooth, window_layout
from app.models.quality import ArtifactClass, WindowQuality
from app.models.signal import PpgTrace, ProcessedTrace, Segment, Stage

logger = logging.getLogger(__name__)


def preprocess_trace(trace: PpgTrace, preprocess: PreprocessConfig = PreprocessConfig(),
                     quality: QualityConfig = QualityConfig(), anchor_ms: Optional[float] = None,
                     origin_ms: Optional[float] = None) -> ProcessedTrace:
    """
    Remuestreo → pasabanda → ventanas MA de 12 s → detrend por canal →
    selección de canal → triaje → mitigación de ventanas débiles.

    Las ventanas fuertemente corruptas (y las muestras fuera de cualquier
    ventana MA) quedan como NaN en la señal procesada.
    """
    rate = preprocess.target_rate
    resampled = resample_uniform(trace, rate, anchor_ms=anchor_ms)
    filtered = bandpass(resampled, preprocess.band_lo_hz, preprocess.band_hi_hz, preprocess.filter_order)
    origin = filtered.t0 if origin_ms is None else origin_ms
    windows = segment_channels(filtered, preprocess.window_ma_s, preprocess.window_ma_s, origin_ms=origin)

    processed = np.full(filtered.n_samples, np.nan)
    records: List[WindowQuality] = []
    for channels in windows:
        start_ms = channels[0].start_time
        lo = int(round((start_ms - filtered.t0) * rate / 1000.0))
        detrended = [detrend_dc(seg, preprocess.detrend_window_s) for seg in channels]
        scored = score_channels(detrended, config=quality)
        try:
            index = best_channel_index([s[1] if s is not None else None for s in scored])
        except AllChannelsInvalidError:
            logger.debug(f"{trace.subject_id}/{trace.device_id} window at {start_ms:.0f} ms: no usable channel")
            records.append(WindowQuality(subject_id=trace.subject_id, device_id=trace.device_id, start_ms=start_ms))
            continue

        segment = detrended[index]
        metrics, score = scored[index]
        try:
            beats = detect_beats(segment, config=quality)
        except NoBeatsError:
            beats = None
        artifact = classify_artifact(metrics, beats, quality)

        samples = segment.samples
        if artifact == ArtifactClass.WEAK:
            samples = mitigate_weak(samples, beats, rate, quality, preprocess.detrend_window_s)
        if artifact != ArtifactClass.HEAVY:
            processed[lo:lo + samples.shape[0]] = samples
        else:
            logger.debug(f"{trace.subject_id}/{trace.device_id} window at {start_ms:.0f} ms rejected (heavy)")

        records.append(WindowQuality(
            subject_id=trace.subject_id,
            device_id=trace.device_id,
            start_ms=start_ms,
            channel=index,
            S=metrics.skewness,
            K=metrics.kurtosis,
            R=metrics.relative_power,
            T=metrics.template_match,
            score=score,
            artifact_class=artifact,
            mitigated=artifact == ArtifactClass.WEAK,
        ))

    result = ProcessedTrace(
        subject_id=trace.subject_id,
        device_id=trace.device_id,
        device_kind=trace.device_kind,
        rate=rate,
        t0_ms=filtered.t0,
        samples=processed,
        tags=dict(trace.tags),
        windows=records,
    )
    logger.debug(
        f"Preprocessed {trace.subject_id}/{trace.device_id}: {len(records)} MA windows, "
        f"pass fraction {result.pass_fraction:.2f}"
    )
    return result


def feature_windows(processed: ProcessedTrace, window_s: float, hop_s: float,
                    origin_ms: Optional[float] = None, savgol_order: int = 3,
                    savgol_window: int = 11) -> List[Segment]:
    """Ventanas estandarizadas sin NaN cortadas de la señal procesada"""
    start, width, hop, count = window_layout(processed.timestamps, processed.rate, window_s, hop_s, origin_ms)
    segments = []
    for i in range(count):
        lo = start + i * hop
        samples = processed.samples[lo:lo + width]
        if np.isnan(samples).any():
            continue
        segment = Segment(
            subject_id=processed.subject_id,
            device_id=processed.device_id,
            device_kind=processed.device_kind,
            start_time=processed.t0_ms + lo * 1000.0 / processed.rate,
            duration_s=window_s,
            rate=processed.rate,
            samples=samples.copy(),
            stage=Stage.MA_CHECKED,
            tags=dict(processed.tags),
        )
        try:
            segments.append(standardize_smooth(segment, savgol_order, savgol_window))
        except FlatSignalError:
            logger.warning(f"Skipping flat window {segment.ref.as_tuple()}")
    return segments
