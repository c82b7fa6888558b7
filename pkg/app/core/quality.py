#!/usr/bin/env python3
"""
Evaluación de calidad de señal y triaje de artefactos de movimiento.

Cada canal se puntúa con la combinación ponderada de asimetría (S), curtosis
(K), potencia espectral relativa (R) y ajuste a plantilla de latido (T). El
mejor canal de cada ventana se clasifica como limpio, débilmente corrupto o
fuertemente corrupto; las ventanas débiles se suavizan.
"""
import logging
import math
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.signal import find_peaks, periodogram

from app.config.pipeline import QualityConfig
from app.core.exceptions import AllChannelsInvalidError, FlatSignalError, NoBeatsError
from app.core.signal_core import (
    CARDIAC_BAND,
    centered_rolling_mean,
    detrend_dc,
    map_samples,
    odd_window,
    rate_of,
    samples_of,
)
from app.models.quality import ArtifactClass, BeatSet, QualityMetrics, WindowQuality
from app.models.signal import Segment, Stage
from app.utils.statistics import coefficient_of_variation, pearson_correlation, resample_to_length

logger = logging.getLogger(__name__)

DEFAULT_QUALITY = QualityConfig()
_MIN_NFFT = 8192

SegmentLike = Union[np.ndarray, Segment]


# ==================== INDICADORES ====================

def relative_spectral_power(x: np.ndarray, rate: float, halfwidth_hz: float = 0.15,
                            band: Tuple[float, float] = CARDIAC_BAND) -> float:
    """
    Fracción de la potencia de banda concentrada a ±halfwidth del pico dominante.

    Periodograma Hann de la ventana completa con relleno de ceros (>= 8192
    puntos) para resolver el lóbulo principal con rejilla fina.
    """
    nfft = max(_MIN_NFFT, 1 << int(math.ceil(math.log2(max(len(x), 2)))))
    freqs, psd = periodogram(x, fs=rate, window="hann", nfft=nfft, detrend="constant", scaling="density")
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    total = psd[in_band].sum()
    if total <= 0:
        return 0.0
    peak = freqs[in_band][np.argmax(psd[in_band])]
    near = in_band & (np.abs(freqs - peak) <= halfwidth_hz)
    return float(np.clip(psd[near].sum() / total, 0.0, 1.0))


def quality_metrics(segment: SegmentLike, rate: Optional[float] = None,
                    config: QualityConfig = DEFAULT_QUALITY) -> QualityMetrics:
    """S, K, R y T de un segmento filtrado y uniformemente muestreado"""
    x = samples_of(segment)
    fs = rate_of(segment, rate)
    if not np.all(np.isfinite(x)) or x.std() == 0:
        raise FlatSignalError("Quality metrics undefined for flat or non-finite signal")

    skewness = float(stats.skew(x))
    kurtosis = float(stats.kurtosis(x, fisher=True))
    relative = relative_spectral_power(x, fs, config.peak_halfwidth_hz)
    try:
        template = template_match(detect_beats(x, fs, config))
    except NoBeatsError:
        template = 0.0

    return QualityMetrics(
        skewness=skewness,
        kurtosis=kurtosis,
        relative_power=relative,
        template_match=float(np.clip(template, -1.0, 1.0)),
    )


def channel_quality_score(metrics: QualityMetrics, config: QualityConfig = DEFAULT_QUALITY) -> float:
    """Puntuación unificada de canal en [0, 1]; T se recorta a [0, 1]"""
    skew_ok = 1.0 if config.skew_lo <= metrics.skewness <= config.skew_hi else 0.0
    kurt_ok = 1.0 if metrics.kurtosis <= config.kurt_max else 0.0
    template = min(max(metrics.template_match, 0.0), 1.0)
    return (config.lambda_s * skew_ok + config.lambda_k * kurt_ok
            + config.lambda_r * metrics.relative_power + config.lambda_t * template)


# ==================== SELECCIÓN DE CANAL ====================

def best_channel_index(scores: Sequence[Optional[float]]) -> int:
    """Argmax de puntuaciones; None marca canales excluidos; empate → menor índice"""
    valid = [(score, i) for i, score in enumerate(scores) if score is not None]
    if not valid:
        raise AllChannelsInvalidError(f"None of {len(scores)} channels is usable")
    best = max(score for score, _ in valid)
    return min(i for score, i in valid if score == best)


def score_channels(channels: Sequence[SegmentLike], rate: Optional[float] = None,
                   config: QualityConfig = DEFAULT_QUALITY) -> List[Optional[Tuple[QualityMetrics, float]]]:
    """Métricas y puntuación por canal; None para canales planos o no finitos"""
    scored: List[Optional[Tuple[QualityMetrics, float]]] = []
    for i, channel in enumerate(channels):
        try:
            metrics = quality_metrics(channel, rate, config)
        except FlatSignalError:
            logger.debug(f"Channel {i} excluded: flat or non-finite")
            scored.append(None)
            continue
        scored.append((metrics, channel_quality_score(metrics, config)))
    return scored


def select_best_channel(channels: Sequence[SegmentLike], rate: Optional[float] = None,
                        config: QualityConfig = DEFAULT_QUALITY) -> Tuple[int, SegmentLike]:
    """Canal de mayor puntuación de una ventana multicanal alineada"""
    if not channels:
        raise AllChannelsInvalidError("Window has no channels")
    scored = score_channels(channels, rate, config)
    index = best_channel_index([s[1] if s is not None else None for s in scored])
    return index, channels[index]


# ==================== DETECCIÓN DE LATIDOS ====================

def detect_beats(segment: SegmentLike, rate: Optional[float] = None,
                 config: QualityConfig = DEFAULT_QUALITY) -> BeatSet:
    """
    Picos sistólicos, inicios de pulso e intervalos RR.

    Umbral de altura: mediana + fracción·(P95 - P5)/2. Distancia mínima entre
    picos: rr_min_s. El inicio de cada pulso es el mínimo entre el pico previo
    y el actual; los ciclos van de inicio a inicio y se comparan con el latido
    promedio remuestreado a ``template_length`` puntos.
    """
    x = samples_of(segment)
    fs = rate_of(segment, rate)
    if not np.all(np.isfinite(x)):
        raise NoBeatsError("Signal contains non-finite samples")

    p5, p95 = np.percentile(x, [5, 95])
    robust_amplitude = 0.5 * (p95 - p5)
    if robust_amplitude <= 0:
        raise NoBeatsError("Signal has no amplitude")

    height = float(np.median(x)) + config.peak_height_fraction * robust_amplitude
    distance = max(1, int(math.ceil(config.rr_min_s * fs)))
    peaks, _ = find_peaks(x, height=height, distance=distance)
    if peaks.size < 2:
        raise NoBeatsError(f"Found {peaks.size} peaks, need >= 2")

    onsets = np.empty_like(peaks)
    previous = 0
    for i, peak in enumerate(peaks):
        onsets[i] = previous + int(np.argmin(x[previous:peak]))
        previous = peak

    # Ciclos completos inicio → inicio; el primero solo si es un mínimo interior
    first = 1 if onsets[0] == 0 else 0
    cycles = [x[onsets[k]:onsets[k + 1] + 1] for k in range(first, len(onsets) - 1)]
    correlations = np.array([])
    if cycles:
        beats = np.vstack([resample_to_length(c, config.template_length) for c in cycles])
        template = beats.mean(axis=0)
        correlations = np.array([_corr_or_zero(beat, template) for beat in beats])

    return BeatSet(
        peak_indices=peaks,
        onset_indices=onsets,
        rr_intervals_s=np.diff(peaks) / fs,
        per_beat_template_corr=correlations,
        rate=fs,
    )


def _corr_or_zero(a: np.ndarray, b: np.ndarray) -> float:
    try:
        return pearson_correlation(a, b)
    except FlatSignalError:
        return 0.0


def template_match(beats: BeatSet) -> float:
    """Correlación media latido-plantilla; 0 con menos de dos ciclos"""
    if beats.per_beat_template_corr.size < 2:
        return 0.0
    return float(beats.per_beat_template_corr.mean())


# ==================== TRIAJE ====================

def classify_artifact(metrics: QualityMetrics, beats: Optional[BeatSet],
                      config: QualityConfig = DEFAULT_QUALITY) -> ArtifactClass:
    """
    Limpio, débil o fuerte; sin latidos la ventana es fuerte.
    No recibe el segmento: las métricas y los latidos ya contienen todo lo que se usa de él.
    """
    if metrics.relative_power > config.clean_r_min and metrics.template_match > config.clean_t_min:
        return ArtifactClass.CLEAN
    if beats is None or beats.rr_intervals_s.size == 0:
        return ArtifactClass.HEAVY

    confident = int(np.sum(beats.per_beat_template_corr >= config.beat_template_corr_min))
    rr = beats.rr_intervals_s
    regular = coefficient_of_variation(rr) <= config.rr_cv_max
    physiological = bool(np.all((rr >= config.rr_min_s) & (rr <= config.rr_max_s)))
    if confident >= 2 and regular and physiological:
        return ArtifactClass.WEAK
    return ArtifactClass.HEAVY


def mitigate_weak(segment: SegmentLike, beats: BeatSet, rate: Optional[float] = None,
                  config: QualityConfig = DEFAULT_QUALITY, detrend_window_s: float = 1.5) -> SegmentLike:
    """Media móvil centrada de 0.25·mediana(RR) seguida de detrend_dc"""
    fs = rate_of(segment, rate)
    window = odd_window(config.mitigation_rr_fraction * float(np.median(beats.rr_intervals_s)) * fs)

    def _smooth(x: np.ndarray) -> np.ndarray:
        return detrend_dc(centered_rolling_mean(x, window), detrend_window_s, rate=fs)

    return map_samples(segment, _smooth, stage=Stage.MA_CHECKED)


def pass_rate_by_device(records: Iterable[WindowQuality]) -> Dict[str, float]:
    """Fracción de ventanas MA aceptadas (limpias o débiles) por dispositivo"""
    totals: Dict[str, int] = defaultdict(int)
    passed: Dict[str, int] = defaultdict(int)
    for record in records:
        totals[record.device_id] += 1
        passed[record.device_id] += int(record.passed)
    return {device: passed[device] / totals[device] for device in sorted(totals)}
