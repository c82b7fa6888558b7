#!/usr/bin/env python3
"""
Extracción de características de pares (token, wearable).

Para cada segmento se calculan 14 descriptores (8 temporales y 6
frecuenciales); el vector del par es la diferencia absoluta de descriptores
seguida de 7 similitudes entre las dos formas de onda.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numba as nb
import numpy as np
from scipy.signal import csd, welch
from scipy.stats import kurtosis, skew

from app.config.pipeline import QualityConfig
from app.core.exceptions import (
    CrossPulseError,
    DegenerateSpectrumError,
    GridMismatchError,
    NonFiniteFeatureError,
    SegmentTooShortError,
)
from app.core.quality import DEFAULT_QUALITY, detect_beats
from app.core.signal_core import CARDIAC_BAND, rate_of, samples_of
from app.models.dataset import NEGATIVE, POSITIVE, SegmentPair
from app.models.features import N_FEATURES, FeatureTable, PairFeatureVector, SignalDescriptors, Spectrum
from app.models.quality import BeatSet
from app.models.signal import Segment, SegmentRef
from app.utils.statistics import cosine_similarity, pearson_correlation, safe_ratio

logger = logging.getLogger(__name__)

SegmentLike = Union[np.ndarray, Segment]

WELCH_SUBWINDOW_S = 4.0
MIN_SEGMENT_S = 2.0
LF_EDGE_HZ = 1.0
SECOND_PEAK_SEPARATION_HZ = 0.1
MAX_LAG_S = 2.0
_TIE_EPS = 1e-12


# ==================== ESPECTRO ====================

def _welch_params(n: int, rate: float, subwindow_s: float) -> Tuple[int, int, int]:
    """(nperseg, noverlap, nfft); la rejilla de nfft es común a todas las duraciones"""
    nfft = int(round(subwindow_s * rate))
    nperseg = min(nfft, n)
    return nperseg, nperseg // 2, nfft


def welch_psd(segment: SegmentLike, rate: Optional[float] = None,
              subwindow_s: float = WELCH_SUBWINDOW_S) -> Spectrum:
    """
    Densidad espectral de Welch con sub-ventanas Hann de 4 s y 50 % de solape.

    Raises:
        SegmentTooShortError: segmento de menos de 2 s.
    """
    x = samples_of(segment)
    rate = rate_of(segment, rate)
    if x.shape[0] < MIN_SEGMENT_S * rate:
        raise SegmentTooShortError(
            f"Segment of {x.shape[0] / rate:.2f} s is shorter than {MIN_SEGMENT_S} s"
        )
    nperseg, noverlap, nfft = _welch_params(x.shape[0], rate, subwindow_s)
    freqs, psd = welch(x, fs=rate, window="hann", nperseg=nperseg, noverlap=noverlap,
                       nfft=nfft, detrend="constant", scaling="density")
    return Spectrum(freqs=freqs, psd=np.maximum(psd, 0.0), nperseg=nperseg, noverlap=noverlap)


def _band_power(spectrum: Spectrum, mask: np.ndarray) -> float:
    return float(np.sum(spectrum.psd[mask]))


def _secondary_peak(freqs: np.ndarray, psd: np.ndarray, main_freq: float) -> float:
    """Pico local más alto separado al menos 0,1 Hz del principal; 0 si no hay"""
    if psd.shape[0] < 3:
        return 0.0
    interior = (psd[1:-1] > psd[:-2]) & (psd[1:-1] >= psd[2:])
    candidates = np.flatnonzero(interior) + 1
    candidates = candidates[np.abs(freqs[candidates] - main_freq) >= SECOND_PEAK_SEPARATION_HZ]
    if candidates.size == 0:
        return 0.0
    return float(freqs[candidates[np.argmax(psd[candidates])]])


# ==================== DESCRIPTORES ====================

def signal_descriptors(segment: SegmentLike, beats: BeatSet, spectrum: Spectrum) -> SignalDescriptors:
    """
    Los 14 descriptores de una señal: frecuencia cardiaca, variabilidad PPI,
    tiempo de subida (PRT), momentos, picos espectrales, reparto de energía
    LF/HF y entropía espectral.

    Raises:
        DegenerateSpectrumError: potencia nula en la banda cardiaca.
    """
    x = samples_of(segment)
    rate = beats.rate

    rr = beats.rr_intervals_s
    # PRT: pico i ≥ 1 frente al mínimo entre los picos i-1 e i
    prt = (beats.peak_indices[1:] - beats.onset_indices[1:]) / rate
    prt_ratio = prt / rr

    band = spectrum.band_mask(*CARDIAC_BAND)
    freqs = spectrum.freqs[band]
    psd = spectrum.psd[band]
    total = float(np.sum(psd))
    if total <= 0 or freqs.size == 0:
        raise DegenerateSpectrumError("No spectral power in the 0.5-2 Hz band")

    main_freq = float(freqs[np.argmax(psd)])
    lf = _band_power(spectrum, spectrum.band_mask(CARDIAC_BAND[0], LF_EDGE_HZ)) / total
    hf = _band_power(spectrum, band & (spectrum.freqs > LF_EDGE_HZ)) / total

    p = psd / total
    nonzero = p[p > 0]
    entropy = float(-np.sum(nonzero * np.log(nonzero)))
    entropy = entropy / np.log(p.size) if p.size > 1 else 0.0

    return SignalDescriptors(
        heart_rate_bpm=float(60.0 / np.mean(rr)),
        ppi_systolic_std_s=float(np.std(rr)),
        prt_mean_s=float(np.mean(prt)),
        prt_std_s=float(np.std(prt)),
        prt_ratio=float(np.mean(prt_ratio)),
        prt_ratio_std=float(np.std(prt_ratio)),
        skewness=float(skew(x)),
        kurtosis=float(kurtosis(x, fisher=True)),
        main_freq_hz=main_freq,
        second_freq_hz=_secondary_peak(freqs, psd, main_freq),
        hf_energy_ratio=float(hf),
        lf_energy_ratio=float(lf),
        lf_hf_ratio=safe_ratio(lf, hf),
        spectral_entropy=float(np.clip(entropy, 0.0, 1.0)),
    )


def pair_differences(d1: SignalDescriptors, d2: SignalDescriptors) -> np.ndarray:
    return np.abs(d1.as_array() - d2.as_array())


# ==================== SIMILITUDES ====================

def coherence_band(a: SegmentLike, b: SegmentLike, rate: Optional[float] = None,
                   subwindow_s: float = WELCH_SUBWINDOW_S) -> float:
    """Coherencia de magnitud cuadrada promediada en 0,5-2 Hz"""
    x, y = samples_of(a), samples_of(b)
    rate = rate_of(a, rate)
    if x.shape != y.shape:
        raise ValueError(f"Coherence needs equal-length segments, got {x.shape} and {y.shape}")
    if x.shape[0] < MIN_SEGMENT_S * rate:
        raise SegmentTooShortError(f"Segment of {x.shape[0] / rate:.2f} s is shorter than {MIN_SEGMENT_S} s")

    nperseg, noverlap, nfft = _welch_params(x.shape[0], rate, subwindow_s)
    kwargs = dict(fs=rate, window="hann", nperseg=nperseg, noverlap=noverlap, nfft=nfft, detrend="constant")
    freqs, pxx = welch(x, **kwargs)
    _, pyy = welch(y, **kwargs)
    _, pxy = csd(x, y, **kwargs)

    band = (freqs >= CARDIAC_BAND[0]) & (freqs <= CARDIAC_BAND[1])
    denom = pxx[band] * pyy[band]
    coh = np.zeros(denom.shape)
    valid = denom > 0
    coh[valid] = np.abs(pxy[band][valid]) ** 2 / denom[valid]
    return float(np.mean(np.clip(coh, 0.0, 1.0)))


def xcorr_peak(a: SegmentLike, b: SegmentLike, rate: Optional[float] = None,
               max_lag_s: float = MAX_LAG_S) -> Tuple[float, float]:
    """
    Correlación cruzada normalizada (Pearson sobre el solape) en ±2 s.

    Un desfase positivo significa que ``b`` va retrasada respecto a ``a``.
    Empates: menor |desfase| y, a igualdad, el desfase negativo.

    Returns:
        (correlación máxima, desfase en segundos)
    """
    x, y = samples_of(a), samples_of(b)
    rate = rate_of(a, rate)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"Cross-correlation needs equal-length segments, got {n} and {y.shape[0]}")
    max_lag = max(0, min(int(round(max_lag_s * rate)), n - 2))

    lags = np.arange(-max_lag, max_lag + 1)
    corrs = np.empty(lags.shape[0])
    for i, lag in enumerate(lags):
        if lag >= 0:
            xs, ys = x[:n - lag], y[lag:]
        else:
            xs, ys = x[-lag:], y[:n + lag]
        corrs[i] = _overlap_corr(xs, ys)

    best = corrs.max()
    tied = lags[corrs >= best - _TIE_EPS]
    lag = min(tied, key=lambda L: (abs(L), L > 0))
    return float(corrs[lag + max_lag]), float(lag / rate)


def _overlap_corr(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(dx, dy) / denom, -1.0, 1.0))


@nb.njit(cache=True)
def _dtw_kernel(x, y):
    """Programación dinámica DTW: coste acumulado y longitud del camino óptimo"""
    n = x.shape[0]
    m = y.shape[0]
    D = np.full((n + 1, m + 1), np.inf)
    L = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            # diagonal, arriba, izquierda; a igual coste gana el camino más corto
            best = D[i - 1, j - 1]
            bl = L[i - 1, j - 1]
            c = D[i - 1, j]
            if c < best or (c == best and L[i - 1, j] < bl):
                best = c
                bl = L[i - 1, j]
            c = D[i, j - 1]
            if c < best or (c == best and L[i, j - 1] < bl):
                best = c
                bl = L[i, j - 1]
            D[i, j] = abs(x[i - 1] - y[j - 1]) + best
            L[i, j] = bl + 1
    return D[n, m], L[n, m]


def dtw_distance(a: SegmentLike, b: SegmentLike) -> float:
    """DTW sin restricción de ventana, coste |x−y|, normalizado por la longitud del camino"""
    x = np.ascontiguousarray(samples_of(a), dtype=np.float64)
    y = np.ascontiguousarray(samples_of(b), dtype=np.float64)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("DTW needs non-empty sequences")
    cost, length = _dtw_kernel(x, y)
    return float(cost / length)


def linear_similarities(a: SegmentLike, b: SegmentLike) -> Tuple[float, float]:
    """(Pearson, coseno en el dominio temporal)"""
    x, y = samples_of(a), samples_of(b)
    return pearson_correlation(x, y), cosine_similarity(x, y)


def psd_cosine(sa: Spectrum, sb: Spectrum) -> float:
    """Similitud coseno de dos PSD restringidas a 0,5-2 Hz"""
    if sa.freqs.shape != sb.freqs.shape or not np.array_equal(sa.freqs, sb.freqs):
        raise GridMismatchError(
            f"Spectra grids differ ({sa.freqs.shape[0]} vs {sb.freqs.shape[0]} bins)"
        )
    band = sa.band_mask(*CARDIAC_BAND)
    pa, pb = sa.psd[band], sb.psd[band]
    denom = np.linalg.norm(pa) * np.linalg.norm(pb)
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(pa, pb) / denom, 0.0, 1.0))


# ==================== VECTOR DEL PAR ====================

class SegmentProfile(NamedTuple):
    """Resultados por segmento reutilizables entre pares"""
    beats: BeatSet
    spectrum: Spectrum
    descriptors: SignalDescriptors


def segment_profile(segment: Segment, quality: QualityConfig = DEFAULT_QUALITY) -> SegmentProfile:
    beats = detect_beats(segment, config=quality)
    spectrum = welch_psd(segment)
    return SegmentProfile(beats, spectrum, signal_descriptors(segment, beats, spectrum))


def extract_pair_features(a: Segment, b: Segment, label: Optional[int] = None,
                          quality: QualityConfig = DEFAULT_QUALITY,
                          cache: Optional[Dict[SegmentRef, SegmentProfile]] = None) -> PairFeatureVector:
    """
    Compone el vector de 21 características del par (token ``a``, wearable ``b``).

    Raises:
        NonFiniteFeatureError: alguna característica no es finita.
        Propaga los errores de detección de latidos y espectro.
    """
    if a.rate != b.rate or a.samples.shape != b.samples.shape:
        raise ValueError(
            f"Pair segments must share rate and length: {a.ref.as_tuple()} vs {b.ref.as_tuple()}"
        )
    profiles = []
    for segment in (a, b):
        profile = cache.get(segment.ref) if cache is not None else None
        if profile is None:
            profile = segment_profile(segment, quality)
            if cache is not None:
                cache[segment.ref] = profile
        profiles.append(profile)
    pa, pb = profiles

    diffs = pair_differences(pa.descriptors, pb.descriptors)
    max_xcorr, max_lag = xcorr_peak(a, b)
    pearson, cosine_time = linear_similarities(a, b)
    sims = np.array([
        coherence_band(a, b),
        max_xcorr,
        max_lag,
        dtw_distance(a, b),
        pearson,
        cosine_time,
        psd_cosine(pa.spectrum, pb.spectrum),
    ])
    values = np.concatenate([diffs, sims])
    if not np.all(np.isfinite(values)):
        raise NonFiniteFeatureError(f"Non-finite feature for pair {a.ref.as_tuple()} / {b.ref.as_tuple()}")

    if label is None:
        label = POSITIVE if a.subject_id == b.subject_id else NEGATIVE
    return PairFeatureVector(values=values, pair=SegmentPair(a.ref, b.ref, label))


Chunk = List[Tuple[Segment, Segment, SegmentPair]]
ChunkResult = List[Tuple[Optional[np.ndarray], Optional[str]]]


def _extract_chunk(chunk: Chunk, quality: QualityConfig) -> ChunkResult:
    """Extrae un bloque contiguo de pares con caché de perfiles local al bloque"""
    cache: Dict[SegmentRef, SegmentProfile] = {}
    results: ChunkResult = []
    for seg_a, seg_b, pair in chunk:
        try:
            vector = extract_pair_features(seg_a, seg_b, pair.label, quality, cache)
            results.append((vector.values, None))
        except (CrossPulseError, ValueError) as exc:
            results.append((None, f"{type(exc).__name__}: {exc}"))
    return results


def extract_many(pairs: Sequence[SegmentPair], lookup: Callable[[SegmentRef], Segment],
                 workers: int = 1, quality: QualityConfig = DEFAULT_QUALITY) -> FeatureTable:
    """
    Extrae las características de muchos pares, opcionalmente en paralelo.

    El resultado conserva el orden de entrada; los pares que fallan se
    devuelven en ``discarded`` junto con el motivo.
    """
    items = [(lookup(p.a), lookup(p.b), p) for p in pairs]
    workers = max(1, int(workers))
    if workers == 1 or len(items) < 2 * workers:
        results = _extract_chunk(items, quality)
    else:
        size = -(-len(items) // workers)
        chunks = [items[i:i + size] for i in range(0, len(items), size)]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for chunk_result in executor.map(_extract_chunk, chunks, [quality] * len(chunks)):
                results.extend(chunk_result)

    kept_values: List[np.ndarray] = []
    kept_pairs: List[SegmentPair] = []
    discarded: List[Tuple[SegmentPair, str]] = []
    for pair, (values, reason) in zip(pairs, results):
        if values is None:
            logger.debug(f"Discarded pair {pair.a.as_tuple()} / {pair.b.as_tuple()}: {reason}")
            discarded.append((pair, reason))
        else:
            kept_values.append(values)
            kept_pairs.append(pair)

    matrix = np.vstack(kept_values) if kept_values else np.empty((0, N_FEATURES))
    logger.info(f"Extracted features for {len(kept_pairs)} pairs ({len(discarded)} discarded, {workers} workers)")
    return FeatureTable(values=matrix, pairs=tuple(kept_pairs), discarded=tuple(discarded))
