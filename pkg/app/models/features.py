#!/usr/bin/env python3
"""
Modelos de características: espectro, descriptores por señal y vector de par.

El orden de columnas es fijo: 14 diferencias absolutas (8 temporales, 6
frecuenciales) seguidas de 7 medidas de similitud.
"""
from dataclasses import astuple, dataclass
from typing import List, Sequence, Tuple

import numpy as np

from app.models.dataset import SegmentPair

DESCRIPTOR_NAMES: List[str] = [
    # dominio temporal
    "heart_rate_bpm",
    "ppi_systolic_std_s",
    "prt_mean_s",
    "prt_std_s",
    "prt_ratio",
    "prt_ratio_std",
    "skewness",
    "kurtosis",
    # dominio frecuencial
    "main_freq_hz",
    "second_freq_hz",
    "hf_energy_ratio",
    "lf_energy_ratio",
    "lf_hf_ratio",
    "spectral_entropy",
]

SIMILARITY_NAMES: List[str] = [
    "coherence",
    "max_xcorr",
    "max_lag_s",
    "dtw_distance",
    "pearson",
    "cosine_time",
    "cosine_psd",
]

FEATURE_NAMES: List[str] = [f"diff_{name}" for name in DESCRIPTOR_NAMES] + SIMILARITY_NAMES
FEATURE_COLUMNS: List[str] = [f"f{i:02d}" for i in range(1, len(FEATURE_NAMES) + 1)]
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Estimación de Welch: rejilla de frecuencias y densidad de potencia"""
    freqs: np.ndarray
    psd: np.ndarray
    nperseg: int
    noverlap: int
    window: str = "hann"

    def band_mask(self, lo: float, hi: float) -> np.ndarray:
        return (self.freqs >= lo) & (self.freqs <= hi)


@dataclass(frozen=True)
class SignalDescriptors:
    heart_rate_bpm: float
    ppi_systolic_std_s: float
    prt_mean_s: float
    prt_std_s: float
    prt_ratio: float
    prt_ratio_std: float
    skewness: float
    kurtosis: float
    main_freq_hz: float
    second_freq_hz: float
    hf_energy_ratio: float
    lf_energy_ratio: float
    lf_hf_ratio: float
    spectral_entropy: float

    def as_array(self) -> np.ndarray:
        return np.asarray(astuple(self), dtype=float)


@dataclass(frozen=True, eq=False)
class PairFeatureVector:
    """Las 21 características de un par (token, wearable) con su identidad"""
    values: np.ndarray
    pair: SegmentPair

    @property
    def diffs(self) -> np.ndarray:
        return self.values[: len(DESCRIPTOR_NAMES)]

    @property
    def sims(self) -> np.ndarray:
        return self.values[len(DESCRIPTOR_NAMES):]

    @property
    def label(self) -> int:
        return self.pair.label


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Matriz de características (n_pares × n_columnas) alineada con sus pares"""
    values: np.ndarray
    pairs: Tuple[SegmentPair, ...]
    discarded: Tuple[Tuple[SegmentPair, str], ...] = ()
    feature_names: Tuple[str, ...] = tuple(FEATURE_NAMES)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.pairs], dtype=int)

    @property
    def token_subjects(self) -> np.ndarray:
        return np.array([p.a.subject_id for p in self.pairs], dtype=object)

    @property
    def wearable_devices(self) -> np.ndarray:
        return np.array([p.b.device_id for p in self.pairs], dtype=object)

    def vector(self, index: int) -> PairFeatureVector:
        return PairFeatureVector(values=self.values[index], pair=self.pairs[index])

    def take(self, indices: Sequence[int]) -> "FeatureTable":
        indices = np.asarray(indices, dtype=int)
        return FeatureTable(
            values=self.values[indices],
            pairs=tuple(self.pairs[i] for i in indices),
            feature_names=self.feature_names,
        )

    def drop_column(self, column: int) -> "FeatureTable":
        names = tuple(n for i, n in enumerate(self.feature_names) if i != column)
        return FeatureTable(
            values=np.delete(self.values, column, axis=1),
            pairs=self.pairs,
            discarded=self.discarded,
            feature_names=names,
        )
