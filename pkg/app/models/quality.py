#!/usr/bin/env python3
"""
Modelos de calidad de señal: métricas S/K/R/T, latidos detectados y triaje.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class ArtifactClass(str, Enum):
    CLEAN = "clean"
    WEAK = "weak"
    HEAVY = "heavy"


class QualityMetrics(BaseModel):
    """Indicadores de la puntuación unificada de canal"""
    model_config = ConfigDict(frozen=True)

    skewness: float
    kurtosis: float = Field(description="Curtosis en exceso")
    relative_power: float = Field(ge=0, le=1, description="Potencia relativa alrededor del pico dominante")
    template_match: float = Field(ge=-1, le=1, description="Correlación media latido-plantilla")


@dataclass(frozen=True, eq=False)
class BeatSet:
    """Picos sistólicos, inicios de pulso e intervalos RR de un segmento"""
    peak_indices: np.ndarray
    onset_indices: np.ndarray
    rr_intervals_s: np.ndarray
    per_beat_template_corr: np.ndarray
    rate: float

    @property
    def n_peaks(self) -> int:
        return int(self.peak_indices.shape[0])


class WindowQuality(BaseModel):
    """Registro de triaje de una ventana MA (informe JSON por ventana)"""
    model_config = ConfigDict(populate_by_name=True)

    subject_id: str
    device_id: str
    start_ms: float
    channel: int = -1
    S: Optional[float] = None
    K: Optional[float] = None
    R: Optional[float] = None
    T: Optional[float] = None
    score: Optional[float] = None
    artifact_class: ArtifactClass = Field(ArtifactClass.HEAVY, alias="class")
    mitigated: bool = False

    @property
    def passed(self) -> bool:
        return self.artifact_class != ArtifactClass.HEAVY
