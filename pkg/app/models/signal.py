#!/usr/bin/env python3
"""
Modelos de señal: trazas crudas por dispositivo, segmentos y trazas procesadas.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from app.core.exceptions import ChannelLengthMismatchError, NonMonotonicTimestampsError
from app.models.quality import WindowQuality


class DeviceKind(str, Enum):
    TOKEN = "token"
    WEARABLE = "wearable"


class Stage(str, Enum):
    FILTERED = "filtered"
    MA_CHECKED = "ma_checked"
    STANDARDIZED = "standardized"


class TraceMeta(BaseModel):
    """Metadatos del sidecar JSON de una traza"""
    subject_id: str = Field(min_length=1)
    device_id: str = Field(min_length=1)
    device_kind: DeviceKind
    invert: bool = False
    nominal_rate: Optional[float] = Field(None, gt=0)
    tags: Dict[str, str] = Field(default_factory=dict)


@dataclass(frozen=True)
class SegmentRef:
    """Identidad de un segmento: (sujeto, dispositivo, inicio en ms)"""
    subject_id: str
    device_id: str
    start_ms: int

    def as_tuple(self):
        return (self.subject_id, self.device_id, self.start_ms)


@dataclass(frozen=True, eq=False)
class PpgTrace:
    """Forma de onda de pulso multicanal con marcas de tiempo (ms epoch)"""
    subject_id: str
    device_id: str
    device_kind: DeviceKind
    channels: np.ndarray
    timestamps: np.ndarray
    nominal_rate: float
    polarity_inverted: bool = False
    tags: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.channels.ndim != 2 or self.channels.shape[1] != self.timestamps.shape[0]:
            raise ChannelLengthMismatchError(
                f"Channels shape {self.channels.shape} does not match {self.timestamps.shape[0]} timestamps"
            )
        if self.nominal_rate <= 0:
            raise ValueError(f"nominal_rate must be > 0, got {self.nominal_rate}")
        if self.timestamps.size > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise NonMonotonicTimestampsError(f"Timestamps of {self.subject_id}/{self.device_id} not strictly increasing")

    @property
    def n_channels(self) -> int:
        return int(self.channels.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.channels.shape[1])

    @property
    def t0(self) -> float:
        return float(self.timestamps[0])

    @property
    def t_end(self) -> float:
        return float(self.timestamps[-1])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.nominal_rate


@dataclass(frozen=True, eq=False)
class Segment:
    """Ventana monocanal, uniformemente muestreada, con identidad sujeto/dispositivo/tiempo"""
    subject_id: str
    device_id: str
    device_kind: DeviceKind
    start_time: float
    duration_s: float
    rate: float
    samples: np.ndarray
    stage: Stage = Stage.FILTERED
    tags: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        expected = int(round(self.duration_s * self.rate))
        if self.samples.ndim != 1 or self.samples.shape[0] != expected:
            raise ValueError(
                f"Segment needs {expected} samples for {self.duration_s} s at {self.rate} Hz, got {self.samples.shape}"
            )

    @property
    def ref(self) -> SegmentRef:
        return SegmentRef(self.subject_id, self.device_id, int(round(self.start_time)))


@dataclass(frozen=True, eq=False)
class ProcessedTrace:
    """Señal de 60 Hz tras el front-end; los tramos rechazados contienen NaN"""
    subject_id: str
    device_id: str
    device_kind: DeviceKind
    rate: float
    t0_ms: float
    samples: np.ndarray
    tags: Dict[str, str] = field(default_factory=dict)
    windows: List[WindowQuality] = field(default_factory=list)

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0_ms + np.arange(self.samples.shape[0]) * (1000.0 / self.rate)

    @property
    def pass_fraction(self) -> float:
        if not self.windows:
            return 0.0
        passed = sum(1 for w in self.windows if w.passed)
        return passed / len(self.windows)
