#!/usr/bin/env python3
"""
Modelos de la sesión en tiempo real simulada.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


class DecisionReason(str, Enum):
    OK = "ok"
    MA_REJECTED = "ma_rejected"
    INSUFFICIENT_DATA = "insufficient_data"


class AdversaryMode(str, Enum):
    NONE = "none"
    BASELINE = "baseline"
    REPLAY = "replay"


class SessionDecision(BaseModel):
    """Decisión por wearable y ventana de recogida"""
    subject_id: str
    wearable_id: str
    source_subject_id: str = Field(description="Sujeto cuya señal llegó por el canal del wearable")
    adversary: AdversaryMode = AdversaryMode.NONE
    window_start_ms: float
    window_end_ms: float
    score: Optional[float] = None
    threshold: float
    accept: bool
    reason: DecisionReason
    transport_delay_ms: float = Field(0.0, ge=0)
    decision_latency_ms: float = Field(ge=0)

    @model_validator(mode="after")
    def validate_decision(self) -> "SessionDecision":
        expected = self.reason == DecisionReason.OK and self.score is not None and self.score >= self.threshold
        if self.accept != expected:
            raise ValueError("accept must hold exactly when reason is ok and score >= threshold")
        return self


class SessionSummary(BaseModel):
    n_decisions: int
    legit_accept_rate: Optional[float] = None
    adversary_accept_rate: Optional[float] = None
    bac: Optional[float] = None
    mean_latency_ms: Optional[float] = None
    insufficient: int = 0
    ma_rejected: int = 0


class AggregatedDecision(BaseModel):
    """Aceptación k-de-n sobre las últimas n ventanas de un wearable"""
    subject_id: str
    wearable_id: str
    adversary: AdversaryMode = AdversaryMode.NONE
    window_end_ms: float
    accepted_windows: int = Field(ge=0)
    n: int = Field(ge=1)
    k: int = Field(ge=1)
    accept: bool


@dataclass(frozen=True, eq=False)
class StreamChunk:
    """
    Paquete de un flujo: muestras consecutivas de la rejilla de 60 Hz del
    emisor. ``first_index`` cuenta muestras desde ``origin_ms``; las marcas de
    tiempo de origen son ``origin_ms + (first_index + j)·1000/rate``.
    """
    stream_id: str
    source_subject_id: str
    origin_ms: float
    first_index: int
    samples: np.ndarray
    rate: float

    @property
    def step_ms(self) -> float:
        return 1000.0 / self.rate

    @property
    def t_start_ms(self) -> float:
        return self.origin_ms + self.first_index * self.step_ms

    @property
    def t_end_ms(self) -> float:
        return self.origin_ms + (self.first_index + self.samples.shape[0]) * self.step_ms
