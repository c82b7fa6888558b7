#!/usr/bin/env python3
"""
Modelos de resultados de evaluación: métricas, informe LOSO y tablas de barrido.
"""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class MetricSet(BaseModel):
    """BAC/AUC/EER de un conjunto de puntuaciones"""
    bac: float = Field(ge=0, le=1)
    auc: float = Field(ge=0, le=1)
    eer: float = Field(ge=0, le=1)
    threshold: Optional[float] = None


class SubjectMetrics(MetricSet):
    n_pairs: int = Field(ge=1)


class EvalReport(BaseModel):
    """Informe de evaluación: por sujeto, media ponderada y barridos"""
    per_subject: Dict[str, SubjectMetrics] = Field(default_factory=dict)
    weighted: Optional[MetricSet] = None
    threshold_mode: str = "oracle"
    per_device: Dict[str, MetricSet] = Field(default_factory=dict)
    baseline_attack_rate: Optional[float] = Field(None, ge=0, le=1)
    sweeps: Dict[str, List[Dict[str, Any]]] = Field(default_factory=dict)
    notes: Dict[str, Any] = Field(default_factory=dict)
