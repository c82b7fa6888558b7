#!/usr/bin/env python3
"""
Parámetros del generador sintético: fisiología por sujeto y render por sitio
de medida (dispositivo).
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.models.signal import DeviceKind, PpgTrace


class ArtifactKind(str, Enum):
    BURST = "burst"
    DROPOUT = "dropout"
    WANDER = "wander"


class SubjectParams(BaseModel):
    """Conductor cardíaco compartido por todos los dispositivos de un sujeto"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_hr_bpm: float = Field(70.0, ge=50, le=95)
    hrv_std_s: float = Field(0.03, ge=0, description="Desviación del proceso RR (s)")
    rr_autocorrelation: float = Field(0.7, ge=0, lt=1)
    beat_amplitude_std: float = Field(0.05, ge=0, description="Variación latido a latido de la amplitud")
    systolic_width_s: float = Field(0.08, gt=0)
    dicrotic_width_s: float = Field(0.12, gt=0)
    dicrotic_delay_s: float = Field(0.30, gt=0, description="Separación sistólica → dicrótica (s)")
    dicrotic_ratio: float = Field(0.4, ge=0, le=1)
    rng_seed: int = 0


class SiteParams(BaseModel):
    """Cómo un dispositivo concreto ve el pulso del sujeto"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    device_id: str = Field(min_length=1)
    device_kind: DeviceKind = DeviceKind.WEARABLE
    rate: float = Field(50.0, gt=0)
    n_channels: int = Field(1, ge=1)
    transit_delay_s: float = Field(0.1, ge=0)
    amplitude: float = Field(1.0, gt=0)
    morphology_jitter: float = Field(0.05, ge=0, description="Perturbación relativa de anchos de onda")
    noise_sigma: float = Field(0.25, ge=0, description="std del ruido en banda / std del pulso en banda")
    noise_floor: float = Field(0.02, ge=0, description="Ruido blanco de banda ancha relativo al pulso")
    channel_noise_step: float = Field(0.0, ge=0, description="Incremento relativo de ruido por canal")
    wander_amplitude: float = Field(0.3, ge=0)
    wander_hz: float = Field(0.2, gt=0)
    clock_offset_ms: Optional[float] = Field(None, ge=0, description="Desfase de arranque; None = aleatorio 0-40 ms")
    timestamp_jitter_ms: float = Field(1.0, ge=0)
    invert: bool = False


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    """Trazas crudas generadas y los parámetros que las produjeron"""
    traces: List[PpgTrace]
    subjects: Dict[str, SubjectParams]
    sites: List[SiteParams]
    master_seed: int
    postures: List[str] = field(default_factory=lambda: ["sitting"])

    @property
    def subject_ids(self) -> List[str]:
        return sorted(self.subjects)

    @property
    def device_ids(self) -> List[str]:
        return [site.device_id for site in self.sites]

    def validate(self) -> None:
        tokens = [s.device_id for s in self.sites if s.device_kind == DeviceKind.TOKEN]
        if len(tokens) != 1:
            raise ValueError(f"Synthetic corpus needs exactly one token device, got {tokens}")
        expected = len(self.subjects) * len(self.sites) * len(self.postures)
        if len(self.traces) != expected:
            raise ValueError(f"Expected {expected} traces, got {len(self.traces)}")

    def manifest(self) -> Dict[str, object]:
        """Semillas y parámetros de cada sujeto para el manifiesto del corpus"""
        return {
            "master_seed": self.master_seed,
            "postures": list(self.postures),
            "sites": [s.model_dump(mode="json") for s in self.sites],
            "subjects": {k: v.model_dump(mode="json") for k, v in sorted(self.subjects.items())},
        }
