#!/usr/bin/env python3
"""
Configuración del pipeline: preprocesado, calidad, pares, GBDT, latencia.

Cada sección es un modelo pydantic con valores por defecto que reproducen la
configuración de referencia. ``RunConfig`` agrupa todas las secciones y se carga
desde JSON con ``--config``.
"""
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PreprocessConfig(BaseModel):
    """Normalización de señales entre dispositivos heterogéneos"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    band_lo_hz: float = Field(0.5, gt=0, description="Corte inferior del pasabanda (Hz)")
    band_hi_hz: float = Field(2.0, gt=0, description="Corte superior del pasabanda (Hz)")
    filter_order: int = Field(4, ge=1, le=10, description="Orden Butterworth (aplicado ida y vuelta)")
    target_rate: float = Field(60.0, gt=0, description="Frecuencia de remuestreo (Hz)")
    window_ma_s: float = Field(12.0, gt=0, description="Ventana de triaje de artefactos (s)")
    window_feat_s: float = Field(6.0, gt=0, description="Ventana de características (s)")
    train_hop_s: float = Field(4.0, gt=0, description="Salto de ventanas de entrenamiento (s)")
    test_hop_s: float = Field(6.0, gt=0, description="Salto de ventanas de prueba (s)")
    savgol_order: int = Field(3, ge=0)
    savgol_window_samples: int = Field(11, ge=1)
    detrend_window_s: float = Field(1.5, gt=0, description="Media deslizante para eliminar la componente DC (s)")

    @model_validator(mode="after")
    def validate_band(self) -> "PreprocessConfig":
        if not 0 < self.band_lo_hz < self.band_hi_hz < self.target_rate / 2:
            raise ValueError(
                f"Band [{self.band_lo_hz}, {self.band_hi_hz}] Hz must satisfy 0 < lo < hi < {self.target_rate / 2}"
            )
        if self.savgol_window_samples % 2 == 0 or self.savgol_window_samples <= self.savgol_order:
            raise ValueError("savgol_window_samples must be odd and greater than savgol_order")
        return self


class QualityConfig(BaseModel):
    """Pesos de la puntuación de canal y umbrales de triaje"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_s: float = Field(0.1, ge=0, le=1)
    lambda_k: float = Field(0.1, ge=0, le=1)
    lambda_r: float = Field(0.4, ge=0, le=1)
    lambda_t: float = Field(0.4, ge=0, le=1)
    skew_lo: float = -0.5
    skew_hi: float = 0.8
    kurt_max: float = 0.7
    clean_r_min: float = Field(0.4, ge=0, le=1)
    clean_t_min: float = Field(0.95, ge=-1, le=1)
    rr_min_s: float = Field(0.6, gt=0)
    rr_max_s: float = Field(1.25, gt=0)
    rr_cv_max: float = Field(0.2, ge=0)
    beat_template_corr_min: float = Field(0.8, ge=-1, le=1)
    peak_height_fraction: float = Field(0.3, ge=0, description="Fracción de la amplitud robusta para picos")
    peak_halfwidth_hz: float = Field(0.15, gt=0, description="Semiancho alrededor del pico dominante para R")
    template_length: int = Field(64, ge=8)
    mitigation_rr_fraction: float = Field(0.25, gt=0)

    @model_validator(mode="after")
    def validate_weights(self) -> "QualityConfig":
        total = self.lambda_s + self.lambda_k + self.lambda_r + self.lambda_t
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Quality weights must sum to 1, got {total}")
        if self.skew_lo > self.skew_hi:
            raise ValueError("skew_lo must not exceed skew_hi")
        if self.rr_min_s >= self.rr_max_s:
            raise ValueError("rr_min_s must be below rr_max_s")
        return self


class PairPolicy(BaseModel):
    """Reglas de emparejamiento token × wearable"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    sync_tolerance_ms: float = Field(250.0, ge=0, description="Tolerancia de sincronía para positivos (ms)")
    token_device: Optional[str] = Field(None, description="Dispositivo token; por defecto el etiquetado como token")
    wearables: Optional[List[str]] = Field(None, description="Subconjunto de wearables; por defecto todos")
    balance: bool = True
    negative_ratio: float = Field(1.0, gt=0, description="Negativos por positivo al balancear")
    train_overlap_s: float = Field(2.0, ge=0)
    rng_seed: int = 0


class GbdtConfig(BaseModel):
    """Hiperparámetros del verificador de árboles potenciados"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_trees: int = Field(100, ge=0)
    max_depth: int = Field(6, ge=1, le=16)
    learning_rate: float = Field(0.1, gt=0, le=1)
    loss: Literal["logistic"] = "logistic"
    l2_leaf_reg: float = Field(1.0, ge=0)
    min_samples_leaf: int = Field(1, ge=1)
    min_child_weight: float = Field(0.0, ge=0)
    split_search: Literal["exact"] = "exact"


class LatencyModel(BaseModel):
    """Modelo de transporte de la sesión en tiempo real"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    fixed_delay_ms: float = Field(0.0, ge=0)
    jitter_ms: float = Field(0.0, ge=0, description="Semiancho de la distribución uniforme")
    drop_prob: float = Field(0.0, ge=0, lt=1)
    compute_ms: float = Field(10.0, ge=0, description="Tiempo de cómputo simulado por decisión")
    chunk_s: float = Field(0.5, gt=0, description="Duración de cada paquete transmitido")
    seed: int = 0


class EvaluationConfig(BaseModel):
    """Protocolo LOSO y barridos"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    threshold_mode: Literal["oracle", "calibrated"] = "oracle"
    replay_offsets_s: List[float] = Field(default_factory=lambda: [0.0, 5.0, 15.0, 30.0, 60.0])
    durations_s: List[float] = Field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0])
    ablation_folds: int = Field(5, ge=2)
    replay_hop_s: float = Field(1.0, gt=0, description="Salto del corpus denso para pares de repetición")
    pool_negative_ratio: float = Field(1.25, ge=1.0, description="Sobremuestreo del pool de negativos LOSO")
    k_of_n: Optional[List[int]] = Field(None, description="Agregación k-de-n en sesiones [k, n]")


class SynthConfig(BaseModel):
    """Generación del corpus sintético"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_subjects: int = Field(20, ge=2)
    devices: Union[int, List[str]] = 2
    duration_s: float = Field(600.0, ge=30)
    postures: List[str] = Field(default_factory=lambda: ["sitting"])


class RunConfig(BaseModel):
    """Configuración completa de una ejecución de la CLI"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    quality: QualityConfig = Field(default_factory=QualityConfig)
    pairs: PairPolicy = Field(default_factory=PairPolicy)
    gbdt: GbdtConfig = Field(default_factory=GbdtConfig)
    latency: LatencyModel = Field(default_factory=LatencyModel)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    seed: int = 0
    workers: int = Field(1, ge=1)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Carga un overlay JSON; las claves ausentes conservan su valor por defecto"""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
