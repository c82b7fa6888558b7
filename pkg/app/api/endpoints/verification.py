# app/api/endpoints/verification.py

import logging
from typing import Dict, List, Optional

import numpy as np
from fastapi import APIRouter, Depends, HTTPException, status
from pydantic import BaseModel, Field

from app.api.dependencies import get_model
from app.config.pipeline import PreprocessConfig, QualityConfig
from app.core.exceptions import AllChannelsInvalidError, CrossPulseError, NoBeatsError
from app.core.features import extract_pair_features
from app.core.gbdt import predict_score
from app.core.quality import best_channel_index, classify_artifact, detect_beats, score_channels
from app.core.signal_core import bandpass, detrend_dc, resample_uniform, segment_windows, standardize_smooth
from app.models.features import FEATURE_NAMES
from app.models.gbdt import GbdtModel
from app.models.quality import ArtifactClass
from app.models.signal import DeviceKind, PpgTrace, Segment

logger = logging.getLogger(__name__)

router = APIRouter()

PREPROCESS = PreprocessConfig()
QUALITY = QualityConfig()


# ==================== MODELOS DE PETICIÓN / RESPUESTA ====================

class SignalWindow(BaseModel):
    """Ventana monocanal tal como la entrega el dispositivo"""
    samples: List[float] = Field(min_length=2)
    rate: float = Field(gt=0, description="Frecuencia de muestreo (Hz)")


class PairRequest(BaseModel):
    token: SignalWindow
    wearable: SignalWindow


class PairResponse(BaseModel):
    score: float
    accept: bool
    threshold: float
    features: Dict[str, float]


class QualityRequest(BaseModel):
    channels: List[List[float]] = Field(min_length=1)
    rate: float = Field(gt=0)


class ChannelQuality(BaseModel):
    channel: int
    S: float
    K: float
    R: float
    T: float
    score: float


class QualityResponse(BaseModel):
    channels: List[Optional[ChannelQuality]]
    selected_channel: Optional[int] = None
    artifact_class: ArtifactClass


# ==================== PREPARACIÓN DE SEÑALES ====================

def _trace(channels: List[List[float]], rate: float, device_id: str, kind: DeviceKind) -> PpgTrace:
    try:
        values = np.asarray(channels, dtype=float)
    except ValueError:
        values = np.empty(0)
    if values.ndim != 2 or not np.all(np.isfinite(values)):
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                            detail="Channels must be equal-length lists of finite numbers")
    timestamps = np.arange(values.shape[1]) * 1000.0 / rate
    return PpgTrace(subject_id="request", device_id=device_id, device_kind=kind, channels=values,
                    timestamps=timestamps, nominal_rate=rate)


def _filtered(trace: PpgTrace) -> PpgTrace:
    resampled = resample_uniform(trace, PREPROCESS.target_rate)
    filtered = bandpass(resampled, PREPROCESS.band_lo_hz, PREPROCESS.band_hi_hz, PREPROCESS.filter_order)
    return detrend_dc(filtered, PREPROCESS.detrend_window_s)


def _feature_window(window: SignalWindow, device_id: str, kind: DeviceKind) -> Segment:
    """Primera ventana de características, estandarizada"""
    trace = _filtered(_trace([window.samples], window.rate, device_id, kind))
    segment = segment_windows(trace, PREPROCESS.window_feat_s, PREPROCESS.window_feat_s)[0]
    return standardize_smooth(segment, PREPROCESS.savgol_order, PREPROCESS.savgol_window_samples)


# ==================== ENDPOINTS ====================

@router.post("/verification/pair", response_model=PairResponse, summary="Verificar un par token/wearable")
def verify_pair(request: PairRequest, model: GbdtModel = Depends(get_model)) -> PairResponse:
    """
    Puntúa si las dos ventanas proceden de la misma persona al mismo tiempo.
    Cada señal debe cubrir al menos una ventana de características (6 s).
    """
    try:
        token = _feature_window(request.token, "token", DeviceKind.TOKEN)
        wearable = _feature_window(request.wearable, "wearable", DeviceKind.WEARABLE)
        vector = extract_pair_features(token, wearable)
    except (CrossPulseError, ValueError) as exc:
        logger.warning(f"Pair verification rejected: {exc}")
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))

    score = predict_score(model, vector)
    return PairResponse(
        score=score,
        accept=score >= model.threshold,
        threshold=model.threshold,
        features={name: float(v) for name, v in zip(FEATURE_NAMES, vector.values)},
    )


@router.post("/quality/window", response_model=QualityResponse, summary="Triaje de calidad de una ventana")
def quality_window(request: QualityRequest) -> QualityResponse:
    """Métricas por canal, canal seleccionado y clase de artefacto"""
    try:
        trace = _filtered(_trace(request.channels, request.rate, "window", DeviceKind.WEARABLE))
    except (CrossPulseError, ValueError) as exc:
        logger.warning(f"Quality window rejected: {exc}")
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))

    rate = PREPROCESS.target_rate
    scored = score_channels(list(trace.channels), rate, QUALITY)
    channels = [
        None if s is None else ChannelQuality(
            channel=i, S=s[0].skewness, K=s[0].kurtosis, R=s[0].relative_power, T=s[0].template_match, score=s[1]
        )
        for i, s in enumerate(scored)
    ]
    try:
        index = best_channel_index([s[1] if s is not None else None for s in scored])
    except AllChannelsInvalidError:
        return QualityResponse(channels=channels, artifact_class=ArtifactClass.HEAVY)

    try:
        beats = detect_beats(trace.channels[index], rate, QUALITY)
    except NoBeatsError:
        beats = None
    artifact = classify_artifact(scored[index][0], beats, QUALITY)
    return QualityResponse(channels=channels, selected_channel=index, artifact_class=artifact)
