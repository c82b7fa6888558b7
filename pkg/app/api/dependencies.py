# app/api/dependencies.py

import logging
from functools import lru_cache
from typing import Optional

from fastapi import Depends, HTTPException, status
from fastapi.security import HTTPAuthorizationCredentials, HTTPBearer

from app.config.settings import Settings, get_settings
from app.core.exceptions import DataIOError
from app.core.gbdt import load_model
from app.models.gbdt import GbdtModel

logger = logging.getLogger(__name__)

# ==================== DEPENDENCIAS ====================

bearer_scheme = HTTPBearer(auto_error=False)


def verify_api_key(credentials: Optional[HTTPAuthorizationCredentials] = Depends(bearer_scheme),
                   settings: Settings = Depends(get_settings)) -> None:
    """
    Exige ``Authorization: Bearer <API_KEY>`` cuando ``API_KEY`` está
    configurada; sin clave el servicio es abierto.
    """
    if not settings.API_KEY:
        return
    if credentials is None or credentials.scheme.lower() != "bearer":
        raise HTTPException(status_code=status.HTTP_401_UNAUTHORIZED, detail="Bearer authentication required")
    if credentials.credentials != settings.API_KEY:
        raise HTTPException(status_code=status.HTTP_401_UNAUTHORIZED, detail="Invalid API key")


@lru_cache(maxsize=4)
def _cached_model(path: str) -> GbdtModel:
    return load_model(path)


def get_model(settings: Settings = Depends(get_settings)) -> GbdtModel:
    """Modelo servido, leído una vez desde ``MODEL_PATH``"""
    try:
        return _cached_model(settings.MODEL_PATH)
    except (DataIOError, OSError) as exc:
        logger.error(f"Cannot load model from {settings.MODEL_PATH}: {exc}")
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail=f"Model not available at {settings.MODEL_PATH}",
        )
