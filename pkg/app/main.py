#!/usr/bin/env python3
"""
CrossPulse - servicio HTTP de verificación entre dispositivos.

Expone el verificador entrenado (``MODEL_PATH``) para pares de ventanas PPG
token/wearable y el triaje de calidad de una ventana multicanal.
"""
import logging
from pathlib import Path
from typing import Optional

import uvicorn
from fastapi import Depends, FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api.dependencies import verify_api_key
from app.api.endpoints import verification
from app.config.settings import Settings, get_settings
from app.utils.helpers import configure_logging

logger = logging.getLogger(__name__)


def create_app(settings: Optional[Settings] = None) -> FastAPI:
    settings = settings or get_settings()
    configure_logging(settings.LOG_LEVEL, settings.LOG_FILE or None)

    app = FastAPI(
        title=settings.PROJECT_NAME,
        description=settings.PROJECT_DESCRIPTION,
        version=settings.PROJECT_VERSION,
        docs_url="/docs",
        redoc_url="/redoc",
    )

    # Configurar CORS
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    app.include_router(verification.router, tags=["verification"], dependencies=[Depends(verify_api_key)])

    @app.get("/health", summary="Estado del servicio")
    def health(current: Settings = Depends(get_settings)):
        return {
            "status": "ok",
            "version": current.PROJECT_VERSION,
            "model_path": current.MODEL_PATH,
            "model_available": Path(current.MODEL_PATH).is_file(),
        }

    logger.info(f"{settings.PROJECT_NAME} {settings.PROJECT_VERSION} ready (model {settings.MODEL_PATH})")
    return app


app = create_app()


if __name__ == "__main__":
    current = get_settings()
    uvicorn.run("app.main:app", host=current.HOST, port=current.PORT, log_level=current.LOG_LEVEL.lower())
