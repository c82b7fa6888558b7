#!/usr/bin/env python3
"""
Configuración del servicio de verificación (variables de entorno / .env).

La CLI no lee estas variables: sus ejecuciones dependen solo de flags explícitos.
"""
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Parámetros del servicio HTTP"""
    model_config = SettingsConfigDict(
        env_file='.env',
        extra='ignore'  # Ignora claves no declaradas en el modelo
    )

    # Información del proyecto
    PROJECT_NAME: str = "CrossPulse"
    PROJECT_VERSION: str = "0.1.0"
    PROJECT_DESCRIPTION: str = "Autenticación entre dispositivos mediante señales PPG emparejadas"

    # Configuración del servidor
    HOST: str = "0.0.0.0"
    PORT: int = 8000

    # Modelo entrenado servido por la API
    MODEL_PATH: str = "./data/model.json"

    # Clave opcional (Bearer); vacía = servicio abierto
    API_KEY: str = ""

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = ""


@lru_cache()
def get_settings() -> Settings:
    """
    Instancia de Settings en caché.
    Evita releer el archivo .env en cada petición.
    """
    return Settings()
