#!/usr/bin/env python3
"""
Manifiesto de ejecución: lo necesario para reproducir exactamente una salida.
"""
from typing import Any, Dict, List

from pydantic import BaseModel, Field

MANIFEST_VERSION = 1


class RunManifest(BaseModel):
    """Comando, configuración efectiva, semillas y hashes de entrada (sin hora de reloj)"""
    version: int = MANIFEST_VERSION
    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict, description="ruta → sha256")
    outputs: List[str] = Field(default_factory=list)
    extra: Dict[str, Any] = Field(default_factory=dict)
