#!/usr/bin/env python3
"""
Jerarquía de excepciones del pipeline de autenticación entre dispositivos.

Dos familias: ``ValidationFailure`` (entrada o parámetros inválidos, código de
salida 1 en la CLI) y ``DataIOError`` (archivos ilegibles o corruptos, código 2).
"""


class CrossPulseError(Exception):
    """Raíz de todas las excepciones propias del sistema"""
    pass


class ValidationFailure(CrossPulseError):
    """Entrada o configuración que viola una precondición"""
    pass


class DataIOError(CrossPulseError):
    """Problemas de lectura/escritura de archivos"""
    pass


# ==================== SEÑAL ====================

class EmptyInputError(ValidationFailure):
    pass


class NonMonotonicTimestampsError(ValidationFailure):
    pass


class ChannelLengthMismatchError(ValidationFailure):
    pass


class DegenerateSpanError(ValidationFailure):
    pass


class BandOutOfRangeError(ValidationFailure):
    pass


class TraceTooShortError(ValidationFailure):
    pass


class FlatSignalError(ValidationFailure):
    pass


# ==================== CALIDAD ====================

class AllChannelsInvalidError(ValidationFailure):
    pass


class NoBeatsError(ValidationFailure):
    pass


# ==================== CARACTERÍSTICAS ====================

class SegmentTooShortError(ValidationFailure):
    pass


class DegenerateSpectrumError(ValidationFailure):
    pass


class GridMismatchError(ValidationFailure):
    pass


# ==================== DATASET ====================

class NoTokenDeviceError(ValidationFailure):
    pass


class NoPositivePairsError(ValidationFailure):
    pass


class TooFewSubjectsError(ValidationFailure):
    pass


class OffsetExceedsRecordingWarning(UserWarning):
    """Conjunto de pares de repetición vacío: el desfase supera la grabación"""
    pass


# ==================== MODELO / EVALUACIÓN ====================

class SingleClassInputError(ValidationFailure):
    pass


class NonFiniteFeatureError(ValidationFailure):
    pass


class DurationTooShortError(ValidationFailure):
    pass


class CorruptModelFileError(DataIOError):
    pass


class VersionMismatchError(DataIOError):
    pass


class FeatureOrderMismatchError(CorruptModelFileError):
    """El orden de columnas del archivo no coincide con el esperado"""
    pass


# ==================== SÍNTESIS / STREAMING ====================

class InvalidParamsError(ValidationFailure):
    pass


class WindowOutOfRangeError(ValidationFailure):
    pass


class InsufficientOverlapError(ValidationFailure):
    pass
