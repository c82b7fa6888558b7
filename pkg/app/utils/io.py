# app/utils/io.py
"""
Formatos de archivo del proyecto.

- Traza CSV (``t_ms,ch0[,ch1,...]``) con sidecar ``<nombre>.meta.json``.
- Almacén de trazas procesadas: ``.npz`` con la señal de 60 Hz más un JSON con
  el informe de calidad por ventana.
- CSV de características (``subject_a,...,label,f01..f21``).
- Manifiesto JSON de pares, log NDJSON de sesiones y manifiesto de ejecución.

Todas las escrituras son deterministas: mismo contenido, mismos bytes.
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.dataset import pairset_from_manifest, pairset_to_manifest
from app.core.exceptions import DataIOError
from app.core.signal_core import ingest_trace
from app.models.dataset import PairManifest, PairSet, SegmentPair
from app.models.features import FEATURE_COLUMNS, FEATURE_NAMES, FeatureTable
from app.models.manifest import RunManifest
from app.models.quality import WindowQuality
from app.models.session import SessionDecision
from app.models.signal import DeviceKind, ProcessedTrace, PpgTrace, SegmentRef, TraceMeta
from app.utils.helpers import dump_json, sha256_file

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PAIR_COLUMNS = ["subject_a", "device_a", "t_a", "subject_b", "device_b", "t_b", "label"]
META_SUFFIX = ".meta.json"
QUALITY_SUFFIX = ".quality.json"


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise DataIOError(f"Cannot read JSON file {path}: {exc}") from exc


def meta_path_for(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + META_SUFFIX)


def trace_file_name(subject_id: str, device_id: str, posture: Optional[str] = None) -> str:
    return f"{subject_id}_{device_id}_{posture}" if posture else f"{subject_id}_{device_id}"


# ==================== TRAZAS CSV ====================

def read_trace_csv(path: PathLike, meta_path: Optional[PathLike] = None) -> PpgTrace:
    """
    Lee una traza CSV y su sidecar de metadatos.

    Raises:
        FileNotFoundError: falta el CSV o el sidecar.
        DataIOError: cabecera o contenido no válidos.
    """
    path = Path(path)
    meta_path = Path(meta_path) if meta_path is not None else meta_path_for(path)
    try:
        meta = TraceMeta.model_validate(_read_json(meta_path))
    except ValidationError as exc:
        raise DataIOError(f"Invalid trace metadata in {meta_path}: {exc}") from exc

    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise DataIOError(f"Cannot parse trace CSV {path}: {exc}") from exc

    columns = list(frame.columns)
    expected = ["t_ms"] + [f"ch{i}" for i in range(len(columns) - 1)]
    if len(columns) < 2 or columns != expected:
        raise DataIOError(f"Trace CSV {path} has header {columns}, expected t_ms,ch0[,ch1,...]")
    if frame.isna().to_numpy().any():
        raise DataIOError(f"Trace CSV {path} contains empty or non-numeric cells")

    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as exc:
        raise DataIOError(f"Trace CSV {path} holds non-numeric values: {exc}") from exc
    rows = [(row[0], row[1:]) for row in values]
    trace = ingest_trace(rows, meta)
    logger.debug(f"Read {trace.subject_id}/{trace.device_id}: {trace.n_channels} channels, {trace.n_samples} samples")
    return trace


def write_trace_csv(trace: PpgTrace, path: PathLike) -> Path:
    """
    Escribe la traza y su sidecar. Una traza con polaridad invertida se guarda
    tal como la entregó el sensor (canales negados, ``invert: true``).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    channels = -trace.channels if trace.polarity_inverted else trace.channels
    frame = pd.DataFrame(channels.T, columns=[f"ch{i}" for i in range(trace.n_channels)])
    frame.insert(0, "t_ms", trace.timestamps)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")

    meta = TraceMeta(
        subject_id=trace.subject_id,
        device_id=trace.device_id,
        device_kind=trace.device_kind,
        invert=trace.polarity_inverted,
        nominal_rate=trace.nominal_rate,
        tags=dict(trace.tags),
    )
    dump_json(meta.model_dump(mode="json"), meta_path_for(path))
    return path


def write_trace_dir(traces: Iterable[PpgTrace], directory: PathLike) -> List[Path]:
    directory = Path(directory)
    written = []
    for trace in traces:
        name = trace_file_name(trace.subject_id, trace.device_id, trace.tags.get("posture"))
        written.append(write_trace_csv(trace, directory / f"{name}.csv"))
    logger.info(f"Wrote {len(written)} traces to {directory}")
    return written


def read_trace_dir(directory: PathLike) -> List[PpgTrace]:
    """Todas las trazas ``*.csv`` de un directorio, en orden de nombre"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Trace directory not found: {directory}")
    paths = sorted(p for p in directory.glob("*.csv") if meta_path_for(p).exists())
    if not paths:
        raise DataIOError(f"No trace CSV files with metadata sidecars in {directory}")
    traces = [read_trace_csv(p) for p in paths]
    logger.info(f"Read {len(traces)} traces from {directory}")
    return traces


# ==================== TRAZAS PROCESADAS ====================

def write_processed(trace: ProcessedTrace, directory: PathLike) -> Path:
    """Señal procesada en ``.npz`` y metadatos + informe de calidad en JSON"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = trace_file_name(trace.subject_id, trace.device_id, trace.tags.get("posture"))
    path = directory / f"{name}.npz"
    with open(path, "wb") as fh:
        np.savez(fh, samples=trace.samples, t0_ms=np.float64(trace.t0_ms), rate=np.float64(trace.rate))
    dump_json({
        "subject_id": trace.subject_id,
        "device_id": trace.device_id,
        "device_kind": trace.device_kind.value,
        "tags": dict(trace.tags),
        "windows": [w.model_dump(mode="json", by_alias=True) for w in trace.windows],
    }, directory / f"{name}{QUALITY_SUFFIX}")
    return path


def read_processed(path: PathLike) -> ProcessedTrace:
    path = Path(path)
    meta = _read_json(path.with_name(path.stem + QUALITY_SUFFIX))
    try:
        with np.load(path) as data:
            samples, t0_ms, rate = data["samples"], float(data["t0_ms"]), float(data["rate"])
    except FileNotFoundError:
        raise
    except (OSError, KeyError, ValueError) as exc:
        raise DataIOError(f"Corrupt processed trace {path}: {exc}") from exc
    try:
        windows = [WindowQuality.model_validate(w) for w in meta.get("windows", [])]
        return ProcessedTrace(
            subject_id=meta["subject_id"],
            device_id=meta["device_id"],
            device_kind=DeviceKind(meta["device_kind"]),
            rate=rate,
            t0_ms=t0_ms,
            samples=samples,
            tags=dict(meta.get("tags", {})),
            windows=windows,
        )
    except (KeyError, ValueError, ValidationError) as exc:
        raise DataIOError(f"Invalid processed-trace metadata for {path}: {exc}") from exc


def write_processed_dir(traces: Iterable[ProcessedTrace], directory: PathLike) -> List[Path]:
    written = [write_processed(trace, directory) for trace in traces]
    logger.info(f"Wrote {len(written)} processed traces to {directory}")
    return written


def read_processed_dir(directory: PathLike) -> List[ProcessedTrace]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Processed-trace directory not found: {directory}")
    paths = sorted(directory.glob("*.npz"))
    if not paths:
        raise DataIOError(f"No processed traces (*.npz) in {directory}")
    return [read_processed(p) for p in paths]


# ==================== CARACTERÍSTICAS ====================

def write_feature_csv(table: FeatureTable, path: PathLike) -> Path:
    """
    CSV de características. Con las 21 columnas estándar la cabecera usa
    ``f01..f21``; una tabla ablacionada conserva los nombres descriptivos.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(table.feature_names)
    columns = FEATURE_COLUMNS if names == FEATURE_NAMES else names
    refs = pd.DataFrame(
        [(p.a.subject_id, p.a.device_id, p.a.start_ms, p.b.subject_id, p.b.device_id, p.b.start_ms, p.label)
         for p in table.pairs],
        columns=PAIR_COLUMNS,
    )
    values = pd.DataFrame(table.values.reshape(len(table), len(names)), columns=columns)
    pd.concat([refs, values], axis=1).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info(f"Wrote {len(table)} feature rows to {path}")
    return path


def read_feature_csv(path: PathLike) -> FeatureTable:
    path = Path(path)
    try:
        text_columns = {c: str for c in ("subject_a", "device_a", "subject_b", "device_b")}
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip", dtype=text_columns)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise DataIOError(f"Cannot parse feature CSV {path}: {exc}") from exc

    if list(frame.columns[:len(PAIR_COLUMNS)]) != PAIR_COLUMNS:
        raise DataIOError(f"Feature CSV {path} must start with columns {PAIR_COLUMNS}")
    columns = list(frame.columns[len(PAIR_COLUMNS):])
    if not columns:
        raise DataIOError(f"Feature CSV {path} has no feature columns")
    names = FEATURE_NAMES if columns == FEATURE_COLUMNS else columns

    try:
        values = frame[columns].to_numpy(dtype=float)
        pairs = tuple(
            SegmentPair(SegmentRef(str(r.subject_a), str(r.device_a), int(r.t_a)),
                        SegmentRef(str(r.subject_b), str(r.device_b), int(r.t_b)),
                        int(r.label))
            for r in frame[PAIR_COLUMNS].itertuples(index=False)
        )
    except (TypeError, ValueError) as exc:
        raise DataIOError(f"Feature CSV {path} holds non-numeric values: {exc}") from exc
    return FeatureTable(values=values, pairs=pairs, feature_names=tuple(names))


# ==================== PARES ====================

def write_pair_manifest(pairset: PairSet, path: PathLike) -> Path:
    path = Path(path)
    return dump_json(pairset_to_manifest(pairset).model_dump(mode="json"), path)


def read_pair_manifest(path: PathLike) -> PairSet:
    path = Path(path)
    try:
        manifest = PairManifest.model_validate(_read_json(path))
    except ValidationError as exc:
        raise DataIOError(f"Invalid pair manifest {path}: {exc}") from exc
    return pairset_from_manifest(manifest)


# ==================== SESIONES ====================

def write_sessions_ndjson(decisions: Sequence[SessionDecision], path: PathLike) -> Path:
    """Una decisión por línea, claves ordenadas"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(d.model_dump(mode="json"), sort_keys=True) for d in decisions]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    logger.info(f"Wrote {len(lines)} session decisions to {path}")
    return path


def read_sessions_ndjson(path: PathLike) -> List[SessionDecision]:
    path = Path(path)
    decisions = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                decisions.append(SessionDecision.model_validate_json(line))
            except ValidationError as exc:
                raise DataIOError(f"Invalid session record at {path}:{number}: {exc}") from exc
    return decisions


# ==================== MANIFIESTO DE EJECUCIÓN ====================

def hash_inputs(paths: Iterable[PathLike]) -> dict:
    """sha256 de cada archivo de entrada (los directorios se recorren en orden)"""
    hashes = {}
    for entry in paths:
        entry = Path(entry)
        if entry.is_dir():
            files = sorted(p for p in entry.rglob("*") if p.is_file())
        else:
            files = [entry]
        for file in files:
            hashes[file.as_posix()] = sha256_file(file)
    return hashes


def write_run_manifest(manifest: RunManifest, directory: PathLike) -> Path:
    path = Path(directory) / "manifest.json"
    dump_json(manifest.model_dump(mode="json"), path)
    logger.debug(f"Run manifest written to {path}")
    return path
