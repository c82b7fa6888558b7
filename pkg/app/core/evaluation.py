#!/usr/bin/env python3
"""
Métricas de verificación (BAC, AUC, EER), promedio ponderado por sujeto y
barridos de evaluación.

Los barridos reciben funciones que ejecutan cada celda (re-entrenar, re-evaluar)
para que este módulo no dependa de cómo se orquesta el pipeline.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import auc, roc_curve
from sklearn.model_selection import GroupKFold

from app.config.pipeline import GbdtConfig
from app.core.exceptions import DurationTooShortError, InvalidParamsError, SingleClassInputError
from app.core.gbdt import bac_at_thresholds, predict_scores, select_threshold, train_gbdt
from app.models.evaluation import EvalReport, MetricSet, SubjectMetrics

logger = logging.getLogger(__name__)

MIN_DURATION_S = 3.0
Row = Dict[str, Any]


# ==================== MÉTRICAS ====================

def _check_classes(labels: np.ndarray) -> None:
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0 or n_pos == labels.shape[0]:
        raise SingleClassInputError(f"Metrics need both classes, got {n_pos} positives of {labels.shape[0]}")


def equal_error_rate(fpr: np.ndarray, tpr: np.ndarray) -> float:
    """EER por interpolación lineal en el primer punto ROC con FRR ≤ FAR"""
    d = (1.0 - tpr) - fpr
    i = int(np.argmax(d <= 0))
    if i == 0:
        return float(fpr[0])
    frac = d[i - 1] / (d[i - 1] - d[i])
    return float(fpr[i - 1] + frac * (fpr[i] - fpr[i - 1]))


def compute_metrics(scores: Sequence[float], labels: Sequence[int], threshold: Optional[float] = None) -> MetricSet:
    """
    BAC en el umbral dado (o en el que maximiza BAC), AUC trapezoidal y EER.

    Raises:
        SingleClassInputError: falta alguna de las dos clases.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_classes(labels)
    if threshold is None:
        threshold = select_threshold(scores, labels)
    fpr, tpr, _ = roc_curve(labels, scores, pos_label=1, drop_intermediate=False)
    bac = float(bac_at_thresholds(scores, labels, [threshold])[0])
    return MetricSet(
        bac=bac,
        auc=float(np.clip(auc(fpr, tpr), 0.0, 1.0)),
        eer=float(np.clip(equal_error_rate(fpr, tpr), 0.0, 1.0)),
        threshold=float(threshold),
    )


def weighted_subject_average(per_subject: Mapping[str, SubjectMetrics]) -> MetricSet:
    """Σ wᵢ·mᵢ con wᵢ proporcional al número de pares de prueba del sujeto"""
    if not per_subject:
        raise InvalidParamsError("Weighted average needs at least one subject")
    metrics = list(per_subject.values())
    weights = np.array([m.n_pairs for m in metrics], dtype=float)
    weights = weights / weights.sum()
    return MetricSet(
        bac=float(np.clip(np.dot(weights, [m.bac for m in metrics]), 0.0, 1.0)),
        auc=float(np.clip(np.dot(weights, [m.auc for m in metrics]), 0.0, 1.0)),
        eer=float(np.clip(np.dot(weights, [m.eer for m in metrics]), 0.0, 1.0)),
    )


# ==================== EVALUACIÓN LOSO ====================

@dataclass(frozen=True, eq=False)
class SplitScores:
    """Puntuaciones de prueba de una partición LOSO"""
    subject: str
    scores: np.ndarray
    labels: np.ndarray
    devices: np.ndarray
    calibrated_threshold: Optional[float] = None

    def threshold(self, mode: str) -> Optional[float]:
        if mode == "calibrated":
            if self.calibrated_threshold is None:
                raise InvalidParamsError(f"Split {self.subject} has no calibrated threshold")
            return self.calibrated_threshold
        return None


def evaluate_loso(splits: Sequence[SplitScores], threshold_mode: str = "oracle") -> EvalReport:
    """
    Métricas por sujeto, media ponderada, tabla por dispositivo y tasa de
    aceptación del ataque base (negativos aceptados en el umbral operativo).
    """
    per_subject: Dict[str, SubjectMetrics] = {}
    thresholds: Dict[str, float] = {}
    for split in splits:
        try:
            metrics = compute_metrics(split.scores, split.labels, split.threshold(threshold_mode))
        except SingleClassInputError as exc:
            logger.warning(f"Skipping subject {split.subject}: {exc}")
            continue
        per_subject[split.subject] = SubjectMetrics(**metrics.model_dump(), n_pairs=int(split.labels.shape[0]))
        thresholds[split.subject] = metrics.threshold
        logger.debug(f"Subject {split.subject}: BAC {metrics.bac:.3f} AUC {metrics.auc:.3f} EER {metrics.eer:.3f}")

    if not per_subject:
        raise SingleClassInputError("No split has both positive and negative test pairs")

    kept = [s for s in splits if s.subject in thresholds]
    scores = np.concatenate([s.scores for s in kept])
    labels = np.concatenate([s.labels for s in kept])
    devices = np.concatenate([s.devices for s in kept])
    accepted = np.concatenate([s.scores >= thresholds[s.subject] for s in kept])

    per_device: Dict[str, MetricSet] = {}
    for device in sorted(set(devices.tolist())):
        mask = devices == device
        y, a = labels[mask], accepted[mask]
        if y.min() == y.max():
            continue
        fpr, tpr, _ = roc_curve(y, scores[mask], pos_label=1, drop_intermediate=False)
        per_device[device] = MetricSet(
            bac=float(0.5 * (a[y == 1].mean() + (1 - a[y == 0]).mean())),
            auc=float(np.clip(auc(fpr, tpr), 0.0, 1.0)),
            eer=float(np.clip(equal_error_rate(fpr, tpr), 0.0, 1.0)),
        )

    report = EvalReport(
        per_subject=per_subject,
        weighted=weighted_subject_average(per_subject),
        threshold_mode=threshold_mode,
        per_device=per_device,
        baseline_attack_rate=baseline_attack_rate(kept, thresholds),
    )
    logger.info(
        f"LOSO over {len(per_subject)} subjects ({threshold_mode} thresholds): "
        f"BAC {report.weighted.bac:.3f}, AUC {report.weighted.auc:.3f}, EER {report.weighted.eer:.3f}"
    )
    return report


def baseline_attack_rate(splits: Sequence[SplitScores], thresholds: Mapping[str, float]) -> Optional[float]:
    """Fracción de negativos entre sujetos aceptados en el umbral operativo de su partición"""
    accepted = [
        split.scores[split.labels == 0] >= thresholds[split.subject]
        for split in splits if split.subject in thresholds
    ]
    accepted = np.concatenate(accepted) if accepted else np.array([], dtype=bool)
    return float(accepted.mean()) if accepted.size else None


# ==================== BARRIDOS ====================

def _metric_row(key: str, value: Any, metrics: MetricSet) -> Row:
    return {key: value, "bac": metrics.bac, "auc": metrics.auc, "eer": metrics.eer}


def replay_sweep(score_at_offset: Callable[[float], Sequence[SplitScores]], offsets: Sequence[float],
                 thresholds: Mapping[str, float]) -> List[Row]:
    """
    BAC ponderado por desfase de repetición.

    ``score_at_offset(offset)`` devuelve, por sujeto, las puntuaciones de los
    pares de repetición (positivos) junto con los negativos habituales. El
    umbral de cada sujeto se fija en su evaluación con desfase 0.
    """
    if 0.0 not in [float(o) for o in offsets]:
        raise InvalidParamsError(f"Replay offsets must include 0, got {list(offsets)}")
    rows = []
    for offset in offsets:
        per_subject: Dict[str, SubjectMetrics] = {}
        for split in score_at_offset(float(offset)):
            if split.subject not in thresholds:
                continue
            try:
                metrics = compute_metrics(split.scores, split.labels, thresholds[split.subject])
            except SingleClassInputError:
                continue
            per_subject[split.subject] = SubjectMetrics(**metrics.model_dump(), n_pairs=int(split.labels.shape[0]))
        if per_subject:
            weighted = weighted_subject_average(per_subject)
            rows.append({"offset_s": float(offset), "bac": weighted.bac, "n_subjects": len(per_subject)})
        else:
            logger.warning(f"No replay pairs at offset {offset} s")
            rows.append({"offset_s": float(offset), "bac": float("nan"), "n_subjects": 0})
        logger.info(f"Replay offset {offset} s: BAC {rows[-1]['bac']:.3f}")
    return rows


def duration_sweep(run_at_duration: Callable[[float], MetricSet], durations: Sequence[float]) -> List[Row]:
    """Re-ventanea, re-extrae, re-entrena y re-evalúa para cada duración"""
    short = [d for d in durations if d < MIN_DURATION_S]
    if short:
        raise DurationTooShortError(f"Window durations below {MIN_DURATION_S} s are not supported: {short}")
    return _sweep("duration_s", [float(d) for d in durations], run_at_duration)


def device_exclusion_sweep(run_excluding: Callable[[str], MetricSet], devices: Iterable[str]) -> List[Row]:
    return _sweep("excluded_device", list(devices), run_excluding)


def posture_sweep(run_postures: Callable[[str, str], MetricSet],
                  combinations: Iterable[Tuple[str, str]]) -> List[Row]:
    rows = []
    for train, test in combinations:
        metrics = run_postures(train, test)
        rows.append({"train_posture": train, "test_posture": test, "bac": metrics.bac,
                     "auc": metrics.auc, "eer": metrics.eer})
        logger.info(f"Posture {train} -> {test}: BAC {metrics.bac:.3f}")
    return rows


def token_device_sweep(run_with_token: Callable[[str], MetricSet], devices: Iterable[str]) -> List[Row]:
    return _sweep("token_device", list(devices), run_with_token)


def _sweep(key: str, values: Sequence[Any], run: Callable[[Any], MetricSet]) -> List[Row]:
    rows = []
    for value in values:
        metrics = run(value)
        rows.append(_metric_row(key, value, metrics))
        logger.info(f"Sweep {key}={value}: BAC {metrics.bac:.3f}, AUC {metrics.auc:.3f}")
    return rows


def _out_of_fold_bac(X: np.ndarray, y: np.ndarray, config: GbdtConfig,
                     folds: List[Tuple[np.ndarray, np.ndarray]]) -> float:
    scores = np.empty(y.shape[0])
    for train_idx, test_idx in folds:
        model = train_gbdt(X[train_idx], y[train_idx], config)
        scores[test_idx] = predict_scores(model, X[test_idx])
    return compute_metrics(scores, y).bac


def ablation_sweep(X: np.ndarray, y: Sequence[int], groups: Sequence[str], config: GbdtConfig,
                   feature_names: Sequence[str], n_folds: int = 5) -> List[Row]:
    """
    ΔBAC al retirar cada columna (BAC fuera de pliegue agrupado por sujeto) y
    ganancia total de cada característica en el modelo con todos los datos.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    groups = np.asarray(groups)
    n_groups = len(set(groups.tolist()))
    if n_groups < 2:
        raise InvalidParamsError(f"Ablation needs >= 2 subject groups, got {n_groups}")
    folds = list(GroupKFold(n_splits=min(n_folds, n_groups)).split(X, y, groups))

    baseline = _out_of_fold_bac(X, y, config, folds)
    importance = train_gbdt(X, y, config, feature_names=feature_names).feature_importance
    rows = []
    for column, name in enumerate(feature_names):
        reduced = np.delete(X, column, axis=1)
        without = _out_of_fold_bac(reduced, y, config, folds)
        rows.append({
            "feature": name,
            "importance": float(importance[column]),
            "bac_without": without,
            "delta_bac": without - baseline,
            "baseline_bac": baseline,
        })
        logger.info(f"Ablation {name}: BAC {without:.4f} (delta {without - baseline:+.4f})")
    return rows


# ==================== TABLAS ====================

def sweep_frame(rows: Sequence[Row]) -> pd.DataFrame:
    return pd.DataFrame(list(rows))


def render_table(rows: Sequence[Row], float_format: str = "{:.4f}") -> str:
    """Tabla de texto con columnas alineadas"""
    frame = sweep_frame(rows)
    if frame.empty:
        return "(empty)"
    return frame.to_string(index=False, float_format=float_format.format)


def write_table_csv(rows: Sequence[Row], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sweep_frame(rows).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    return path
