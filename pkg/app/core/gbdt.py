#!/usr/bin/env python3
"""
Verificador de árboles potenciados por gradiente (pérdida logística).

Boosting de segundo orden con búsqueda exacta y voraz de cortes sobre los
valores ordenados de cada característica, hojas con regularización L2 y
umbrales en el punto medio entre valores adyacentes. El recorrido de los
árboles en predicción se hace en un kernel numba.
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numba as nb
import numpy as np
from pydantic import ValidationError
from scipy.special import expit

from app.config.pipeline import GbdtConfig
from app.core.exceptions import (
    CorruptModelFileError,
    FeatureOrderMismatchError,
    NonFiniteFeatureError,
    SingleClassInputError,
    VersionMismatchError,
)
from app.models.features import FEATURE_NAMES, FeatureTable, PairFeatureVector
from app.models.gbdt import LEAF, MODEL_FORMAT, MODEL_VERSION, GbdtModel, ModelFile, NodeRecord, Tree
from app.utils.helpers import sha256_text

logger = logging.getLogger(__name__)

MIN_SPLIT_GAIN = 1e-12

FeatureInput = Union[np.ndarray, FeatureTable, Sequence[PairFeatureVector]]


def as_matrix(features: FeatureInput) -> np.ndarray:
    if isinstance(features, FeatureTable):
        return np.asarray(features.values, dtype=float)
    if len(features) and isinstance(features[0], PairFeatureVector):
        return np.vstack([v.values for v in features]).astype(float)
    return np.atleast_2d(np.asarray(features, dtype=float))


def feature_order_hash(names: Sequence[str]) -> str:
    return sha256_text("\n".join(names))


# ==================== CRECIMIENTO DE ÁRBOLES ====================

class _TreeGrower:
    """Crece un árbol sobre gradientes/hessianos fijos a partir de índices preordenados"""

    def __init__(self, X: np.ndarray, grad: np.ndarray, hess: np.ndarray, config: GbdtConfig):
        self.X = X
        self.grad = grad
        self.hess = hess
        self.config = config
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []
        self.gain: List[float] = []

    def _add_node(self) -> int:
        for column, default in ((self.feature, LEAF), (self.threshold, 0.0), (self.left, LEAF),
                                (self.right, LEAF), (self.value, 0.0), (self.gain, 0.0)):
            column.append(default)
        return len(self.feature) - 1

    def _best_split(self, sorted_idx: List[np.ndarray], G: float, H: float) -> Tuple[int, float, float]:
        """(característica, umbral, ganancia); característica -1 si no hay corte válido"""
        lam = self.config.l2_leaf_reg
        msl = self.config.min_samples_leaf
        mcw = self.config.min_child_weight
        n = sorted_idx[0].shape[0]
        parent = G * G / (H + lam) if H + lam > 0 else 0.0
        n_left = np.arange(1, n)

        best_feature, best_threshold, best_gain = -1, 0.0, -np.inf
        for f, idx in enumerate(sorted_idx):
            xs = self.X[idx, f]
            gl = np.cumsum(self.grad[idx])[:-1]
            hl = np.cumsum(self.hess[idx])[:-1]
            gr = G - gl
            hr = H - hl
            valid = (xs[:-1] < xs[1:]) & (n_left >= msl) & (n - n_left >= msl) & (hl >= mcw) & (hr >= mcw)
            valid &= (hl + lam > 0) & (hr + lam > 0)
            if not valid.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gains = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
            gains = np.where(valid, gains, -np.inf)
            k = int(np.argmax(gains))
            # ganancia estrictamente mayor: a igualdad gana el índice de característica menor
            if gains[k] > best_gain:
                lo, hi = xs[k], xs[k + 1]
                threshold = lo + (hi - lo) / 2.0
                if threshold <= lo:
                    threshold = hi
                best_feature, best_threshold, best_gain = f, float(threshold), float(gains[k])
        return best_feature, best_threshold, best_gain

    def grow(self, sorted_idx: List[np.ndarray], depth: int = 0) -> int:
        node = self._add_node()
        natural = np.sort(sorted_idx[0])
        G = float(np.sum(self.grad[natural]))
        H = float(np.sum(self.hess[natural]))
        lam = self.config.l2_leaf_reg
        self.value[node] = -G / (H + lam) if H + lam > 0 else 0.0

        if depth >= self.config.max_depth or natural.shape[0] < 2:
            return node
        f, threshold, gain = self._best_split(sorted_idx, G, H)
        if f < 0 or gain <= MIN_SPLIT_GAIN:
            return node

        goes_left = np.zeros(self.X.shape[0], dtype=bool)
        goes_left[natural] = self.X[natural, f] < threshold
        left_idx = [idx[goes_left[idx]] for idx in sorted_idx]
        right_idx = [idx[~goes_left[idx]] for idx in sorted_idx]

        self.feature[node] = f
        self.threshold[node] = threshold
        self.gain[node] = gain
        self.value[node] = 0.0
        self.left[node] = self.grow(left_idx, depth + 1)
        self.right[node] = self.grow(right_idx, depth + 1)
        return node

    def to_tree(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=float),
            gain=np.asarray(self.gain, dtype=float),
        )


def _logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def train_gbdt(features: FeatureInput, labels: Sequence[int], config: GbdtConfig = GbdtConfig(),
               feature_names: Optional[Sequence[str]] = None) -> GbdtModel:
    """
    Entrena el conjunto de árboles.

    Args:
        features: matriz (n, d), FeatureTable o lista de PairFeatureVector.
        labels: etiquetas 0/1.
        config: hiperparámetros.
        feature_names: nombres de columna (por defecto los 21 del vector de par).

    Raises:
        SingleClassInputError: falta alguna de las dos clases.
        NonFiniteFeatureError: NaN o infinito en las características.
    """
    X = as_matrix(features)
    y = np.asarray(labels, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeatureError("Training features contain NaN or infinite values")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == y.shape[0]:
        raise SingleClassInputError(f"Training needs both classes, got {n_pos} positives of {y.shape[0]}")

    if feature_names is None:
        if isinstance(features, FeatureTable):
            feature_names = features.feature_names
        elif X.shape[1] == len(FEATURE_NAMES):
            feature_names = FEATURE_NAMES
        else:
            feature_names = [f"x{i}" for i in range(X.shape[1])]
    feature_names = tuple(feature_names)
    if len(feature_names) != X.shape[1]:
        raise ValueError(f"{len(feature_names)} feature names for {X.shape[1]} columns")

    prevalence = n_pos / y.shape[0]
    base_score = float(np.log(prevalence / (1.0 - prevalence)))
    order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]

    margin = np.full(y.shape[0], base_score)
    importance = np.zeros(X.shape[1])
    trees: List[Tree] = []
    losses: List[float] = []
    for _ in range(config.n_trees):
        p = expit(margin)
        grower = _TreeGrower(X, p - y, p * (1.0 - p), config)
        grower.grow(order)
        tree = grower.to_tree()
        trees.append(tree)
        internal = tree.feature != LEAF
        np.add.at(importance, tree.feature[internal], tree.gain[internal])
        margin = margin + config.learning_rate * tree.value[_apply_tree(tree, X)]
        losses.append(_logistic_loss(margin, y))

    model = GbdtModel(
        config=config,
        base_score=base_score,
        trees=tuple(trees),
        feature_names=feature_names,
        feature_importance=importance,
        train_loss=np.asarray(losses),
    )
    final_loss = f"{losses[-1]:.4f}" if losses else "n/a"
    logger.info(f"Trained GBDT: {len(trees)} trees, {model.node_count} nodes, final train loss {final_loss}")
    return model


def _apply_tree(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Índice de hoja de cada fila"""
    nodes = np.zeros(X.shape[0], dtype=np.int64)
    active = tree.feature[nodes] != LEAF
    while active.any():
        rows = np.flatnonzero(active)
        current = nodes[rows]
        go_left = X[rows, tree.feature[current]] < tree.threshold[current]
        nodes[rows] = np.where(go_left, tree.left[current], tree.right[current])
        active = tree.feature[nodes] != LEAF
    return nodes


# ==================== PREDICCIÓN ====================

@nb.njit(cache=True)
def _predict_margin(X, feature, threshold, left, right, value, base_score, learning_rate):
    n = X.shape[0]
    out = np.full(n, base_score)
    for i in range(n):
        for t in range(feature.shape[0]):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] < threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[i] += learning_rate * value[t, node]
    return out


def predict_scores(model: GbdtModel, features: FeatureInput) -> np.ndarray:
    """Probabilidad de par legítimo para cada fila"""
    X = np.ascontiguousarray(as_matrix(features), dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise FeatureOrderMismatchError(f"Model expects {model.n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeatureError("Prediction features contain NaN or infinite values")
    margin = _predict_margin(X, *model.packed, model.base_score, model.config.learning_rate)
    return expit(margin)


def predict_score(model: GbdtModel, vector: Union[np.ndarray, PairFeatureVector]) -> float:
    values = vector.values if isinstance(vector, PairFeatureVector) else vector
    return float(predict_scores(model, np.asarray(values, dtype=float)[None, :])[0])


def importance_ranking(model: GbdtModel) -> List[Tuple[str, float]]:
    """Características ordenadas por ganancia total (desc.), índice como desempate"""
    order = sorted(range(model.n_features), key=lambda i: (-model.feature_importance[i], i))
    return [(model.feature_names[i], float(model.feature_importance[i])) for i in order]


def node_count(model: GbdtModel) -> int:
    return model.node_count


# ==================== UMBRAL ====================

def bac_at_thresholds(scores: Sequence[float], labels: Sequence[int], thresholds: Sequence[float]) -> np.ndarray:
    """BAC para cada umbral (acepta si score ≥ umbral)"""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    thresholds = np.asarray(thresholds, dtype=float)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        raise SingleClassInputError(f"BAC needs both classes ({pos.size} positives, {neg.size} negatives)")
    tpr = (pos.size - np.searchsorted(pos, thresholds, side="left")) / pos.size
    tnr = np.searchsorted(neg, thresholds, side="left") / neg.size
    return 0.5 * (tpr + tnr)


def threshold_candidates(scores: Sequence[float]) -> np.ndarray:
    unique = np.unique(np.asarray(scores, dtype=float))
    midpoints = (unique[:-1] + unique[1:]) / 2.0
    return np.unique(np.concatenate([[0.0], midpoints, [1.0]]))


def select_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Umbral que maximiza BAC entre {0, puntos medios, 1}; empate → el menor"""
    candidates = threshold_candidates(scores)
    bac = bac_at_thresholds(scores, labels, candidates)
    return float(candidates[int(np.argmax(bac))])


def with_threshold(model: GbdtModel, threshold: float) -> GbdtModel:
    return GbdtModel(
        config=model.config,
        base_score=model.base_score,
        trees=model.trees,
        feature_names=model.feature_names,
        feature_importance=model.feature_importance,
        train_loss=model.train_loss,
        threshold=float(threshold),
    )


# ==================== PERSISTENCIA ====================

def _tree_records(tree: Tree) -> List[NodeRecord]:
    return [
        NodeRecord(
            id=i,
            feature=int(tree.feature[i]),
            threshold=float(tree.threshold[i]),
            left=int(tree.left[i]),
            right=int(tree.right[i]),
            value=float(tree.value[i]),
            gain=float(tree.gain[i]),
        )
        for i in range(tree.n_nodes)
    ]


def _tree_from_records(records: List[NodeRecord], n_features: int) -> Tree:
    # los hijos siempre se numeran después del padre; así no hay ciclos
    n = len(records)
    if n == 0 or [r.id for r in records] != list(range(n)):
        raise CorruptModelFileError("Tree nodes must be listed with consecutive ids from 0")
    for r in records:
        if r.feature != LEAF and not (0 <= r.feature < n_features and r.id < r.left < n and r.id < r.right < n):
            raise CorruptModelFileError(f"Node {r.id} references an invalid feature or child")
    return Tree(
        feature=np.array([r.feature for r in records], dtype=np.int64),
        threshold=np.array([r.threshold for r in records], dtype=float),
        left=np.array([r.left for r in records], dtype=np.int64),
        right=np.array([r.right for r in records], dtype=np.int64),
        value=np.array([r.value for r in records], dtype=float),
        gain=np.array([r.gain for r in records], dtype=float),
    )


def save_model(model: GbdtModel, path: Union[str, Path]) -> Path:
    """Escribe el volcado JSON versionado; bytes idénticos para modelos idénticos"""
    file = ModelFile(
        config=model.config,
        feature_names=list(model.feature_names),
        feature_order_hash=feature_order_hash(model.feature_names),
        base_score=model.base_score,
        threshold=model.threshold,
        feature_importance=[float(v) for v in model.feature_importance],
        train_loss=[float(v) for v in model.train_loss],
        trees=[_tree_records(t) for t in model.trees],
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(file.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Model saved to {path} ({model.node_count} nodes)")
    return path


def load_model(path: Union[str, Path], expected_features: Optional[Sequence[str]] = None) -> GbdtModel:
    """
    Lee un archivo de modelo.

    Raises:
        CorruptModelFileError: JSON ilegible o estructura inválida.
        VersionMismatchError: versión de formato posterior a la soportada.
        FeatureOrderMismatchError: el orden de columnas no coincide.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        logger.error(f"Model file {path} is not valid JSON: {exc}")
        raise CorruptModelFileError(f"Model file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("format") != MODEL_FORMAT:
        raise CorruptModelFileError(f"{path} is not a {MODEL_FORMAT} file")
    version = raw.get("version")
    if isinstance(version, int) and version > MODEL_VERSION:
        raise VersionMismatchError(f"{path} has format version {version}; supported up to {MODEL_VERSION}")
    try:
        file = ModelFile.model_validate(raw)
    except ValidationError as exc:
        raise CorruptModelFileError(f"Model file {path} is malformed: {exc}") from exc

    if feature_order_hash(file.feature_names) != file.feature_order_hash:
        raise FeatureOrderMismatchError(f"Feature order hash in {path} does not match its feature names")
    if expected_features is not None and list(expected_features) != file.feature_names:
        raise FeatureOrderMismatchError(
            f"Model {path} was trained on {len(file.feature_names)} features in a different order"
        )
    if len(file.feature_importance) != len(file.feature_names):
        raise CorruptModelFileError(f"Feature importance length mismatch in {path}")

    trees = tuple(_tree_from_records(records, len(file.feature_names)) for records in file.trees)
    return GbdtModel(
        config=file.config,
        base_score=file.base_score,
        trees=trees,
        feature_names=tuple(file.feature_names),
        feature_importance=np.asarray(file.feature_importance, dtype=float),
        train_loss=np.asarray(file.train_loss, dtype=float),
        threshold=file.threshold,
    )
