#!/usr/bin/env python3
"""
Modelos del verificador GBDT: árboles en forma de arrays, conjunto entrenado y
formato de archivo versionado.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.config.pipeline import GbdtConfig

MODEL_FORMAT = "crosspulse-gbdt"
MODEL_VERSION = 1
LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    """Árbol binario en arrays paralelos; ``feature == LEAF`` marca una hoja"""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def depth(self, node: int = 0) -> int:
        if self.feature[node] == LEAF:
            return 0
        return 1 + max(self.depth(int(self.left[node])), self.depth(int(self.right[node])))


@dataclass(frozen=True, eq=False)
class GbdtModel:
    config: GbdtConfig
    base_score: float
    trees: Tuple[Tree, ...]
    feature_names: Tuple[str, ...]
    feature_importance: np.ndarray
    train_loss: np.ndarray
    threshold: float = 0.5

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def node_count(self) -> int:
        return sum(t.n_nodes for t in self.trees)

    @cached_property
    def packed(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Arrays (n_árboles × max_nodos) rellenados con hojas para el kernel de predicción"""
        width = max([t.n_nodes for t in self.trees] + [1])
        shape = (len(self.trees), width)
        feature = np.full(shape, LEAF, dtype=np.int64)
        threshold = np.zeros(shape)
        left = np.zeros(shape, dtype=np.int64)
        right = np.zeros(shape, dtype=np.int64)
        value = np.zeros(shape)
        for i, tree in enumerate(self.trees):
            n = tree.n_nodes
            feature[i, :n] = tree.feature
            threshold[i, :n] = tree.threshold
            left[i, :n] = tree.left
            right[i, :n] = tree.right
            value[i, :n] = tree.value
        return feature, threshold, left, right, value


class NodeRecord(BaseModel):
    id: int
    feature: int
    threshold: float = 0.0
    left: int = LEAF
    right: int = LEAF
    value: float = 0.0
    gain: float = 0.0


class ModelFile(BaseModel):
    """Volcado de texto del conjunto de árboles (JSON legible y comparable)"""
    format: str = MODEL_FORMAT
    version: int = MODEL_VERSION
    config: GbdtConfig
    feature_names: List[str]
    feature_order_hash: str
    base_score: float
    threshold: float = Field(ge=0, le=1)
    feature_importance: List[float]
    train_loss: List[float] = Field(default_factory=list)
    trees: List[List[NodeRecord]] = Field(default_factory=list)
