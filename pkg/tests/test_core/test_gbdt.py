import json

import numpy as np
import pytest

from app.config.pipeline import GbdtConfig
from app.core.exceptions import (
    CorruptModelFileError,
    FeatureOrderMismatchError,
    NonFiniteFeatureError,
    SingleClassInputError,
    VersionMismatchError,
)
from app.core.gbdt import (
    bac_at_thresholds,
    importance_ranking,
    load_model,
    node_count,
    predict_score,
    predict_scores,
    save_model,
    select_threshold,
    train_gbdt,
    with_threshold,
)
from app.models.features import FEATURE_NAMES
from app.models.gbdt import LEAF


@pytest.fixture
def separable():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=200)
    x = x[np.abs(x) > 0.05]
    return x[:, None], (x > 0).astype(int)


@pytest.fixture
def noisy_pairs():
    """Datos de 21 columnas con señal en las primeras dos"""
    rng = np.random.default_rng(1)
    X = rng.standard_normal((300, len(FEATURE_NAMES)))
    y = (X[:, 0] + 0.5 * X[:, 1] + 0.5 * rng.standard_normal(300) > 0).astype(int)
    return X, y


def _depth1_oracle(x, y, n_trees, lr=0.1, lam=1.0):
    """Boosting de tocones escrito de forma independiente (bucle sobre umbrales)"""
    p0 = y.mean()
    margin = np.full(y.size, np.log(p0 / (1 - p0)))
    values = np.unique(x)
    for _ in range(n_trees):
        p = 1 / (1 + np.exp(-margin))
        g, h = p - y, p * (1 - p)
        best = None
        for lo, hi in zip(values[:-1], values[1:]):
            t = (lo + hi) / 2
            left = x < t
            gl, hl, gr, hr = g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum()
            gain = gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - g.sum() ** 2 / (h.sum() + lam)
            if best is None or gain > best[0]:
                best = (gain, t, -gl / (hl + lam), -gr / (hr + lam))
        _, t, wl, wr = best
        margin = margin + lr * np.where(x < t, wl, wr)
    return 1 / (1 + np.exp(-margin))


# ==================== ENTRENAMIENTO ====================

def test_separable_depth_one(separable):
    X, y = separable
    model = train_gbdt(X, y, GbdtConfig(n_trees=10, max_depth=1))
    scores = predict_scores(model, X)
    assert np.mean((scores >= 0.5) == y) == 1.0
    np.testing.assert_allclose(scores, _depth1_oracle(X[:, 0], y, 10), atol=1e-9)
    assert all(tree.depth() <= 1 for tree in model.trees)


def test_separable_scores_are_confident(separable):
    X, y = separable
    model = train_gbdt(X, y, GbdtConfig(n_trees=50, max_depth=1))
    assert predict_score(model, np.array([0.8])) > 0.9
    assert predict_score(model, np.array([-0.8])) < 0.1


def test_xor_depth_two():
    # celdas con distinto número de ejemplos para que el corte raíz tenga ganancia
    cells = [((0.0, 0.0), 0, 10), ((0.0, 1.0), 1, 20), ((1.0, 0.0), 1, 30), ((1.0, 1.0), 0, 40)]
    X = np.vstack([np.tile(point, (count, 1)) for point, _, count in cells])
    y = np.concatenate([np.full(count, label) for _, label, count in cells])
    model = train_gbdt(X, y, GbdtConfig(n_trees=50, max_depth=2), feature_names=["a", "b"])
    assert np.mean((predict_scores(model, X) >= 0.5) == y) == 1.0


def test_training_loss_non_increasing(noisy_pairs):
    X, y = noisy_pairs
    model = train_gbdt(X, y, GbdtConfig(n_trees=30))
    assert model.train_loss.shape == (30,)
    assert np.all(np.diff(model.train_loss) <= 1e-12)


def test_monotone_transform_invariance(noisy_pairs):
    X, y = noisy_pairs
    config = GbdtConfig(n_trees=20, max_depth=3)
    transformed = X.copy()
    transformed[:, 0] = np.exp(X[:, 0]) * 3.0 + 1.0
    first = predict_scores(train_gbdt(X, y, config), X)
    second = predict_scores(train_gbdt(transformed, y, config), transformed)
    np.testing.assert_array_equal(first, second)


def test_model_size_and_importance(noisy_pairs):
    X, y = noisy_pairs
    config = GbdtConfig(n_trees=10, max_depth=3)
    model = train_gbdt(X, y, config)
    assert node_count(model) <= config.n_trees * (2 ** (config.max_depth + 1) - 1)
    assert np.all(model.feature_importance >= 0)
    total_gain = sum(t.gain[t.feature != LEAF].sum() for t in model.trees)
    assert model.feature_importance.sum() == pytest.approx(total_gain)
    assert importance_ranking(model)[0][0] == FEATURE_NAMES[0]


def test_min_samples_leaf_respected(noisy_pairs):
    X, y = noisy_pairs
    model = train_gbdt(X, y, GbdtConfig(n_trees=3, max_depth=6, min_samples_leaf=40))
    for tree in model.trees:
        leaves = np.flatnonzero(tree.feature == LEAF)
        assert len(leaves) <= len(y) // 40


def test_training_is_deterministic(noisy_pairs, tmp_path):
    X, y = noisy_pairs
    first = save_model(train_gbdt(X, y, GbdtConfig(n_trees=5)), tmp_path / "a.json")
    second = save_model(train_gbdt(X, y, GbdtConfig(n_trees=5)), tmp_path / "b.json")
    assert first.read_bytes() == second.read_bytes()


def test_training_rejects_bad_input(noisy_pairs):
    X, y = noisy_pairs
    with pytest.raises(SingleClassInputError):
        train_gbdt(X, np.ones_like(y))
    bad = X.copy()
    bad[3, 4] = np.nan
    with pytest.raises(NonFiniteFeatureError):
        train_gbdt(bad, y)


# ==================== PREDICCIÓN ====================

def test_empty_ensemble_predicts_prevalence():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    model = train_gbdt(X, [0, 1, 0, 1], GbdtConfig(n_trees=0))
    assert predict_score(model, np.array([5.0])) == pytest.approx(0.5)


def test_prediction_rejects_non_finite(separable):
    X, y = separable
    model = train_gbdt(X, y, GbdtConfig(n_trees=2))
    with pytest.raises(NonFiniteFeatureError):
        predict_score(model, np.array([np.inf]))


# ==================== UMBRAL ====================

def test_threshold_separated_scores():
    assert select_threshold([0.8, 0.9, 0.2, 0.3], [1, 1, 0, 0]) == pytest.approx(0.55)


def test_threshold_all_equal():
    assert select_threshold([0.4, 0.4, 0.4], [1, 0, 1]) == 0.0


def test_threshold_brute_force():
    scores, labels = [0.6, 0.4, 0.5, 0.3], [1, 1, 0, 0]
    candidates = [0.0, 0.35, 0.45, 0.55, 1.0]
    brute = [
        0.5 * (np.mean([s >= t for s, l in zip(scores, labels) if l == 1])
               + np.mean([s < t for s, l in zip(scores, labels) if l == 0]))
        for t in candidates
    ]
    assert max(brute) == pytest.approx(0.75)
    t = select_threshold(scores, labels)
    assert t == pytest.approx(candidates[int(np.argmax(brute))])
    assert bac_at_thresholds(scores, labels, [t])[0] == pytest.approx(0.75)


def test_threshold_single_class():
    with pytest.raises(SingleClassInputError):
        select_threshold([0.1, 0.2], [1, 1])


# ==================== PERSISTENCIA ====================

def test_save_load_identical_predictions(noisy_pairs, tmp_path):
    X, y = noisy_pairs
    model = with_threshold(train_gbdt(X, y, GbdtConfig(n_trees=15)), 0.42)
    path = save_model(model, tmp_path / "model.json")
    loaded = load_model(path, expected_features=FEATURE_NAMES)
    probe = np.random.default_rng(2).standard_normal((1000, X.shape[1]))
    np.testing.assert_array_equal(predict_scores(model, probe), predict_scores(loaded, probe))
    assert loaded.threshold == 0.42
    np.testing.assert_array_equal(loaded.train_loss, model.train_loss)


@pytest.fixture
def saved_model(separable, tmp_path):
    X, y = separable
    return save_model(train_gbdt(X, y, GbdtConfig(n_trees=3)), tmp_path / "model.json")


def test_truncated_file_is_corrupt(saved_model):
    text = saved_model.read_text()
    saved_model.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptModelFileError):
        load_model(saved_model)


def test_cyclic_tree_is_corrupt(saved_model):
    raw = json.loads(saved_model.read_text())
    nodes = raw["trees"][0]
    split = next(n for n in nodes if n["feature"] != LEAF)
    split["left"] = split["id"]
    saved_model.write_text(json.dumps(raw))
    with pytest.raises(CorruptModelFileError):
        load_model(saved_model)


def test_child_before_parent_is_corrupt(saved_model):
    raw = json.loads(saved_model.read_text())
    nodes = raw["trees"][0]
    split = [n for n in nodes if n["feature"] != LEAF][-1]
    split["right"] = 0
    saved_model.write_text(json.dumps(raw))
    with pytest.raises(CorruptModelFileError):
        load_model(saved_model)


def test_future_version(saved_model):
    raw = json.loads(saved_model.read_text())
    raw["version"] = 99
    saved_model.write_text(json.dumps(raw))
    with pytest.raises(VersionMismatchError):
        load_model(saved_model)


def test_feature_order_mismatch(saved_model):
    with pytest.raises(FeatureOrderMismatchError):
        load_model(saved_model, expected_features=["other"])
    raw = json.loads(saved_model.read_text())
    raw["feature_names"] = ["renamed"]
    saved_model.write_text(json.dumps(raw))
    with pytest.raises(FeatureOrderMismatchError):
        load_model(saved_model)


def test_missing_model_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "absent.json")
