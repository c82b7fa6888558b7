import numpy as np
import pytest

from app.config.pipeline import EvaluationConfig, GbdtConfig, RunConfig
from app.core.exceptions import InvalidParamsError
from app.core.synth import gen_corpus
from app.models.features import FeatureTable
from app.models.session import AdversaryMode
from app.services.pipeline_service import PipelineService, evaluate_fixed_model, subject_anchors
from app.services.session_service import SessionService

CONFIG = RunConfig(gbdt=GbdtConfig(n_trees=20, max_depth=3))


@pytest.fixture(scope="module")
def traces():
    return gen_corpus(3, 2, 90.0, master_seed=11).traces


@pytest.fixture(scope="module")
def service(traces):
    service = PipelineService(CONFIG)
    service.preprocess(traces)
    return service


@pytest.fixture(scope="module")
def final_model(service):
    model, _ = service.train_final()
    return model


# ==================== PIPELINE ====================

def test_subject_anchor_is_earliest_start(traces):
    anchors = subject_anchors(traces)
    for subject, anchor in anchors.items():
        assert anchor == min(t.t0 for t in traces if t.subject_id == subject)


def test_preprocess_keeps_one_trace_per_input(service, traces):
    assert len(service.processed) == len(traces)
    assert {(p.subject_id, p.device_id) for p in service.processed} == {(t.subject_id, t.device_id) for t in traces}


def test_corpus_is_cached(service):
    assert service.train_corpus() is service.train_corpus()
    assert service.test_corpus() is not service.train_corpus()


def test_corpus_needs_processed_traces():
    with pytest.raises(InvalidParamsError):
        PipelineService(CONFIG).test_corpus()


def test_loso_reports_every_subject(service):
    run = service.evaluate()
    assert set(run.report.per_subject) == {"s01", "s02", "s03"}
    assert set(run.models) == set(run.report.per_subject)
    assert 0.0 <= run.report.weighted.bac <= 1.0
    assert set(run.thresholds) == set(run.report.per_subject)


def test_calibrated_mode_uses_training_thresholds(service):
    run = service.evaluate("calibrated")
    assert run.report.threshold_mode == "calibrated"
    for subject, metrics in run.report.per_subject.items():
        assert metrics.threshold == pytest.approx(run.models[subject].threshold)


def test_feature_cache_reuses_vectors(service):
    corpus = service.test_corpus()
    pairs = service.pair_pool(corpus, CONFIG.pairs).pairs[:10]
    first = service.features(pairs, corpus)
    second = service.features(pairs, corpus)
    np.testing.assert_array_equal(first.values, second.values)


def test_unknown_sweep_kind(service):
    with pytest.raises(InvalidParamsError):
        service.sweep("bogus")


def test_fixed_model_rejects_other_feature_order(service, final_model):
    corpus = service.test_corpus()
    table = service.features(service.pair_pool(corpus, CONFIG.pairs).pairs, corpus)
    report = evaluate_fixed_model(final_model, table)
    assert set(report.per_subject) <= {"s01", "s02", "s03"}

    reordered = FeatureTable(
        pairs=table.pairs,
        values=table.values[:, ::-1],
        feature_names=tuple(reversed(table.feature_names)),
        discarded=table.discarded,
    )
    with pytest.raises(InvalidParamsError):
        evaluate_fixed_model(final_model, reordered)


# ==================== SESIONES ====================

def test_simulate_legit_and_attack(service, final_model):
    sessions = SessionService(final_model, CONFIG)
    decisions = sessions.simulate(service.processed, AdversaryMode.BASELINE, subjects=["s02"])
    assert {d.adversary for d in decisions} == {AdversaryMode.NONE, AdversaryMode.BASELINE}
    assert all(d.subject_id == "s02" for d in decisions)
    attacked = [d for d in decisions if d.adversary == AdversaryMode.BASELINE]
    assert all(d.source_subject_id != "s02" for d in attacked)
    assert sessions.summarize(decisions).n_decisions == len(decisions)


def test_simulate_rejects_unknown_subject(service, final_model):
    with pytest.raises(InvalidParamsError):
        SessionService(final_model, CONFIG).simulate(service.processed, subjects=["s99"])


def test_baseline_attack_needs_two_subjects(service, final_model):
    alone = [p for p in service.processed if p.subject_id == "s01"]
    with pytest.raises(InvalidParamsError):
        SessionService(final_model, CONFIG).simulate(alone, AdversaryMode.BASELINE)


def test_aggregation_follows_config(service, final_model):
    decisions = SessionService(final_model, CONFIG).simulate(service.processed, subjects=["s01"])
    assert SessionService(final_model, CONFIG).aggregate(decisions) is None

    config = CONFIG.model_copy(update={"evaluation": EvaluationConfig(k_of_n=[2, 3])})
    aggregated = SessionService(final_model, config).aggregate(decisions)
    assert aggregated
    assert all(a.subject_id == "s01" for a in aggregated)
