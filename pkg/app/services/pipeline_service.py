#!/usr/bin/env python3
"""
Servicio del pipeline offline: trazas → señal procesada → corpus → pares →
características → LOSO → barridos.

Una instancia está ligada a un conjunto de trazas procesadas; las
características ya calculadas se reutilizan entre corpus con la misma
duración de ventana (los segmentos con la misma referencia tienen las mismas
muestras).
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.config.pipeline import PairPolicy, RunConfig
from app.core.dataset import (
    balance_pairs,
    build_corpus,
    build_pairs,
    build_replay_pairs,
    filter_corpus,
    loso_splits,
    resolve_devices,
    restrict_pairs,
)
from app.core.evaluation import (
    SplitScores,
    ablation_sweep,
    device_exclusion_sweep,
    duration_sweep,
    evaluate_loso,
    posture_sweep,
    replay_sweep,
    token_device_sweep,
)
from app.core.exceptions import InvalidParamsError, NoPositivePairsError, SingleClassInputError
from app.core.features import extract_many
from app.core.frontend import preprocess_trace
from app.core.gbdt import predict_scores, select_threshold, train_gbdt, with_threshold
from app.core.quality import pass_rate_by_device
from app.models.dataset import Corpus, PairSet, SegmentPair
from app.models.evaluation import EvalReport, MetricSet
from app.models.features import N_FEATURES, FeatureTable
from app.models.gbdt import GbdtModel
from app.models.signal import PpgTrace, ProcessedTrace
from app.utils.helpers import derive_seeds

logger = logging.getLogger(__name__)

SWEEP_KINDS = ("replay", "duration", "ablation", "device", "posture", "token")


def subject_anchors(traces: Iterable[PpgTrace]) -> Dict[str, float]:
    """Ancla de rejilla por sujeto: el primer instante registrado por cualquiera de sus dispositivos"""
    anchors: Dict[str, float] = {}
    for trace in traces:
        current = anchors.get(trace.subject_id)
        anchors[trace.subject_id] = trace.t0 if current is None else min(current, trace.t0)
    return anchors


def _preprocess_one(args) -> ProcessedTrace:
    trace, preprocess, quality, anchor = args
    return preprocess_trace(trace, preprocess, quality, anchor_ms=anchor, origin_ms=anchor)


@dataclass(eq=False)
class LosoRun:
    """Puntuaciones de prueba y modelo de cada partición"""
    splits: List[SplitScores]
    models: Dict[str, GbdtModel]
    test_tables: Dict[str, FeatureTable]
    report: EvalReport

    @property
    def thresholds(self) -> Dict[str, float]:
        return {s: m.threshold for s, m in self.report.per_subject.items() if m.threshold is not None}


@dataclass(eq=False)
class PipelineService:
    """Orquesta el pipeline offline según un ``RunConfig``"""
    config: RunConfig = field(default_factory=RunConfig)
    processed: List[ProcessedTrace] = field(default_factory=list)
    _features: Dict[Tuple[float, SegmentPair], Optional[np.ndarray]] = field(default_factory=dict, repr=False)
    _corpora: Dict[Tuple[float, float, Optional[str]], Corpus] = field(default_factory=dict, repr=False)

    # ==================== FRONT-END ====================

    def preprocess(self, traces: Sequence[PpgTrace]) -> List[ProcessedTrace]:
        """Front-end por traza sobre la rejilla común de cada sujeto"""
        anchors = subject_anchors(traces)
        jobs = [(t, self.config.preprocess, self.config.quality, anchors[t.subject_id]) for t in traces]
        if self.config.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=self.config.workers) as executor:
                processed = list(executor.map(_preprocess_one, jobs))
        else:
            processed = [_preprocess_one(job) for job in jobs]

        self.processed = processed
        self._features.clear()
        self._corpora.clear()
        rates = pass_rate_by_device(w for p in processed for w in p.windows)
        summary = ", ".join(f"{device} {rate:.2f}" for device, rate in sorted(rates.items()))
        logger.info(f"Preprocessed {len(processed)} traces; MA pass rate by device: {summary}")
        return processed

    def use_processed(self, processed: Sequence[ProcessedTrace]) -> None:
        self.processed = list(processed)
        self._features.clear()
        self._corpora.clear()

    def corpus(self, window_s: float, hop_s: float, posture: Optional[str] = None) -> Corpus:
        key = (float(window_s), float(hop_s), posture)
        if key not in self._corpora:
            if not self.processed:
                raise InvalidParamsError("No processed traces loaded")
            pre = self.config.preprocess
            corpus = build_corpus(self.processed, window_s, hop_s, savgol_order=pre.savgol_order,
                                  savgol_window=pre.savgol_window_samples)
            if posture is not None:
                corpus = filter_corpus(corpus, posture=posture)
            self._corpora[key] = corpus
        return self._corpora[key]

    def train_corpus(self, window_s: Optional[float] = None, posture: Optional[str] = None) -> Corpus:
        pre = self.config.preprocess
        window = window_s or pre.window_feat_s
        return self.corpus(window, pre.train_hop_s * window / pre.window_feat_s, posture)

    def test_corpus(self, window_s: Optional[float] = None, posture: Optional[str] = None) -> Corpus:
        pre = self.config.preprocess
        window = window_s or pre.window_feat_s
        return self.corpus(window, pre.test_hop_s * window / pre.window_feat_s, posture)

    def postures(self) -> List[str]:
        return sorted({p.tags["posture"] for p in self.processed if "posture" in p.tags})

    # ==================== CARACTERÍSTICAS ====================

    def features(self, pairs: Iterable[SegmentPair], corpus: Corpus) -> FeatureTable:
        """Tabla de características en el orden de ``pairs``; los pares fallidos van a ``discarded``"""
        pairs = list(pairs)
        window = next(iter(corpus.iter_segments())).duration_s if len(corpus) else 0.0
        missing = [p for p in dict.fromkeys(pairs) if (window, p) not in self._features]
        if missing:
            table = extract_many(missing, corpus.lookup, self.config.workers, self.config.quality)
            for pair, values in zip(table.pairs, table.values):
                self._features[(window, pair)] = values
            for pair, _ in table.discarded:
                self._features[(window, pair)] = None

        kept, rows, discarded = [], [], []
        for pair in pairs:
            values = self._features[(window, pair)]
            if values is None:
                discarded.append((pair, "extraction failed"))
            else:
                kept.append(pair)
                rows.append(values)
        matrix = np.vstack(rows) if rows else np.empty((0, N_FEATURES))
        return FeatureTable(values=matrix, pairs=tuple(kept), discarded=tuple(discarded))

    # ==================== PARES ====================

    def pair_pool(self, corpus: Corpus, policy: PairPolicy) -> PairSet:
        """Pool de entrenamiento sobremuestreado; cada partición lo rebalancea"""
        ratio = policy.negative_ratio * self.config.evaluation.pool_negative_ratio
        return build_pairs(corpus, policy.model_copy(update={"negative_ratio": ratio}))

    def test_pairs(self, corpus: Corpus, policy: PairPolicy, subject: str) -> Optional[PairSet]:
        try:
            return build_pairs(corpus, policy, anchor_subjects=[subject])
        except NoPositivePairsError as exc:
            logger.warning(f"Subject {subject} has no test pairs: {exc}")
            return None

    # ==================== LOSO ====================

    def train_model(self, table: FeatureTable) -> GbdtModel:
        """Entrena y calibra el umbral sobre las puntuaciones de entrenamiento"""
        model = train_gbdt(table, table.labels, self.config.gbdt)
        threshold = select_threshold(predict_scores(model, table), table.labels)
        return with_threshold(model, threshold)

    def run_loso(self, train_corpus: Corpus, test_corpus: Corpus, policy: Optional[PairPolicy] = None,
                 test_policy: Optional[PairPolicy] = None, threshold_mode: Optional[str] = None) -> LosoRun:
        """
        Una partición por sujeto: entrenamiento con los pares del resto de
        sujetos (ningún segmento del sujeto de prueba), prueba con pares
        anclados en el token del sujeto retenido.
        """
        policy = policy or self.config.pairs
        test_policy = test_policy or policy
        mode = threshold_mode or self.config.evaluation.threshold_mode
        pool = self.pair_pool(train_corpus, policy)
        pool_table = self.features(pool.pairs, train_corpus)
        row_of = {pair: i for i, pair in enumerate(pool_table.pairs)}

        subjects = [s.test_subject for s in loso_splits(test_corpus)]
        seeds = derive_seeds(policy.rng_seed, len(subjects))
        splits, models, tables = [], {}, {}
        for subject, seed in zip(subjects, seeds):
            train_subjects = [s for s in train_corpus.subjects if s != subject]
            train_set = balance_pairs(restrict_pairs(pool, train_subjects), seed, policy.negative_ratio)
            train_table = pool_table.take([row_of[p] for p in train_set if p in row_of])
            test_set = self.test_pairs(test_corpus, test_policy, subject)
            if test_set is None:
                continue
            test_table = self.features(test_set.pairs, test_corpus)
            if len(test_table) == 0:
                logger.warning(f"Subject {subject}: every test pair was discarded")
                continue
            try:
                model = self.train_model(train_table)
            except SingleClassInputError as exc:
                logger.warning(f"Skipping subject {subject}: {exc}")
                continue
            models[subject] = model
            tables[subject] = test_table
            splits.append(SplitScores(
                subject=subject,
                scores=predict_scores(model, test_table),
                labels=test_table.labels,
                devices=test_table.wearable_devices,
                calibrated_threshold=model.threshold,
            ))
            logger.debug(f"Split {subject}: {len(train_table)} train / {len(test_table)} test pairs")

        report = evaluate_loso(splits, mode)
        return LosoRun(splits=splits, models=models, test_tables=tables, report=report)

    def evaluate(self, threshold_mode: Optional[str] = None) -> LosoRun:
        return self.run_loso(self.train_corpus(), self.test_corpus(), threshold_mode=threshold_mode)

    def train_final(self) -> Tuple[GbdtModel, FeatureTable]:
        """Modelo desplegable entrenado con todos los sujetos"""
        corpus = self.train_corpus()
        policy = self.config.pairs
        table = self.features(build_pairs(corpus, policy).pairs, corpus)
        return self.train_model(table), table

    # ==================== BARRIDOS ====================

    def replay_rows(self, offsets: Optional[Sequence[float]] = None, base: Optional[LosoRun] = None) -> List[dict]:
        """
        BAC frente al desfase de repetición. Los positivos son pares de
        repetición del corpus denso; los negativos, los de la prueba normal.
        """
        evaluation = self.config.evaluation
        offsets = list(evaluation.replay_offsets_s if offsets is None else offsets)
        base = base or self.evaluate()
        pre = self.config.preprocess
        dense = self.corpus(pre.window_feat_s, evaluation.replay_hop_s)
        policy = self.config.pairs

        def score_at_offset(offset: float) -> List[SplitScores]:
            splits = []
            for split in base.splits:
                replay = build_replay_pairs(dense, offset, policy, anchor_subjects=[split.subject],
                                            token_hop_s=pre.test_hop_s)
                positives = self.features(replay.pairs, dense)
                if len(positives) == 0:
                    continue
                model = base.models[split.subject]
                negatives = split.labels == 0
                splits.append(SplitScores(
                    subject=split.subject,
                    scores=np.concatenate([predict_scores(model, positives), split.scores[negatives]]),
                    labels=np.concatenate([np.ones(len(positives), dtype=int), split.labels[negatives]]),
                    devices=np.concatenate([positives.wearable_devices, split.devices[negatives]]),
                ))
            return splits

        return replay_sweep(score_at_offset, offsets, base.thresholds)

    def duration_rows(self, durations: Optional[Sequence[float]] = None) -> List[dict]:
        durations = list(self.config.evaluation.durations_s if durations is None else durations)

        def run_at_duration(window_s: float) -> MetricSet:
            return self.run_loso(self.train_corpus(window_s), self.test_corpus(window_s)).report.weighted

        return duration_sweep(run_at_duration, durations)

    def device_rows(self) -> List[dict]:
        """Entrena sin cada wearable y prueba solo con él"""
        train, test = self.train_corpus(), self.test_corpus()
        _, wearables = resolve_devices(test, self.config.pairs)

        def run_excluding(device: str) -> MetricSet:
            test_policy = self.config.pairs.model_copy(update={"wearables": [device]})
            return self.run_loso(filter_corpus(train, exclude_device=device), test,
                                 test_policy=test_policy).report.weighted

        return device_exclusion_sweep(run_excluding, wearables)

    def posture_rows(self) -> List[dict]:
        postures = self.postures()
        if not postures:
            raise InvalidParamsError("Traces carry no posture tags")

        def run_postures(train_posture: str, test_posture: str) -> MetricSet:
            return self.run_loso(self.train_corpus(posture=train_posture),
                                 self.test_corpus(posture=test_posture)).report.weighted

        return posture_sweep(run_postures, [(a, b) for a in postures for b in postures])

    def token_rows(self) -> List[dict]:
        train, test = self.train_corpus(), self.test_corpus()

        def run_with_token(device: str) -> MetricSet:
            policy = self.config.pairs.model_copy(update={"token_device": device, "wearables": None})
            return self.run_loso(train, test, policy=policy).report.weighted

        return token_device_sweep(run_with_token, test.devices)

    def ablation_rows(self) -> List[dict]:
        corpus = self.train_corpus()
        table = self.features(build_pairs(corpus, self.config.pairs).pairs, corpus)
        return ablation_sweep(table.values, table.labels, table.token_subjects, self.config.gbdt,
                              table.feature_names, self.config.evaluation.ablation_folds)

    def sweep(self, kind: str, offsets: Optional[Sequence[float]] = None,
              durations: Optional[Sequence[float]] = None) -> List[dict]:
        if kind not in SWEEP_KINDS:
            raise InvalidParamsError(f"Unknown sweep kind '{kind}', expected one of {SWEEP_KINDS}")
        logger.info(f"Running {kind} sweep")
        if kind == "replay":
            return self.replay_rows(offsets)
        if kind == "duration":
            return self.duration_rows(durations)
        if kind == "device":
            return self.device_rows()
        if kind == "posture":
            return self.posture_rows()
        if kind == "token":
            return self.token_rows()
        return self.ablation_rows()


def evaluate_fixed_model(model: GbdtModel, table: FeatureTable) -> EvalReport:
    """Evalúa un modelo ya entrenado, con su umbral, sobre una tabla de características"""
    if list(model.feature_names) != list(table.feature_names):
        raise InvalidParamsError(
            f"Model expects {len(model.feature_names)} features {list(model.feature_names)[:3]}..., "
            f"table has {len(table.feature_names)}"
        )
    scores = predict_scores(model, table)
    subjects = table.token_subjects
    splits = []
    for subject in sorted(set(subjects.tolist())):
        mask = subjects == subject
        splits.append(SplitScores(subject=subject, scores=scores[mask], labels=table.labels[mask],
                                  devices=table.wearable_devices[mask], calibrated_threshold=model.threshold))
    return evaluate_loso(splits, "calibrated")
