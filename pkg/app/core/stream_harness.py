#!/usr/bin/env python3
"""
Sesión de autenticación en tiempo real simulada en tiempo virtual (simpy).

Cada dispositivo emite paquetes de su señal procesada de 60 Hz; un proceso de
entrega por paquete aplica el retardo de transporte (fijo + jitter uniforme,
con pérdidas) antes de depositarlo en la cola del receptor. El decisor
despierta al final de cada ventana de recogida más el peor retardo posible,
alinea los flujos por marca de tiempo de origen y puntúa cada wearable.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import simpy

from app.config.pipeline import LatencyModel, PreprocessConfig, QualityConfig
from app.core.exceptions import CrossPulseError, FlatSignalError, InsufficientOverlapError, InvalidParamsError
from app.core.features import extract_pair_features
from app.core.gbdt import predict_score
from app.core.signal_core import standardize_smooth
from app.models.gbdt import GbdtModel
from app.models.session import (
    AdversaryMode,
    AggregatedDecision,
    DecisionReason,
    SessionDecision,
    SessionSummary,
    StreamChunk,
)
from app.models.signal import DeviceKind, ProcessedTrace, Segment, Stage

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE_MS = 250.0
TOKEN_STREAM = "__token__"


# ==================== FLUJOS ====================

def chunk_stream(trace: ProcessedTrace, chunk_s: float, shift_s: float = 0.0,
                 stream_id: Optional[str] = None) -> List[StreamChunk]:
    """
    Trocea una traza procesada en paquetes de ``chunk_s``.

    Con ``shift_s > 0`` cada instante declarado transporta la muestra grabada
    ``shift_s`` más tarde (flujo repetido con desfase).
    """
    if chunk_s <= 0:
        raise InvalidParamsError(f"chunk_s must be > 0, got {chunk_s}")
    size = max(1, int(round(chunk_s * trace.rate)))
    shift = int(round(shift_s * trace.rate))
    samples = trace.samples[shift:] if shift > 0 else trace.samples
    return [
        StreamChunk(
            stream_id=stream_id or trace.device_id,
            source_subject_id=trace.subject_id,
            origin_ms=trace.t0_ms,
            first_index=lo,
            samples=samples[lo:lo + size].copy(),
            rate=trace.rate,
        )
        for lo in range(0, samples.shape[0], size)
    ]


def _assemble(chunks: Sequence[StreamChunk], start_ms: float, n: int) -> Tuple[np.ndarray, float]:
    """n muestras consecutivas desde el punto de rejilla más cercano a ``start_ms``"""
    if not chunks:
        raise InsufficientOverlapError(f"No data received for window at {start_ms:.0f} ms")
    first = chunks[0]
    step = first.step_ms
    lo = int(round((start_ms - first.origin_ms) / step))
    if lo < 0:
        raise InsufficientOverlapError(f"Stream {first.stream_id} starts after window at {start_ms:.0f} ms")

    out = np.full(n, np.nan)
    covered = np.zeros(n, dtype=bool)
    for chunk in chunks:
        a = max(chunk.first_index, lo)
        b = min(chunk.first_index + chunk.samples.shape[0], lo + n)
        if b > a:
            out[a - lo:b - lo] = chunk.samples[a - chunk.first_index:b - chunk.first_index]
            covered[a - lo:b - lo] = True
    if not covered.all():
        missing = int(n - covered.sum())
        raise InsufficientOverlapError(
            f"Stream {first.stream_id} misses {missing} of {n} samples in window at {start_ms:.0f} ms"
        )
    return out, first.origin_ms + lo * step


def align_window(token_chunks: Sequence[StreamChunk], wearable_chunks: Sequence[StreamChunk],
                 start_ms: float, window_s: float,
                 tolerance_ms: float = DEFAULT_TOLERANCE_MS) -> Tuple[Segment, Segment]:
    """
    Segmentos (token, wearable) de una ventana de recogida alineados por marca
    de tiempo de origen. Las muestras pueden contener NaN (tramos rechazados).

    Raises:
        InsufficientOverlapError: algún flujo no cubre la ventana completa o
            los inicios difieren más que la tolerancia.
    """
    segments = []
    starts = []
    for chunks, kind in ((token_chunks, DeviceKind.TOKEN), (wearable_chunks, DeviceKind.WEARABLE)):
        if not chunks:
            raise InsufficientOverlapError(f"No {kind.value} data for window at {start_ms:.0f} ms")
        rate = chunks[0].rate
        n = int(round(window_s * rate))
        samples, actual_start = _assemble(chunks, start_ms, n)
        starts.append(actual_start)
        segments.append(Segment(
            subject_id=chunks[0].source_subject_id,
            device_id=chunks[0].stream_id,
            device_kind=kind,
            start_time=actual_start,
            duration_s=window_s,
            rate=rate,
            samples=samples,
            stage=Stage.MA_CHECKED,
        ))
    if abs(starts[0] - starts[1]) > tolerance_ms:
        raise InsufficientOverlapError(
            f"Token and wearable windows start {abs(starts[0] - starts[1]):.1f} ms apart (> {tolerance_ms} ms)"
        )
    return segments[0], segments[1]


def align_streams(token_chunks: Sequence[StreamChunk], wearable_chunks: Sequence[StreamChunk],
                  window_starts: Iterable[float], window_s: float,
                  tolerance_ms: float = DEFAULT_TOLERANCE_MS) -> List[Tuple[float, Segment, Segment]]:
    """Pares alineados para cada inicio de ventana; las ventanas incompletas se omiten"""
    aligned = []
    for start in window_starts:
        try:
            token, wearable = align_window(token_chunks, wearable_chunks, start, window_s, tolerance_ms)
        except InsufficientOverlapError as exc:
            logger.debug(f"Window at {start:.0f} ms skipped: {exc}")
            continue
        aligned.append((start, token, wearable))
    return aligned


# ==================== SESIÓN ====================

@dataclass(frozen=True)
class _Delivered:
    chunk: StreamChunk
    delay_ms: float


class StreamSession:
    """
    Una sesión de un sujeto: un flujo token y uno por wearable, transportados
    con el modelo de latencia y decididos por ventanas de recogida.
    """

    def __init__(self, token: ProcessedTrace, wearables: Dict[str, ProcessedTrace], model: GbdtModel,
                 latency: LatencyModel = LatencyModel(), window_s: float = 6.0,
                 adversary: AdversaryMode = AdversaryMode.NONE, replay_offset_s: float = 0.0,
                 preprocess: PreprocessConfig = PreprocessConfig(), quality: QualityConfig = QualityConfig(),
                 tolerance_ms: float = DEFAULT_TOLERANCE_MS, origin_ms: Optional[float] = None):
        if not wearables:
            raise InvalidParamsError("A session needs at least one wearable stream")
        self.env = simpy.Environment()
        self.rng = np.random.default_rng(latency.seed)
        self.latency = latency
        self.model = model
        self.window_s = window_s
        self.adversary = AdversaryMode(adversary)
        self.preprocess = preprocess
        self.quality = quality
        self.tolerance_ms = tolerance_ms
        self.subject_id = token.subject_id

        shift = replay_offset_s if self.adversary == AdversaryMode.REPLAY else 0.0
        self.streams: Dict[str, List[StreamChunk]] = {TOKEN_STREAM: chunk_stream(token, latency.chunk_s)}
        for device, trace in wearables.items():
            self.streams[device] = chunk_stream(trace, latency.chunk_s, shift_s=shift, stream_id=device)
        self.buffers: Dict[str, List[_Delivered]] = {name: [] for name in self.streams}

        self.origin_ms = min(c[0].t_start_ms for c in self.streams.values() if c) if origin_ms is None else origin_ms
        end_ms = self.streams[TOKEN_STREAM][-1].t_end_ms if self.streams[TOKEN_STREAM] else self.origin_ms
        n_windows = max(0, int(math.floor((end_ms - self.origin_ms) / (window_s * 1000.0) + 1e-9)))
        self.window_starts = [self.origin_ms + k * window_s * 1000.0 for k in range(n_windows)]
        self.decisions: List[SessionDecision] = []

    # ----- procesos -----

    def _producer(self, name: str):
        store = simpy.Store(self.env)
        self.env.process(self._collector(name, store))
        for chunk in self.streams[name]:
            ready = chunk.t_end_ms - self.origin_ms
            if ready > self.env.now:
                yield self.env.timeout(ready - self.env.now)
            self.env.process(self._deliver(chunk, store))

    def _deliver(self, chunk: StreamChunk, store: simpy.Store):
        if self.latency.drop_prob > 0 and self.rng.random() < self.latency.drop_prob:
            logger.debug(f"Dropped chunk {chunk.stream_id}@{chunk.t_start_ms:.0f}")
            return
        jitter = self.rng.uniform(-self.latency.jitter_ms, self.latency.jitter_ms) if self.latency.jitter_ms else 0.0
        delay = max(0.0, self.latency.fixed_delay_ms + jitter)
        yield self.env.timeout(delay)
        yield store.put(_Delivered(chunk, delay))

    def _collector(self, name: str, store: simpy.Store):
        while True:
            item = yield store.get()
            self.buffers[name].append(item)

    def _decider(self):
        window_ms = self.window_s * 1000.0
        slack = self.latency.fixed_delay_ms + self.latency.jitter_ms + self.latency.chunk_s * 1000.0
        for start in self.window_starts:
            wake = start - self.origin_ms + window_ms + slack
            if wake > self.env.now:
                yield self.env.timeout(wake - self.env.now)
            for device in sorted(self.streams):
                if device != TOKEN_STREAM:
                    self.decisions.append(self._decide(device, start))
            yield self.env.timeout(self.latency.compute_ms)

    # ----- decisión -----

    def _received(self, name: str) -> List[_Delivered]:
        return sorted(self.buffers[name], key=lambda d: d.chunk.first_index)

    def _transport_delay(self, delivered: Sequence[_Delivered], start: float) -> float:
        end = start + self.window_s * 1000.0
        delays = [d.delay_ms for d in delivered if d.chunk.t_end_ms > start and d.chunk.t_start_ms < end]
        return max(delays, default=0.0)

    def _decide(self, device: str, start: float) -> SessionDecision:
        token_rx, wearable_rx = self._received(TOKEN_STREAM), self._received(device)
        source = self.streams[device][0].source_subject_id if self.streams[device] else self.subject_id
        transport = max(self._transport_delay(token_rx, start), self._transport_delay(wearable_rx, start))
        decision = dict(
            subject_id=self.subject_id,
            wearable_id=device,
            source_subject_id=source,
            adversary=self.adversary,
            window_start_ms=start,
            window_end_ms=start + self.window_s * 1000.0,
            threshold=self.model.threshold,
            transport_delay_ms=transport,
            decision_latency_ms=self.window_s * 1000.0 + transport + self.latency.compute_ms,
        )
        try:
            token, wearable = align_window([d.chunk for d in token_rx], [d.chunk for d in wearable_rx],
                                           start, self.window_s, self.tolerance_ms)
        except InsufficientOverlapError as exc:
            logger.debug(f"{self.subject_id}/{device} window {start:.0f}: {exc}")
            return SessionDecision(**decision, score=None, accept=False, reason=DecisionReason.INSUFFICIENT_DATA)

        if np.isnan(token.samples).any() or np.isnan(wearable.samples).any():
            return SessionDecision(**decision, score=None, accept=False, reason=DecisionReason.MA_REJECTED)
        try:
            token = standardize_smooth(token, self.preprocess.savgol_order, self.preprocess.savgol_window_samples)
            wearable = standardize_smooth(wearable, self.preprocess.savgol_order,
                                          self.preprocess.savgol_window_samples)
            score = predict_score(self.model, extract_pair_features(token, wearable, quality=self.quality))
        except FlatSignalError:
            return SessionDecision(**decision, score=None, accept=False, reason=DecisionReason.MA_REJECTED)
        except (CrossPulseError, ValueError) as exc:
            logger.debug(f"{self.subject_id}/{device} window {start:.0f} not scored: {exc}")
            return SessionDecision(**decision, score=None, accept=False, reason=DecisionReason.INSUFFICIENT_DATA)
        return SessionDecision(**decision, score=score, accept=score >= self.model.threshold,
                               reason=DecisionReason.OK)

    def run(self) -> List[SessionDecision]:
        for name in self.streams:
            self.env.process(self._producer(name))
        done = self.env.process(self._decider())
        self.env.run(until=done)
        accepted = sum(d.accept for d in self.decisions)
        logger.info(
            f"Session {self.subject_id} ({self.adversary.value}): {accepted}/{len(self.decisions)} windows accepted"
        )
        return self.decisions


def run_session(traces: Sequence[ProcessedTrace], subject_id: str, model: GbdtModel,
                latency: LatencyModel = LatencyModel(), adversary: AdversaryMode = AdversaryMode.NONE,
                replay_offset_s: float = 0.0, attacker_subject: Optional[str] = None,
                token_device: Optional[str] = None, wearables: Optional[Sequence[str]] = None,
                window_s: float = 6.0, preprocess: PreprocessConfig = PreprocessConfig(),
                quality: QualityConfig = QualityConfig(),
                tolerance_ms: float = DEFAULT_TOLERANCE_MS) -> List[SessionDecision]:
    """
    Decisiones por ventana de recogida para la sesión de ``subject_id``.

    Modo adversario:
    - baseline: el canal de cada wearable transporta el flujo de otro sujeto
      (``attacker_subject`` o el siguiente sujeto en orden);
    - replay: el flujo del propio sujeto desplazado ``replay_offset_s``.
    """
    adversary = AdversaryMode(adversary)
    if adversary == AdversaryMode.REPLAY and replay_offset_s < 0:
        raise InvalidParamsError(f"Replay offset must be >= 0, got {replay_offset_s}")
    by_key = {(t.subject_id, t.device_id): t for t in traces}
    own = [t for t in traces if t.subject_id == subject_id]
    if not own:
        raise InvalidParamsError(f"No traces for subject {subject_id}")

    if token_device is None:
        tokens = sorted(t.device_id for t in own if t.device_kind == DeviceKind.TOKEN)
        if not tokens:
            raise InvalidParamsError(f"Subject {subject_id} has no token trace")
        token_device = tokens[0]
    token = by_key.get((subject_id, token_device))
    if token is None:
        raise InvalidParamsError(f"Subject {subject_id} has no trace for token device {token_device}")
    devices = sorted(t.device_id for t in own if t.device_id != token_device)
    if wearables is not None:
        devices = [d for d in devices if d in set(wearables)]

    source = subject_id
    if adversary == AdversaryMode.BASELINE:
        subjects = sorted({t.subject_id for t in traces})
        source = attacker_subject or subjects[(subjects.index(subject_id) + 1) % len(subjects)]
        if source == subject_id:
            raise InvalidParamsError("Baseline attack needs a different attacker subject")
    streams = {d: by_key[(source, d)] for d in devices if (source, d) in by_key}

    # rejilla de ventanas: la del sujeto legítimo, como en la evaluación offline
    origin = min(t.t0_ms for t in own)
    session = StreamSession(token, streams, model, latency, window_s, adversary, replay_offset_s,
                            preprocess, quality, tolerance_ms, origin_ms=origin)
    return session.run()


# ==================== AGREGACIÓN ====================

def aggregate_decisions(decisions: Sequence[SessionDecision], k: int, n: int) -> List[AggregatedDecision]:
    """Acepta un wearable cuando al menos k de sus últimas n ventanas fueron aceptadas"""
    if not 1 <= k <= n:
        raise InvalidParamsError(f"k-of-n needs 1 <= k <= n, got k={k}, n={n}")
    streams: Dict[Tuple[str, str, AdversaryMode], List[SessionDecision]] = {}
    for d in decisions:
        streams.setdefault((d.subject_id, d.wearable_id, d.adversary), []).append(d)

    out = []
    for (subject, wearable, adversary), items in sorted(streams.items(), key=lambda kv: (kv[0][0], kv[0][1],
                                                                                          kv[0][2].value)):
        items = sorted(items, key=lambda d: d.window_start_ms)
        accepts = np.array([d.accept for d in items], dtype=int)
        for i in range(n - 1, len(items)):
            count = int(accepts[i - n + 1:i + 1].sum())
            out.append(AggregatedDecision(
                subject_id=subject,
                wearable_id=wearable,
                adversary=adversary,
                window_end_ms=items[i].window_end_ms,
                accepted_windows=count,
                n=n,
                k=k,
                accept=count >= k,
            ))
    return out


def summarize_sessions(decisions: Sequence[SessionDecision]) -> SessionSummary:
    """Tasas de aceptación legítima y adversaria y su BAC"""
    legit = [d.accept for d in decisions if d.adversary == AdversaryMode.NONE]
    attack = [d.accept for d in decisions if d.adversary != AdversaryMode.NONE]
    legit_rate = float(np.mean(legit)) if legit else None
    attack_rate = float(np.mean(attack)) if attack else None
    bac = None
    if legit_rate is not None and attack_rate is not None:
        bac = 0.5 * (legit_rate + 1.0 - attack_rate)
    latencies = [d.decision_latency_ms for d in decisions if d.reason == DecisionReason.OK]
    return SessionSummary(
        n_decisions=len(decisions),
        legit_accept_rate=legit_rate,
        adversary_accept_rate=attack_rate,
        bac=bac,
        mean_latency_ms=float(np.mean(latencies)) if latencies else None,
        insufficient=sum(d.reason == DecisionReason.INSUFFICIENT_DATA for d in decisions),
        ma_rejected=sum(d.reason == DecisionReason.MA_REJECTED for d in decisions),
    )
