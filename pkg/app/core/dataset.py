#!/usr/bin/env python3
"""
Construcción de pares etiquetados y particiones LOSO.

Los positivos unen un segmento del token con el segmento simultáneo de un
wearable del mismo sujeto; los negativos se muestrean (con semilla) entre
segmentos de token y wearables de otros sujetos.
"""
import logging
import warnings
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import LeaveOneGroupOut

from app.config.pipeline import PairPolicy
from app.core.exceptions import (
    InvalidParamsError,
    NoPositivePairsError,
    NoTokenDeviceError,
    OffsetExceedsRecordingWarning,
    TooFewSubjectsError,
)
from app.core.frontend import feature_windows
from app.models.dataset import (
    NEGATIVE,
    POSITIVE,
    Corpus,
    LosoSplit,
    PairManifest,
    PairRecord,
    PairSet,
    SegmentPair,
)
from app.models.signal import DeviceKind, ProcessedTrace, Segment, SegmentRef

logger = logging.getLogger(__name__)


# ==================== CORPUS ====================

def build_corpus(processed: Iterable[ProcessedTrace], window_s: float, hop_s: float,
                 origins: Optional[Dict[str, float]] = None, savgol_order: int = 3,
                 savgol_window: int = 11) -> Corpus:
    """
    Corta las ventanas de características de cada traza procesada.

    Todas las trazas de un sujeto comparten origen de ventaneo (por defecto el
    menor ``t0_ms`` del sujeto) para que las ventanas de distintos
    dispositivos queden sincronizadas.
    """
    processed = list(processed)
    if origins is None:
        origins = {}
        for trace in processed:
            current = origins.get(trace.subject_id)
            origins[trace.subject_id] = trace.t0_ms if current is None else min(current, trace.t0_ms)

    segments: Dict[str, Dict[str, List[Segment]]] = {}
    kinds: Dict[str, DeviceKind] = {}
    for trace in processed:
        kinds[trace.device_id] = trace.device_kind
        windows = feature_windows(trace, window_s, hop_s, origins.get(trace.subject_id), savgol_order, savgol_window)
        # varias sesiones (posturas) del mismo dispositivo se concatenan
        merged = segments.setdefault(trace.subject_id, {}).setdefault(trace.device_id, [])
        merged.extend(windows)
        merged.sort(key=lambda s: s.start_time)

    corpus = Corpus(segments=segments, device_kinds=kinds)
    corpus.validate()
    logger.info(f"Corpus built: {len(corpus.subjects)} subjects, {len(kinds)} devices, {len(corpus)} segments")
    return corpus


def filter_corpus(corpus: Corpus, exclude_device: Optional[str] = None, posture: Optional[str] = None,
                  subjects: Optional[Iterable[str]] = None) -> Corpus:
    """Subcorpus sin un dispositivo, con una postura o restringido a ciertos sujetos"""
    keep = set(subjects) if subjects is not None else None
    filtered: Dict[str, Dict[str, List[Segment]]] = {}
    for subject, devices in corpus.segments.items():
        if keep is not None and subject not in keep:
            continue
        for device, segs in devices.items():
            if device == exclude_device:
                continue
            if posture is not None:
                segs = [s for s in segs if s.tags.get("posture") == posture]
            if segs:
                filtered.setdefault(subject, {})[device] = list(segs)
    kinds = {d: k for d, k in corpus.device_kinds.items() if d != exclude_device}
    return Corpus(segments=filtered, device_kinds=kinds)


def resolve_devices(corpus: Corpus, policy: PairPolicy) -> Tuple[str, List[str]]:
    """Dispositivo token y lista de wearables según la política"""
    if policy.token_device is not None:
        if policy.token_device not in corpus.device_kinds:
            raise NoTokenDeviceError(f"Token device '{policy.token_device}' not present in corpus")
        token = policy.token_device
    else:
        tokens = [d for d in corpus.devices if corpus.device_kinds[d] == DeviceKind.TOKEN]
        if not tokens:
            raise NoTokenDeviceError(f"No device tagged as token among {corpus.devices}")
        token = tokens[0]

    others = [d for d in corpus.devices if d != token]
    if policy.wearables is not None:
        unknown = sorted(set(policy.wearables) - set(others))
        if unknown:
            logger.warning(f"Ignoring wearables not present in corpus: {unknown}")
        others = [d for d in others if d in set(policy.wearables)]
    return token, others


# ==================== PARES ====================

def _nearest(starts: np.ndarray, target: float) -> int:
    """Índice del inicio más cercano a ``target`` (el anterior en caso de empate)"""
    pos = int(np.searchsorted(starts, target))
    if pos == 0:
        return 0
    if pos == starts.shape[0]:
        return pos - 1
    return pos - 1 if target - starts[pos - 1] <= starts[pos] - target else pos


def _match_positives(corpus: Corpus, token: str, wearables: Sequence[str], subjects: Sequence[str],
                     tolerance_ms: float, offset_ms: float = 0.0,
                     token_filter=None) -> List[SegmentPair]:
    pairs = []
    for subject in subjects:
        devices = corpus.segments.get(subject, {})
        token_segs = devices.get(token, [])
        if token_filter is not None:
            token_segs = [s for s in token_segs if token_filter(s)]
        for wearable in wearables:
            wear_segs = devices.get(wearable, [])
            if not wear_segs or not token_segs:
                continue
            starts = np.array([s.start_time for s in wear_segs])
            for seg in token_segs:
                target = seg.start_time + offset_ms
                j = _nearest(starts, target)
                if abs(starts[j] - target) <= tolerance_ms:
                    pairs.append(SegmentPair(seg.ref, wear_segs[j].ref, POSITIVE))
    return pairs


def _negative_blocks(corpus: Corpus, token: str, wearables: Sequence[str],
                     subjects: Sequence[str]) -> List[Tuple[List[SegmentRef], List[SegmentRef]]]:
    """Bloques (tokens del sujeto s, wearables de los demás sujetos)"""
    blocks = []
    for subject in subjects:
        tokens = [s.ref for s in corpus.segments.get(subject, {}).get(token, [])]
        others = [
            s.ref
            for other in corpus.subjects if other != subject
            for wearable in wearables
            for s in corpus.segments[other].get(wearable, [])
        ]
        if tokens and others:
            blocks.append((tokens, others))
    return blocks


def _sample_negatives(blocks, k: Optional[int], rng: np.random.Generator) -> List[SegmentPair]:
    """Muestreo uniforme sin reemplazo sobre el espacio aplanado de bloques"""
    sizes = np.array([len(t) * len(w) for t, w in blocks], dtype=np.int64)
    total = int(sizes.sum())
    if k is None or k >= total:
        flat = np.arange(total, dtype=np.int64)
    else:
        flat = np.sort(rng.choice(total, size=k, replace=False))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    pairs = []
    for index in flat:
        b = int(np.searchsorted(bounds, index, side="right")) - 1
        tokens, wears = blocks[b]
        offset = int(index - bounds[b])
        pairs.append(SegmentPair(tokens[offset // len(wears)], wears[offset % len(wears)], NEGATIVE))
    return pairs


def build_pairs(corpus: Corpus, policy: PairPolicy = PairPolicy(),
                anchor_subjects: Optional[Iterable[str]] = None) -> PairSet:
    """
    Pares positivos síncronos y negativos entre sujetos.

    Args:
        corpus: segmentos estandarizados por sujeto y dispositivo.
        policy: tolerancia de sincronía, dispositivos, balanceo y semilla.
        anchor_subjects: sujetos cuyos segmentos de token anclan los pares
            (por defecto todos).

    Raises:
        NoTokenDeviceError: no hay dispositivo token.
        NoPositivePairsError: ningún par simultáneo dentro de la tolerancia.
    """
    token, wearables = resolve_devices(corpus, policy)
    subjects = sorted(anchor_subjects) if anchor_subjects is not None else corpus.subjects
    rng = np.random.default_rng(policy.rng_seed)

    positives = _match_positives(corpus, token, wearables, subjects, policy.sync_tolerance_ms)
    if not positives:
        raise NoPositivePairsError(
            f"No synchronous {token}/wearable segments within {policy.sync_tolerance_ms} ms"
        )

    blocks = _negative_blocks(corpus, token, wearables, subjects)
    available = sum(len(t) * len(w) for t, w in blocks)
    wanted = int(round(len(positives) * policy.negative_ratio)) if policy.balance else None
    negatives = _sample_negatives(blocks, wanted, rng)

    if policy.balance and available < wanted:
        n_keep = int(round(available / policy.negative_ratio))
        keep = np.sort(rng.choice(len(positives), size=n_keep, replace=False))
        logger.warning(f"Only {available} negative candidates; keeping {n_keep} of {len(positives)} positives")
        positives = [positives[i] for i in keep]

    pairset = PairSet(
        pairs=tuple(positives + negatives),
        provenance={
            "policy": policy.model_dump(mode="json"),
            "seed": policy.rng_seed,
            "token_device": token,
            "wearables": list(wearables),
            "anchor_subjects": list(subjects),
        },
    )
    logger.info(f"Built {pairset.n_positive} positive and {pairset.n_negative} negative pairs (token={token})")
    return pairset


def balance_pairs(pairset: PairSet, seed: int, negative_ratio: float = 1.0) -> PairSet:
    """Iguala negativos a round(ratio·positivos); si faltan negativos se descartan positivos"""
    positives = [p for p in pairset if p.label == POSITIVE]
    negatives = [p for p in pairset if p.label == NEGATIVE]
    rng = np.random.default_rng(seed)
    wanted = int(round(len(positives) * negative_ratio))
    if len(negatives) >= wanted:
        keep = np.sort(rng.choice(len(negatives), size=wanted, replace=False))
        negatives = [negatives[i] for i in keep]
    else:
        n_keep = int(round(len(negatives) / negative_ratio))
        keep = np.sort(rng.choice(len(positives), size=n_keep, replace=False))
        positives = [positives[i] for i in keep]
    provenance = dict(pairset.provenance, balance_seed=seed)
    return PairSet(pairs=tuple(positives + negatives), provenance=provenance)


def restrict_pairs(pairset: PairSet, subjects: Iterable[str]) -> PairSet:
    """Pares cuyos dos segmentos pertenecen a ``subjects``"""
    keep = set(subjects)
    pairs = tuple(p for p in pairset if p.a.subject_id in keep and p.b.subject_id in keep)
    return PairSet(pairs=pairs, provenance=dict(pairset.provenance))


def build_replay_pairs(corpus: Corpus, offset_s: float, policy: PairPolicy = PairPolicy(),
                       anchor_subjects: Optional[Iterable[str]] = None,
                       token_hop_s: Optional[float] = None) -> PairSet:
    """
    Pares de repetición: segmento de token frente al segmento del wearable del
    mismo sujeto que empieza ``offset_s`` segundos después. Se etiquetan como
    positivos (el ataque reclama legitimidad).

    Con ``token_hop_s`` solo se usan los segmentos de token alineados con ese
    salto, lo que permite emparejar un corpus denso con tokens de prueba.
    """
    if offset_s < 0:
        raise InvalidParamsError(f"Replay offset must be >= 0, got {offset_s}")
    token, wearables = resolve_devices(corpus, policy)
    subjects = sorted(anchor_subjects) if anchor_subjects is not None else corpus.subjects

    token_filter = None
    if token_hop_s is not None:
        hop_ms = token_hop_s * 1000.0
        firsts = {
            s: corpus.segments[s][token][0].start_time
            for s in subjects if corpus.segments.get(s, {}).get(token)
        }

        def token_filter(seg: Segment) -> bool:
            k = (seg.start_time - firsts[seg.subject_id]) / hop_ms
            return abs(k - round(k)) < 1e-6

    pairs = _match_positives(corpus, token, wearables, subjects, policy.sync_tolerance_ms,
                             offset_ms=offset_s * 1000.0, token_filter=token_filter)
    if not pairs:
        message = f"No replay pairs at offset {offset_s} s: offset exceeds the recordings"
        logger.warning(message)
        warnings.warn(message, OffsetExceedsRecordingWarning)
    return PairSet(
        pairs=tuple(pairs),
        provenance={"offset_s": offset_s, "token_device": token, "wearables": list(wearables)},
    )


# ==================== PARTICIONES ====================

def loso_splits(corpus: Corpus, exclude_device: Optional[str] = None) -> List[LosoSplit]:
    """Una partición por sujeto; ``exclude_device`` se retira solo del entrenamiento"""
    subjects = np.array(corpus.subjects, dtype=object)
    if subjects.shape[0] < 2:
        raise TooFewSubjectsError(f"LOSO needs >= 2 subjects, got {subjects.shape[0]}")
    splits = []
    for train_idx, test_idx in LeaveOneGroupOut().split(subjects, groups=subjects):
        splits.append(LosoSplit(
            train_subjects=tuple(subjects[train_idx]),
            test_subject=str(subjects[test_idx][0]),
            excluded_device=exclude_device,
        ))
    return splits


# ==================== MANIFIESTO ====================

def pairset_to_manifest(pairset: PairSet) -> PairManifest:
    return PairManifest(
        provenance=dict(pairset.provenance),
        pairs=[
            PairRecord(
                subject_a=p.a.subject_id, device_a=p.a.device_id, t_a=p.a.start_ms,
                subject_b=p.b.subject_id, device_b=p.b.device_id, t_b=p.b.start_ms,
                label=p.label,
            )
            for p in pairset
        ],
    )


def pairset_from_manifest(manifest: PairManifest) -> PairSet:
    pairs = tuple(
        SegmentPair(
            SegmentRef(r.subject_a, r.device_a, r.t_a),
            SegmentRef(r.subject_b, r.device_b, r.t_b),
            r.label,
        )
        for r in manifest.pairs
    )
    return PairSet(pairs=pairs, provenance=dict(manifest.provenance))
