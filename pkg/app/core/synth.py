#!/usr/bin/env python3
"""
Generador sintético de corpus PPG multi-sujeto y multi-dispositivo.

Cada sujeto tiene un único conductor cardíaco (serie RR autorregresiva AR(1)
y amplitudes por latido) que todos sus dispositivos observan con su propio
retardo de tránsito, morfología, ruido y reloj. Es la verdad de referencia de
las pruebas de extremo a extremo.
"""
import logging
import math
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.signal import butter, lfilter, sosfiltfilt

from app.config.pipeline import PairPolicy
from app.core.dataset import build_pairs
from app.core.exceptions import FlatSignalError, InvalidParamsError, WindowOutOfRangeError
from app.models.dataset import POSITIVE, Corpus
from app.models.signal import DeviceKind, PpgTrace
from app.models.synth import ArtifactKind, SiteParams, SubjectParams, SyntheticCorpus
from app.utils.helpers import derive_seeds
from app.utils.statistics import pearson_correlation

logger = logging.getLogger(__name__)

T0_MS = 1_700_000_000_000.0
MIN_DURATION_S = 30.0
RR_RANGE_S = (0.6, 1.25)
HR_RANGE_BPM = (50.0, 95.0)
MAX_CLOCK_OFFSET_MS = 40.0
SESSION_GAP_S = 60.0
SYSTOLIC_RISE_S = 0.15
_RR_BURN_IN = 50
_NOISE_BAND_HZ = (0.5, 2.0)
_BURST_BAND_HZ = (0.3, 4.0)
_WANDER_ARTIFACT_HZ = 0.15

# (escala de amplitud, escala de ruido) por postura
POSTURE_EFFECTS: Dict[str, tuple] = {
    "sitting": (1.0, 1.0),
    "standing": (0.7, 1.5),
    "lying": (1.1, 0.8),
}

DEVICE_CATALOG: Dict[str, SiteParams] = {
    "phone": SiteParams(device_id="phone", device_kind=DeviceKind.TOKEN, rate=30.0, n_channels=1,
                        transit_delay_s=0.08, invert=True),
    "ring": SiteParams(device_id="ring", rate=100.0, n_channels=3, transit_delay_s=0.14, channel_noise_step=0.5),
    "band": SiteParams(device_id="band", rate=50.0, transit_delay_s=0.18),
    "glasses": SiteParams(device_id="glasses", rate=50.0, transit_delay_s=0.10),
    "earphone": SiteParams(device_id="earphone", rate=100.0, transit_delay_s=0.11),
}


def catalog_sites(devices: Union[int, Sequence[str]] = 2) -> List[SiteParams]:
    """Primeros ``n`` dispositivos del catálogo, o los nombrados (el token es obligatorio)"""
    names = list(DEVICE_CATALOG)
    if isinstance(devices, int):
        if not 2 <= devices <= len(names):
            raise InvalidParamsError(f"devices must be between 2 and {len(names)}, got {devices}")
        chosen = names[:devices]
    else:
        chosen = list(devices)
        unknown = [d for d in chosen if d not in DEVICE_CATALOG]
        if unknown:
            raise InvalidParamsError(f"Unknown synthetic devices {unknown}; known: {names}")
        if len(set(chosen)) != len(chosen) or len(chosen) < 2:
            raise InvalidParamsError(f"Need >= 2 distinct devices, got {chosen}")
    sites = [DEVICE_CATALOG[name] for name in chosen]
    if not any(site.device_kind == DeviceKind.TOKEN for site in sites):
        raise InvalidParamsError(f"Device list {chosen} has no token device")
    return sites


# ==================== CONDUCTOR CARDÍACO ====================

def rr_series(params: SubjectParams, n_beats: int, rng: np.random.Generator) -> np.ndarray:
    """Intervalos RR de un proceso AR(1) alrededor de 60/HR, recortados al rango fisiológico"""
    rho = params.rr_autocorrelation
    innovations = rng.standard_normal(n_beats + _RR_BURN_IN) * params.hrv_std_s * math.sqrt(1.0 - rho ** 2)
    deviations = lfilter([1.0], [1.0, -rho], innovations)[_RR_BURN_IN:]
    return np.clip(60.0 / params.base_hr_bpm + deviations, *RR_RANGE_S)


def _beat_schedule(params: SubjectParams, duration_s: float, rng: np.random.Generator):
    # cubre [-2 s, duración + 2 s] con el RR mínimo
    n_beats = int(math.ceil((duration_s + 4.0) / RR_RANGE_S[0])) + 1
    rr = rr_series(params, n_beats, rng)
    beats = -2.0 + np.concatenate([[0.0], np.cumsum(rr[:-1])])
    amplitudes = 1.0 + params.beat_amplitude_std * rng.standard_normal(beats.shape[0])
    keep = beats <= duration_s + 2.0
    return beats[keep], amplitudes[keep]


def _gaussian_train(t: np.ndarray, centers: np.ndarray, amplitudes: np.ndarray, width: float) -> np.ndarray:
    out = np.zeros_like(t)
    reach = 5.0 * width
    lo = np.searchsorted(t, centers - reach)
    hi = np.searchsorted(t, centers + reach)
    for center, amp, a, b in zip(centers, amplitudes, lo, hi):
        if b > a:
            out[a:b] += amp * np.exp(-0.5 * ((t[a:b] - center) / width) ** 2)
    return out


def render_pulse(t: np.ndarray, beats: np.ndarray, amplitudes: np.ndarray, params: SubjectParams,
                 delay_s: float = 0.0, width_scale: float = 1.0, ratio_scale: float = 1.0) -> np.ndarray:
    """Tren de latidos de dos gaussianas (sistólica + dicrótica) muestreado en ``t`` (s)"""
    systolic = beats + delay_s + SYSTOLIC_RISE_S
    pulse = _gaussian_train(t, systolic, amplitudes, params.systolic_width_s * width_scale)
    dicrotic_ratio = min(1.0, params.dicrotic_ratio * ratio_scale)
    pulse += _gaussian_train(t, systolic + params.dicrotic_delay_s, amplitudes * dicrotic_ratio,
                             params.dicrotic_width_s * width_scale)
    return pulse


def _band_noise(n: int, rate: float, band, rng: np.random.Generator) -> np.ndarray:
    """Ruido blanco filtrado a ``band`` y normalizado a std 1"""
    white = rng.standard_normal(n)
    hi = min(band[1], 0.45 * rate)
    sos = butter(2, [band[0], hi], btype="band", fs=rate, output="sos")
    noise = sosfiltfilt(sos, white) if n > 3 * (2 * sos.shape[0] + 1) else white
    std = noise.std()
    return noise / std if std > 0 else noise


def _inband_std(x: np.ndarray, rate: float) -> float:
    sos = butter(2, [_NOISE_BAND_HZ[0], min(_NOISE_BAND_HZ[1], 0.45 * rate)], btype="band", fs=rate, output="sos")
    return float(sosfiltfilt(sos, x).std())


# ==================== SUJETOS Y CORPUS ====================

def gen_subject(params: SubjectParams, sites: Sequence[SiteParams], duration_s: float,
                subject_id: str = "s01", t0_ms: float = T0_MS, posture: str = "sitting",
                session: int = 0) -> List[PpgTrace]:
    """
    Renderiza una sesión de un sujeto en cada sitio.

    Una única serie RR alimenta todos los sitios; cada sitio añade su retardo,
    escala, perturbación morfológica, ruido en banda, deriva de línea base,
    desfase de reloj (0-40 ms) y jitter de marcas de tiempo.

    Raises:
        InvalidParamsError: duración < 30 s, sin sitios o postura desconocida.
    """
    if duration_s < MIN_DURATION_S:
        raise InvalidParamsError(f"Synthetic sessions need >= {MIN_DURATION_S} s, got {duration_s}")
    if not sites:
        raise InvalidParamsError("gen_subject needs at least one site")
    if posture not in POSTURE_EFFECTS:
        raise InvalidParamsError(f"Unknown posture {posture!r}; known: {sorted(POSTURE_EFFECTS)}")
    amp_scale, noise_scale = POSTURE_EFFECTS[posture]

    rng = np.random.default_rng([params.rng_seed, session])
    beats, amplitudes = _beat_schedule(params, duration_s, rng)

    traces = []
    for site in sites:
        width_scale = 1.0 + site.morphology_jitter * rng.standard_normal()
        ratio_scale = 1.0 + site.morphology_jitter * rng.standard_normal()
        offset_ms = site.clock_offset_ms if site.clock_offset_ms is not None else rng.uniform(0, MAX_CLOCK_OFFSET_MS)

        n = int(round(duration_s * site.rate))
        t = offset_ms / 1000.0 + np.arange(n) / site.rate
        pulse = render_pulse(t, beats, amplitudes, params, site.transit_delay_s, max(width_scale, 0.5), ratio_scale)
        pulse_std = float(pulse.std())
        inband = _inband_std(pulse, site.rate)

        wander_phase = rng.uniform(0, 2 * np.pi)
        wander = site.wander_amplitude * pulse_std * np.sin(2 * np.pi * site.wander_hz * t + wander_phase)
        channels = np.empty((site.n_channels, n))
        for c in range(site.n_channels):
            level = site.noise_sigma * noise_scale * (1.0 + site.channel_noise_step * c)
            noise = level * inband * _band_noise(n, site.rate, _NOISE_BAND_HZ, rng)
            floor = site.noise_floor * pulse_std * rng.standard_normal(n)
            channels[c] = site.amplitude * amp_scale * (pulse + wander + noise + floor)

        jitter = min(site.timestamp_jitter_ms, 0.4 * 1000.0 / site.rate)
        timestamps = t0_ms + 1000.0 * t + rng.uniform(-jitter, jitter, size=n)

        traces.append(PpgTrace(
            subject_id=subject_id,
            device_id=site.device_id,
            device_kind=site.device_kind,
            channels=channels,
            timestamps=timestamps,
            nominal_rate=site.rate,
            polarity_inverted=site.invert,
            tags={"posture": posture, "session": str(session)},
        ))
    logger.debug(f"Generated {subject_id} ({posture}): {len(beats)} beats at {params.base_hr_bpm:.1f} bpm")
    return traces


def stratified_heart_rates(n_subjects: int, rng: np.random.Generator) -> np.ndarray:
    """Una HR por estrato de [50, 95] bpm, con separación mínima de 1 bpm, en orden aleatorio"""
    lo, hi = HR_RANGE_BPM
    width = (hi - lo) / n_subjects
    if width < 1.0:
        raise InvalidParamsError(f"At most {int(hi - lo)} subjects fit distinct heart rates, got {n_subjects}")
    margin = min(0.5, width / 2.0)
    edges = lo + width * np.arange(n_subjects)
    rates = rng.uniform(edges + margin, edges + width - margin)
    return rng.permutation(rates)


def sample_subject_params(base_hr_bpm: float, rng_seed: int, rng: np.random.Generator) -> SubjectParams:
    return SubjectParams(
        base_hr_bpm=float(base_hr_bpm),
        hrv_std_s=float(rng.uniform(0.02, 0.045)),
        rr_autocorrelation=float(rng.uniform(0.5, 0.85)),
        systolic_width_s=float(rng.uniform(0.06, 0.10)),
        dicrotic_width_s=float(rng.uniform(0.08, 0.14)),
        dicrotic_delay_s=float(rng.uniform(0.25, 0.35)),
        dicrotic_ratio=float(rng.uniform(0.2, 0.6)),
        rng_seed=int(rng_seed),
    )


def gen_corpus(n_subjects: int, devices: Union[int, Sequence[str]] = 2, duration_s: float = 600.0,
               master_seed: int = 0, postures: Sequence[str] = ("sitting",),
               sites: Optional[Sequence[SiteParams]] = None) -> SyntheticCorpus:
    """
    Corpus de ``n_subjects`` sujetos; las semillas por sujeto derivan de la
    semilla maestra, así la generación de cada sujeto es independiente.
    """
    if n_subjects < 2:
        raise InvalidParamsError(f"gen_corpus needs >= 2 subjects, got {n_subjects}")
    sites = list(sites) if sites is not None else catalog_sites(devices)
    seeds = derive_seeds(master_seed, n_subjects + 1)
    population_rng = np.random.default_rng(seeds[-1])
    heart_rates = stratified_heart_rates(n_subjects, population_rng)

    digits = max(2, len(str(n_subjects)))
    subjects: Dict[str, SubjectParams] = {}
    traces: List[PpgTrace] = []
    for i in range(n_subjects):
        subject_id = f"s{i + 1:0{digits}d}"
        params = sample_subject_params(heart_rates[i], seeds[i], population_rng)
        subjects[subject_id] = params
        for session, posture in enumerate(postures):
            t0 = T0_MS + session * (duration_s + SESSION_GAP_S) * 1000.0
            traces.extend(gen_subject(params, sites, duration_s, subject_id, t0, posture, session))

    corpus = SyntheticCorpus(traces=traces, subjects=subjects, sites=sites, master_seed=master_seed,
                             postures=list(postures))
    corpus.validate()
    logger.info(
        f"Synthetic corpus: {n_subjects} subjects x {len(sites)} devices x {len(postures)} postures, "
        f"{duration_s:.0f} s each (seed {master_seed})"
    )
    return corpus


# ==================== ARTEFACTOS ====================

def inject_artifact(trace: PpgTrace, kind: Union[ArtifactKind, str], t_start_s: float, dur_s: float,
                    magnitude: float, seed: int = 0) -> PpgTrace:
    """
    Inserta un artefacto de movimiento en [t_start_s, t_start_s + dur_s)
    (segundos desde el inicio de la traza). Fuera de la ventana la traza no cambia.

    - burst: ruido de banda limitada con std = magnitude × std del canal;
    - dropout: la ventana se escala por (1 − magnitude), magnitude ∈ [0, 1];
    - wander: sinusoide lenta de amplitud magnitude × std del canal.
    """
    kind = ArtifactKind(kind)
    if dur_s <= 0 or t_start_s < 0 or t_start_s + dur_s > trace.duration_s + 1e-9:
        raise WindowOutOfRangeError(
            f"Artifact window [{t_start_s}, {t_start_s + dur_s}] s outside trace of {trace.duration_s:.2f} s"
        )
    if magnitude < 0 or (kind == ArtifactKind.DROPOUT and magnitude > 1):
        raise InvalidParamsError(f"Invalid {kind.value} magnitude {magnitude}")

    elapsed = (trace.timestamps - trace.t0) / 1000.0
    mask = (elapsed >= t_start_s) & (elapsed < t_start_s + dur_s)
    channels = trace.channels.copy()
    rng = np.random.default_rng(seed)
    for c in range(trace.n_channels):
        std = float(trace.channels[c].std())
        if kind == ArtifactKind.BURST:
            noise = _band_noise(trace.n_samples, trace.nominal_rate, _BURST_BAND_HZ, rng)[mask]
            noise = noise / noise.std() if noise.size > 1 and noise.std() > 0 else noise
            channels[c, mask] += magnitude * std * noise
        elif kind == ArtifactKind.DROPOUT:
            channels[c, mask] *= 1.0 - magnitude
        else:
            channels[c, mask] += magnitude * std * np.sin(2 * np.pi * _WANDER_ARTIFACT_HZ * elapsed[mask])

    logger.debug(
        f"Injected {kind.value} x{magnitude} into {trace.subject_id}/{trace.device_id} "
        f"at {t_start_s:.1f}-{t_start_s + dur_s:.1f} s ({int(mask.sum())} samples)"
    )
    return replace(trace, channels=channels, tags=dict(trace.tags))


# ==================== CALIBRACIÓN ====================

def calibration_report(corpus: Corpus, policy: PairPolicy = PairPolicy()) -> Dict[str, float]:
    """
    Pearson medio de pares intra-sujeto (simultáneos) e inter-sujeto sobre las
    ventanas estandarizadas del corpus procesado.
    """
    pairset = build_pairs(corpus, policy)
    intra: List[float] = []
    inter: List[float] = []
    for pair in pairset:
        try:
            r = pearson_correlation(corpus.lookup(pair.a).samples, corpus.lookup(pair.b).samples)
        except FlatSignalError:
            continue
        (intra if pair.label == POSITIVE else inter).append(r)

    report = {
        "intra_mean": float(np.mean(intra)) if intra else float("nan"),
        "inter_mean": float(np.mean(inter)) if inter else float("nan"),
        "n_intra": len(intra),
        "n_inter": len(inter),
    }
    logger.info(
        f"Calibration: intra-subject Pearson {report['intra_mean']:.3f} ({len(intra)} pairs), "
        f"inter-subject {report['inter_mean']:.3f} ({len(inter)} pairs)"
    )
    return report
