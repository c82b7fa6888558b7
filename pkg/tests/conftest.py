"""
Fixtures compartidas: trenes de pulso sintéticos, trazas y corpus pequeños.
"""
import numpy as np
import pytest

from app.models.dataset import Corpus
from app.models.signal import DeviceKind, PpgTrace, Segment, Stage


def _pulse_train(hr_bpm: float = 60.0, duration_s: float = 12.0, rate: float = 60.0, noise: float = 0.0,
                 seed: int = 0, dicrotic: float = 0.4, width_s: float = 0.1, phase_s: float = 0.5):
    """Tren de pulsos de dos gaussianas (sistólica + dicrota) con periodo fijo"""
    t = np.arange(int(round(duration_s * rate))) / rate
    period = 60.0 / hr_bpm
    x = np.zeros_like(t)
    for beat in np.arange(phase_s - 2 * period, duration_s + period, period):
        x += np.exp(-0.5 * ((t - beat) / width_s) ** 2)
        x += dicrotic * np.exp(-0.5 * ((t - beat - 0.3) / width_s) ** 2)
    if noise > 0:
        x = x + noise * np.random.default_rng(seed).standard_normal(t.shape)
    return t, x


@pytest.fixture
def pulse_train():
    return _pulse_train


@pytest.fixture
def make_trace():
    """Construye un PpgTrace a partir de muestras y una frecuencia nominal"""
    def _make(samples, rate, subject="s00", device="ring", kind=DeviceKind.WEARABLE, t0_ms=0.0, tags=None):
        channels = np.atleast_2d(np.asarray(samples, dtype=float))
        timestamps = t0_ms + np.arange(channels.shape[1]) * 1000.0 / rate
        return PpgTrace(
            subject_id=subject,
            device_id=device,
            device_kind=kind,
            channels=channels,
            timestamps=timestamps,
            nominal_rate=rate,
            tags=dict(tags or {}),
        )
    return _make


@pytest.fixture
def make_corpus():
    """
    Corpus de segmentos vacíos (solo identidad y tiempo) para pruebas de
    emparejamiento: ``starts[device]`` son los inicios en segundos.
    """
    def _make(subjects=("s1", "s2"), starts=None, token="phone", wearables=("ring",), posture=None):
        starts = starts or {d: [6.0 * k for k in range(5)] for d in (token, *wearables)}
        kinds = {token: DeviceKind.TOKEN, **{w: DeviceKind.WEARABLE for w in wearables}}
        segments = {}
        for subject in subjects:
            segments[subject] = {}
            for device, device_starts in starts.items():
                segments[subject][device] = [
                    Segment(
                        subject_id=subject,
                        device_id=device,
                        device_kind=kinds[device],
                        start_time=1000.0 * s,
                        duration_s=6.0,
                        rate=60.0,
                        samples=np.zeros(360),
                        stage=Stage.STANDARDIZED,
                        tags={"posture": posture(subject, s)} if posture else {},
                    )
                    for s in device_starts
                ]
        return Corpus(segments=segments, device_kinds=kinds)
    return _make
