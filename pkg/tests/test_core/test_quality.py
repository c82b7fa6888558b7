import numpy as np
import pytest

from app.core.exceptions import AllChannelsInvalidError, FlatSignalError, NoBeatsError
from app.core.quality import (
    best_channel_index,
    channel_quality_score,
    classify_artifact,
    detect_beats,
    mitigate_weak,
    pass_rate_by_device,
    quality_metrics,
    select_best_channel,
)
from app.core.signal_core import bandpass
from app.models.quality import ArtifactClass, BeatSet, QualityMetrics, WindowQuality

RATE = 60.0


def _metrics(S=0.0, K=0.0, R=0.5, T=0.5):
    return QualityMetrics(skewness=S, kurtosis=K, relative_power=R, template_match=T)


def _beats(corrs, rr):
    rr = np.asarray(rr, dtype=float)
    peaks = np.concatenate([[30], 30 + np.cumsum(np.round(rr * RATE))]).astype(int)
    return BeatSet(
        peak_indices=peaks,
        onset_indices=peaks - 15,
        rr_intervals_s=rr,
        per_beat_template_corr=np.asarray(corrs, dtype=float),
        rate=RATE,
    )


# ==================== MÉTRICAS ====================

def test_sinusoid_is_symmetric():
    t = np.arange(720) / RATE
    metrics = quality_metrics(np.sin(2 * np.pi * t), RATE)
    assert abs(metrics.skewness) <= 1e-6


def test_pure_sinusoid_scores_high():
    t = np.arange(720) / RATE
    metrics = quality_metrics(np.sin(2 * np.pi * 1.2 * t), RATE)
    assert metrics.relative_power >= 0.95
    assert metrics.template_match >= 0.99


def test_gaussian_noise_kurtosis():
    x = np.random.default_rng(4).standard_normal(3600)
    assert abs(quality_metrics(x, RATE).kurtosis) <= 0.3


def test_flat_signal_rejected():
    with pytest.raises(FlatSignalError):
        quality_metrics(np.zeros(720), RATE)


# ==================== PUNTUACIÓN ====================

@pytest.mark.parametrize("S,expected", [(0.2, 0.88), (1.2, 0.78)])
def test_score_examples(S, expected):
    assert channel_quality_score(_metrics(S=S, K=0.5, R=0.8, T=0.9)) == pytest.approx(expected, abs=1e-12)


def test_score_maximum():
    assert channel_quality_score(_metrics(S=0.0, K=0.0, R=1.0, T=1.0)) == pytest.approx(1.0, abs=1e-12)


def test_score_matches_direct_arithmetic():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        S, K = rng.uniform(-2, 2), rng.uniform(-2, 3)
        R, T = rng.uniform(0, 1), rng.uniform(-1, 1)
        expected = (0.1 * (-0.5 <= S <= 0.8) + 0.1 * (K <= 0.7) + 0.4 * R + 0.4 * min(max(T, 0.0), 1.0))
        assert channel_quality_score(_metrics(S, K, R, T)) == pytest.approx(expected, abs=1e-12)


def test_score_monotone_in_r_and_t():
    base = channel_quality_score(_metrics(R=0.3, T=0.3))
    assert channel_quality_score(_metrics(R=0.6, T=0.3)) >= base
    assert channel_quality_score(_metrics(R=0.3, T=0.6)) >= base
    assert channel_quality_score(_metrics(R=0.3, T=-0.6)) == channel_quality_score(_metrics(R=0.3, T=0.0))


# ==================== SELECCIÓN DE CANAL ====================

def test_best_channel_tie_break():
    assert best_channel_index([0.5, 0.9, 0.9]) == 1
    assert best_channel_index([0.7]) == 0
    assert best_channel_index([None, 0.2]) == 1


def test_best_channel_all_invalid():
    with pytest.raises(AllChannelsInvalidError):
        best_channel_index([None, None])


def test_select_skips_flat_channel(pulse_train):
    _, x = pulse_train()
    index, chosen = select_best_channel([np.zeros_like(x), x], RATE)
    assert index == 1
    np.testing.assert_array_equal(chosen, x)


def test_select_is_permutation_invariant(pulse_train):
    _, clean = pulse_train()
    noisy = clean + np.random.default_rng(6).standard_normal(clean.shape)
    _, first = select_best_channel([clean, noisy], RATE)
    _, second = select_best_channel([noisy, clean], RATE)
    np.testing.assert_array_equal(first, second)


# ==================== LATIDOS ====================

def test_detect_beats_periodic_train(pulse_train):
    _, x = pulse_train(hr_bpm=60.0)
    beats = detect_beats(x, RATE)
    assert 11 <= beats.n_peaks <= 12
    assert np.all((beats.rr_intervals_s >= 0.98) & (beats.rr_intervals_s <= 1.02))
    assert np.all(beats.onset_indices < beats.peak_indices)
    assert np.all(beats.onset_indices[1:] > beats.peak_indices[:-1])


def test_detect_beats_flat():
    with pytest.raises(NoBeatsError):
        detect_beats(np.zeros(720), RATE)


def test_two_bumps_merge_into_one_beat(pulse_train):
    _, x = pulse_train(dicrotic=0.9)
    assert detect_beats(x, RATE).n_peaks == 12


# ==================== TRIAJE ====================

def test_clean_pulse_train_is_clean(pulse_train):
    _, x = pulse_train(noise=0.01)
    metrics = quality_metrics(x, RATE)
    assert classify_artifact(metrics, detect_beats(x, RATE)) == ArtifactClass.CLEAN


def test_clean_variants_are_clean(pulse_train):
    rng = np.random.default_rng(7)
    clean = 0
    for seed in range(100):
        _, x = pulse_train(hr_bpm=rng.uniform(55, 90), dicrotic=rng.uniform(0.2, 0.6), noise=0.01, seed=seed)
        x = bandpass(x, rate=RATE)
        metrics = quality_metrics(x, RATE)
        clean += classify_artifact(metrics, detect_beats(x, RATE)) == ArtifactClass.CLEAN
    assert clean >= 95


def test_white_noise_is_heavy():
    heavy = 0
    for seed in range(100):
        x = np.random.default_rng(seed).standard_normal(720)
        metrics = quality_metrics(x, RATE)
        try:
            beats = detect_beats(x, RATE)
        except NoBeatsError:
            beats = None
        heavy += classify_artifact(metrics, beats) == ArtifactClass.HEAVY
    assert heavy >= 95


def test_weak_rule():
    metrics = _metrics(R=0.6, T=0.7)
    beats = _beats([0.95, 0.9, 0.2, 0.85], [1.0, 0.95, 1.05, 1.0])
    assert classify_artifact(metrics, beats) == ArtifactClass.WEAK


@pytest.mark.parametrize("corrs,rr", [
    ([0.95, 0.3, 0.2, 0.1], [1.0, 0.95, 1.05, 1.0]),
    ([0.95, 0.9, 0.9, 0.9], [1.0, 1.4, 1.0, 1.0]),
    ([0.95, 0.9, 0.9, 0.9], [0.6, 1.2, 0.6, 1.2]),
])
def test_heavy_rule(corrs, rr):
    assert classify_artifact(_metrics(R=0.6, T=0.7), _beats(corrs, rr)) == ArtifactClass.HEAVY


def test_no_beats_is_heavy():
    assert classify_artifact(_metrics(R=0.3, T=0.0), None) == ArtifactClass.HEAVY


# ==================== MITIGACIÓN ====================

def test_mitigation_preserves_clean_signal(pulse_train):
    _, x = pulse_train()
    x = bandpass(x, rate=RATE)
    out = mitigate_weak(x, detect_beats(x, RATE), RATE)
    assert out.shape == x.shape
    assert np.corrcoef(out, x)[0, 1] >= 0.95


def test_mitigation_damps_burst(pulse_train):
    _, x = pulse_train()
    x = bandpass(x, rate=RATE)
    t = np.arange(x.size) / RATE
    burst = (t >= 5.5) & (t < 6.5)
    corrupted = x.copy()
    corrupted[burst] += 2 * x.std() * np.sin(2 * np.pi * 12.0 * t[burst])
    beats = detect_beats(corrupted, RATE)
    out = mitigate_weak(corrupted, beats, RATE)
    before = np.max(np.abs(corrupted[burst] - x[burst]))
    after = np.max(np.abs(out[burst] - x[burst]))
    assert after <= 0.7 * before
    assert detect_beats(out, RATE).n_peaks == detect_beats(x, RATE).n_peaks


def test_pass_rate_by_device():
    records = [
        WindowQuality(subject_id="s", device_id="ring", start_ms=0, artifact_class=ArtifactClass.CLEAN),
        WindowQuality(subject_id="s", device_id="ring", start_ms=1, artifact_class=ArtifactClass.HEAVY),
        WindowQuality(subject_id="s", device_id="phone", start_ms=0, artifact_class=ArtifactClass.WEAK),
    ]
    assert pass_rate_by_device(records) == {"phone": 1.0, "ring": 0.5}
