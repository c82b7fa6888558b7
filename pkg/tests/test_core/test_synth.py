import numpy as np
import pytest

from app.config.pipeline import PairPolicy
from app.core.dataset import build_corpus
from app.core.exceptions import InvalidParamsError, NoBeatsError, WindowOutOfRangeError
from app.core.features import xcorr_peak
from app.core.frontend import preprocess_trace
from app.core.quality import classify_artifact, detect_beats, quality_metrics
from app.core.signal_core import bandpass
from app.core.synth import (
    calibration_report,
    catalog_sites,
    gen_corpus,
    gen_subject,
    inject_artifact,
    rr_series,
    stratified_heart_rates,
)
from app.models.quality import ArtifactClass
from app.models.signal import DeviceKind
from app.models.synth import SiteParams, SubjectParams
from app.utils.statistics import pearson_correlation


def _clean_site(name, delay_s=0.0, kind=DeviceKind.WEARABLE, rate=60.0):
    return SiteParams(device_id=name, device_kind=kind, rate=rate, transit_delay_s=delay_s, morphology_jitter=0.0,
                      noise_sigma=0.0, noise_floor=0.0, wander_amplitude=0.0, clock_offset_ms=0.0,
                      timestamp_jitter_ms=0.0)


# ==================== CATÁLOGO Y CONDUCTOR ====================

def test_catalog_first_devices():
    sites = catalog_sites(2)
    assert [s.device_id for s in sites] == ["phone", "ring"]
    assert sites[0].device_kind == DeviceKind.TOKEN
    assert sites[0].invert
    assert sites[1].n_channels == 3


@pytest.mark.parametrize("devices", [1, 6, ["phone", "watch"], ["ring", "band"], ["phone", "phone"]])
def test_catalog_rejects(devices):
    with pytest.raises(InvalidParamsError):
        catalog_sites(devices)


def test_rr_series_range_and_memory():
    params = SubjectParams(base_hr_bpm=72, hrv_std_s=0.03, rr_autocorrelation=0.7)
    rr = rr_series(params, 5000, np.random.default_rng(0))
    assert rr.min() >= 0.6 and rr.max() <= 1.25
    assert rr.mean() == pytest.approx(60 / 72, abs=0.01)
    assert np.corrcoef(rr[:-1], rr[1:])[0, 1] == pytest.approx(0.7, abs=0.05)


def test_heart_rates_are_separated():
    rates = np.sort(stratified_heart_rates(45, np.random.default_rng(3)))
    assert rates.min() >= 50 and rates.max() <= 95
    assert np.diff(rates).min() >= 1.0 - 1e-9
    with pytest.raises(InvalidParamsError):
        stratified_heart_rates(46, np.random.default_rng(3))


# ==================== SUJETOS ====================

def test_gen_subject_is_deterministic():
    params = SubjectParams(rng_seed=9)
    first = gen_subject(params, catalog_sites(3), 40.0)
    second = gen_subject(params, catalog_sites(3), 40.0)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.channels, b.channels)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)


def test_gen_subject_shapes_and_clock():
    traces = gen_subject(SubjectParams(), catalog_sites(2), 30.0, t0_ms=0.0)
    phone, ring = traces
    assert phone.channels.shape == (1, 900)
    assert ring.channels.shape == (3, 3000)
    assert phone.polarity_inverted
    assert -1.0 <= phone.t0 <= 41.0
    assert np.all(np.diff(ring.timestamps) > 0)
    assert phone.tags == {"posture": "sitting", "session": "0"}


def test_gen_subject_rejects_short_duration():
    with pytest.raises(InvalidParamsError):
        gen_subject(SubjectParams(), catalog_sites(2), 20.0)
    with pytest.raises(InvalidParamsError):
        gen_subject(SubjectParams(), catalog_sites(2), 60.0, posture="running")


def test_identical_clean_sites_match():
    sites = [_clean_site("a", kind=DeviceKind.TOKEN), _clean_site("b")]
    a, b = [preprocess_trace(t) for t in gen_subject(SubjectParams(rng_seed=4), sites, 60.0)]
    valid = ~np.isnan(a.samples) & ~np.isnan(b.samples)
    assert valid.sum() > 0
    assert pearson_correlation(a.samples[valid], b.samples[valid]) >= 0.999


def test_delay_between_sites():
    sites = [_clean_site("a", 0.05, DeviceKind.TOKEN), _clean_site("b", 0.20)]
    a, b = gen_subject(SubjectParams(rng_seed=5), sites, 40.0)
    window = slice(600, 960)
    x = a.channels[0, window] - a.channels[0, window].mean()
    y = b.channels[0, window] - b.channels[0, window].mean()
    _, lag = xcorr_peak(x, y, rate=60.0)
    assert lag == pytest.approx(0.15, abs=1 / 60)


def test_same_driver_correlates_more_than_cross_driver():
    sites = [SiteParams(device_id="glasses", device_kind=DeviceKind.TOKEN, rate=50.0, transit_delay_s=0.10,
                        clock_offset_ms=0.0),
             SiteParams(device_id="band", rate=50.0, transit_delay_s=0.18, clock_offset_ms=0.0)]
    rng = np.random.default_rng(0)
    wins = 0
    for trial in range(200):
        p1 = SubjectParams(base_hr_bpm=rng.uniform(50, 95), rng_seed=2 * trial)
        p2 = SubjectParams(base_hr_bpm=rng.uniform(50, 95), rng_seed=2 * trial + 1)
        token, wearable = [bandpass(t).channels[0, 250:1250] for t in gen_subject(p1, sites, 30.0)]
        _, other = [bandpass(t).channels[0, 250:1250] for t in gen_subject(p2, sites, 30.0)]
        wins += pearson_correlation(token, wearable) > pearson_correlation(token, other)
    assert wins >= 190


# ==================== CORPUS ====================

def test_gen_corpus_shape_and_seeds():
    corpus = gen_corpus(3, devices=2, duration_s=30.0, master_seed=1)
    assert corpus.subject_ids == ["s01", "s02", "s03"]
    assert len(corpus.traces) == 6
    rates = sorted(p.base_hr_bpm for p in corpus.subjects.values())
    assert np.diff(rates).min() >= 1.0
    again = gen_corpus(3, devices=2, duration_s=30.0, master_seed=1)
    np.testing.assert_array_equal(corpus.traces[0].channels, again.traces[0].channels)
    other = gen_corpus(3, devices=2, duration_s=30.0, master_seed=2)
    assert other.traces[0].channels.shape == corpus.traces[0].channels.shape
    assert not np.array_equal(other.traces[0].channels, corpus.traces[0].channels)
    assert corpus.manifest()["master_seed"] == 1


def test_gen_corpus_postures():
    corpus = gen_corpus(2, devices=2, duration_s=30.0, postures=("sitting", "standing"))
    assert len(corpus.traces) == 8
    standing = [t for t in corpus.traces if t.tags["posture"] == "standing"]
    sitting = [t for t in corpus.traces if t.tags["posture"] == "sitting"]
    assert min(t.t0 for t in standing) > max(t.t_end for t in sitting)


def test_gen_corpus_needs_two_subjects():
    with pytest.raises(InvalidParamsError):
        gen_corpus(1)


# ==================== ARTEFACTOS ====================

@pytest.fixture
def clean_trace(pulse_train, make_trace):
    _, x = pulse_train(hr_bpm=66.0, duration_s=24.0)
    return make_trace(x, 60.0)


@pytest.mark.parametrize("kind", ["burst", "dropout", "wander"])
def test_zero_magnitude_is_identity(clean_trace, kind):
    out = inject_artifact(clean_trace, kind, 3.0, 5.0, 0.0)
    np.testing.assert_array_equal(out.channels, clean_trace.channels)


@pytest.mark.parametrize("kind", ["burst", "dropout", "wander"])
def test_outside_window_unchanged(clean_trace, kind):
    out = inject_artifact(clean_trace, kind, 6.0, 2.0, 0.8)
    np.testing.assert_array_equal(out.channels[:, :360], clean_trace.channels[:, :360])
    np.testing.assert_array_equal(out.channels[:, 480:], clean_trace.channels[:, 480:])
    assert not np.array_equal(out.channels[:, 360:480], clean_trace.channels[:, 360:480])


def test_full_dropout_zeroes_window(clean_trace):
    out = inject_artifact(clean_trace, "dropout", 6.0, 2.0, 1.0)
    assert np.all(out.channels[:, 360:480] == 0)
    with pytest.raises(InvalidParamsError):
        inject_artifact(clean_trace, "dropout", 6.0, 2.0, 1.5)


@pytest.mark.parametrize("start,dur", [(-1.0, 2.0), (23.0, 2.0), (5.0, 0.0)])
def test_window_out_of_range(clean_trace, start, dur):
    with pytest.raises(WindowOutOfRangeError):
        inject_artifact(clean_trace, "burst", start, dur, 1.0)


def test_strong_burst_makes_window_heavy(clean_trace):
    heavy = 0
    for seed in range(10):
        noisy = inject_artifact(clean_trace, "burst", 0.0, 24.0, 5.0, seed=seed)
        x = bandpass(noisy).channels[0, 360:1080]
        try:
            beats = detect_beats(x, 60.0)
        except NoBeatsError:
            beats = None
        heavy += classify_artifact(quality_metrics(x, 60.0), beats) == ArtifactClass.HEAVY
    assert heavy >= 8


# ==================== CALIBRACIÓN ====================

def _processed_corpus(synthetic):
    return build_corpus([preprocess_trace(t) for t in synthetic.traces], 6.0, 6.0)


def test_calibration_separates_subjects():
    corpus = _processed_corpus(gen_corpus(4, devices=2, duration_s=120.0, master_seed=3))
    report = calibration_report(corpus)
    assert report["n_intra"] > 0 and report["n_inter"] > 0
    assert report["intra_mean"] > report["inter_mean"]


@pytest.mark.slow
def test_calibration_targets():
    corpus = _processed_corpus(gen_corpus(20, devices=2, duration_s=120.0, master_seed=0))
    report = calibration_report(corpus, PairPolicy(rng_seed=0))
    assert 0.75 <= report["intra_mean"] <= 0.90
    assert report["inter_mean"] <= 0.60
