import numpy as np
import pytest

from app.core.exceptions import FlatSignalError, GridMismatchError, SegmentTooShortError
from app.core.features import (
    coherence_band,
    dtw_distance,
    extract_many,
    extract_pair_features,
    linear_similarities,
    pair_differences,
    psd_cosine,
    signal_descriptors,
    welch_psd,
    xcorr_peak,
)
from app.core.quality import detect_beats
from app.core.signal_core import standardize_smooth
from app.models.dataset import SegmentPair
from app.models.features import N_FEATURES, SignalDescriptors, Spectrum
from app.models.signal import DeviceKind, Segment, Stage

RATE = 60.0


def _segment(samples, subject="s01", device="phone", start=0.0, kind=DeviceKind.TOKEN):
    samples = np.asarray(samples, dtype=float)
    return Segment(
        subject_id=subject,
        device_id=device,
        device_kind=kind,
        start_time=start,
        duration_s=samples.size / RATE,
        rate=RATE,
        samples=samples,
        stage=Stage.STANDARDIZED,
    )


def _sine(freq, duration_s=6.0, phase=0.0):
    t = np.arange(int(duration_s * RATE)) / RATE
    return np.sin(2 * np.pi * freq * t + phase)


def _descriptors(**overrides):
    base = dict.fromkeys(SignalDescriptors.__dataclass_fields__, 0.0)
    base.update(overrides)
    return SignalDescriptors(**base)


# ==================== ESPECTRO ====================

def test_welch_zero_signal():
    spectrum = welch_psd(np.zeros(360), RATE)
    np.testing.assert_array_equal(spectrum.psd, 0.0)


def test_welch_peak_at_sinusoid_frequency():
    spectrum = welch_psd(_sine(1.0), RATE)
    assert abs(spectrum.freqs[np.argmax(spectrum.psd)] - 1.0) <= 0.25
    assert spectrum.freqs[1] - spectrum.freqs[0] == pytest.approx(0.25)


def test_welch_parseval():
    x = np.random.default_rng(0).standard_normal(int(60 * RATE))
    spectrum = welch_psd(x, RATE)
    df = spectrum.freqs[1] - spectrum.freqs[0]
    assert np.sum(spectrum.psd) * df == pytest.approx(np.var(x), rel=0.05)


def test_welch_short_windows_share_grid():
    six = welch_psd(_sine(1.0, 6.0), RATE)
    three = welch_psd(_sine(1.0, 3.0), RATE)
    np.testing.assert_array_equal(six.freqs, three.freqs)
    with pytest.raises(SegmentTooShortError):
        welch_psd(_sine(1.0, 1.5), RATE)


# ==================== DESCRIPTORES ====================

def test_descriptors_of_60_bpm_train(pulse_train):
    _, x = pulse_train(hr_bpm=60.0, duration_s=6.0)
    x = standardize_smooth(x)
    d = signal_descriptors(x, detect_beats(x, RATE), welch_psd(x, RATE))
    assert 59.0 <= d.heart_rate_bpm <= 61.0
    assert d.main_freq_hz in (0.75, 1.0, 1.25)
    assert d.prt_mean_s > 0
    assert d.lf_energy_ratio + d.hf_energy_ratio == pytest.approx(1.0, abs=1e-9)


def test_low_frequency_sinusoid_energy_split():
    x = _sine(0.8)
    d = signal_descriptors(x, detect_beats(x, RATE), welch_psd(x, RATE))
    assert d.lf_energy_ratio >= 0.9
    assert d.hf_energy_ratio <= 0.1


def test_spectral_entropy_orders_sinusoid_and_noise():
    sine = _sine(1.0)
    noise = np.random.default_rng(1).standard_normal(360)
    d_sine = signal_descriptors(sine, detect_beats(sine, RATE), welch_psd(sine, RATE))
    spectrum = welch_psd(noise, RATE)
    d_noise = signal_descriptors(noise, detect_beats(sine, RATE), spectrum)
    assert d_sine.spectral_entropy < 0.5 < d_noise.spectral_entropy


def test_pair_differences():
    d1 = _descriptors(heart_rate_bpm=60.0, skewness=0.2)
    d2 = _descriptors(heart_rate_bpm=72.0, skewness=-0.1)
    diffs = pair_differences(d1, d2)
    assert diffs.shape == (14,)
    assert diffs[0] == pytest.approx(12.0)
    np.testing.assert_array_equal(diffs, pair_differences(d2, d1))
    np.testing.assert_array_equal(pair_differences(d1, d1), 0.0)


# ==================== SIMILITUDES ====================

def test_coherence_identical():
    x = np.random.default_rng(2).standard_normal(360)
    assert coherence_band(x, x, RATE) == pytest.approx(1.0, abs=1e-9)


def test_coherence_independent_noise():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, int(60 * RATE)))
    assert coherence_band(a, b, RATE) <= 0.4


def test_coherence_with_small_noise():
    rng = np.random.default_rng(4)
    a = rng.standard_normal(int(60 * RATE))
    b = a + 0.1 * rng.standard_normal(a.size)
    assert coherence_band(a, b, RATE) >= 0.8


def test_xcorr_self():
    x = _sine(1.0) + 0.1 * np.random.default_rng(5).standard_normal(360)
    value, lag = xcorr_peak(x, x, RATE)
    assert value == pytest.approx(1.0)
    assert lag == 0.0


def test_xcorr_periodic_delay():
    value, lag = xcorr_peak(_sine(1.0), _sine(1.0, phase=-np.pi), RATE)
    assert value == pytest.approx(1.0, abs=1e-9)
    assert abs(lag) == pytest.approx(0.5)


def test_xcorr_delayed_noise_and_swap():
    x = np.random.default_rng(6).standard_normal(420)
    a, b = x[30:390], x[:360]
    value, lag = xcorr_peak(a, b, RATE)
    assert lag == pytest.approx(0.5)
    assert value == pytest.approx(1.0)
    swapped_value, swapped_lag = xcorr_peak(b, a, RATE)
    assert swapped_value == pytest.approx(value)
    assert swapped_lag == -lag


def _dtw_oracle(a, b):
    """Enumeración de todos los caminos monótonos: (coste mínimo, longitud mínima)"""
    best = [None]

    def walk(i, j, cost, length):
        cost += abs(a[i] - b[j])
        length += 1
        if i == len(a) - 1 and j == len(b) - 1:
            if best[0] is None or (cost, length) < best[0]:
                best[0] = (cost, length)
            return
        if i + 1 < len(a) and j + 1 < len(b):
            walk(i + 1, j + 1, cost, length)
        if i + 1 < len(a):
            walk(i + 1, j, cost, length)
        if j + 1 < len(b):
            walk(i, j + 1, cost, length)

    walk(0, 0, 0.0, 0)
    cost, length = best[0]
    return cost / length


def test_dtw_identity_and_duplicated_element():
    x = np.random.default_rng(7).standard_normal(50)
    assert dtw_distance(x, x) == 0.0
    assert dtw_distance(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 2.0, 3.0])) == 0.0


def test_dtw_matches_exhaustive_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(100):
        a = rng.integers(0, 3, size=rng.integers(1, 6)).astype(float)
        b = rng.integers(0, 3, size=rng.integers(1, 6)).astype(float)
        assert dtw_distance(a, b) == _dtw_oracle(a, b)


def test_dtw_symmetric_and_below_diagonal_cost():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a, b = rng.standard_normal((2, 60))
        assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), abs=1e-12)
        assert dtw_distance(a, b) <= np.mean(np.abs(a - b)) + 1e-12


def test_linear_similarities():
    x = _sine(1.0)
    assert linear_similarities(x, x) == pytest.approx((1.0, 1.0))
    assert linear_similarities(x, -x) == pytest.approx((-1.0, -1.0))
    _, cosine = linear_similarities(x, _sine(1.0, phase=np.pi / 2))
    assert abs(cosine) <= 1e-6
    with pytest.raises(FlatSignalError):
        linear_similarities(np.zeros(360), x)


def test_psd_cosine():
    slow = welch_psd(_sine(0.8), RATE)
    fast = welch_psd(_sine(1.6), RATE)
    assert psd_cosine(slow, slow) == pytest.approx(1.0)
    assert psd_cosine(slow, fast) <= 0.1
    with pytest.raises(GridMismatchError):
        psd_cosine(slow, welch_psd(_sine(0.8), 50.0))


def test_psd_cosine_disjoint_support():
    freqs = np.arange(121) * 0.25
    low = Spectrum(freqs=freqs, psd=np.where(freqs <= 1.0, 1.0, 0.0), nperseg=240, noverlap=120)
    high = Spectrum(freqs=freqs, psd=np.where(freqs > 1.0, 1.0, 0.0), nperseg=240, noverlap=120)
    assert psd_cosine(low, high) == 0.0


# ==================== VECTOR DEL PAR ====================

def test_pair_with_itself(pulse_train):
    _, x = pulse_train(duration_s=6.0, noise=0.05)
    a = _segment(standardize_smooth(x))
    vector = extract_pair_features(a, a)
    assert vector.values.shape == (N_FEATURES,)
    np.testing.assert_allclose(vector.diffs, 0.0, atol=1e-12)
    coherence, xcorr, lag, dtw, pearson, cosine, cosine_psd = vector.sims
    assert coherence == pytest.approx(1.0, abs=1e-9)
    assert (xcorr, pearson, cosine, cosine_psd) == pytest.approx((1.0, 1.0, 1.0, 1.0))
    assert lag == 0.0
    assert dtw == 0.0
    assert vector.label == 1


def test_pair_features_are_deterministic(pulse_train):
    _, x = pulse_train(duration_s=6.0, noise=0.1, seed=1)
    _, y = pulse_train(duration_s=6.0, hr_bpm=72.0, noise=0.1, seed=2)
    a = _segment(standardize_smooth(x))
    b = _segment(standardize_smooth(y), subject="s02", device="ring", kind=DeviceKind.WEARABLE)
    first = extract_pair_features(a, b)
    second = extract_pair_features(a, b)
    np.testing.assert_array_equal(first.values, second.values)
    assert first.label == 0
    assert np.all(first.diffs >= 0)


@pytest.fixture
def small_pairs(pulse_train):
    segments = {}
    pairs = []
    for i, hr in enumerate([60.0, 66.0, 72.0, 78.0]):
        _, x = pulse_train(duration_s=6.0, hr_bpm=hr, noise=0.1, seed=i)
        _, y = pulse_train(duration_s=6.0, hr_bpm=hr, noise=0.2, seed=10 + i)
        a = _segment(standardize_smooth(x), subject=f"s{i}", start=0.0)
        b = _segment(standardize_smooth(y), subject=f"s{i}", device="ring", kind=DeviceKind.WEARABLE)
        segments[a.ref] = a
        segments[b.ref] = b
    refs = sorted(segments, key=lambda r: r.as_tuple())
    tokens = [r for r in refs if r.device_id == "phone"]
    rings = [r for r in refs if r.device_id == "ring"]
    for t in tokens:
        for w in rings:
            pairs.append(SegmentPair(t, w, int(t.subject_id == w.subject_id)))
    flat = _segment(np.zeros(360), subject="s9", device="ring", kind=DeviceKind.WEARABLE)
    segments[flat.ref] = flat
    pairs.append(SegmentPair(tokens[0], flat.ref, 0))
    return pairs, segments


def test_extract_many_keeps_order_and_discards(small_pairs):
    pairs, segments = small_pairs
    table = extract_many(pairs, segments.__getitem__)
    assert len(table) == 16
    assert table.values.shape == (16, N_FEATURES)
    assert list(table.pairs) == pairs[:16]
    assert len(table.discarded) == 1
    assert table.discarded[0][0] == pairs[-1]
    assert "NoBeatsError" in table.discarded[0][1]


def test_extract_many_parallel_matches_serial(small_pairs):
    pairs, segments = small_pairs
    serial = extract_many(pairs, segments.__getitem__, workers=1)
    parallel = extract_many(pairs, segments.__getitem__, workers=2)
    np.testing.assert_array_equal(serial.values, parallel.values)
    assert serial.pairs == parallel.pairs
