import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_toeplitz

from voiceqc import ConfigError, DataError
from voiceqc.audio import AudioBuffer
from voiceqc.features import (FeatureMatrix, append_deltas, ar_spectrum, average_frames, bark_to_hz,
                              extract, frame_signal, hamming, hz_to_bark, levinson, mfcc, plp, plp_lpc,
                              read_features_csv, write_features_csv)
from voiceqc.synth import resonator


def test_frame_count_arithmetic():
    assert len(frame_signal(AudioBuffer(np.zeros(240), 8000))) == 1
    assert len(frame_signal(AudioBuffer(np.zeros(8000 * 10), 8000))) == 1 + (80000 - 240) // 160
    with pytest.raises(DataError):
        frame_signal(AudioBuffer(np.zeros(239), 8000))


def test_all_ones_frame_is_window():
    fs = frame_signal(AudioBuffer(np.ones(240), 8000))
    np.testing.assert_array_equal(fs.frames[0], hamming(240))


def _reference_mfcc(frame, rate=8000, nfft=256, n_filters=23):
    """Loop-based MFCC of one windowed frame: c1..c12, straight from the textbook recipe."""
    y = [frame[0]] + [frame[i] - 0.97 * frame[i - 1] for i in range(1, len(frame))]
    spec = np.fft.rfft(np.asarray(y), n=nfft)
    power = [abs(v) ** 2 for v in spec]
    mel = lambda f: 2595 * math.log10(1 + f / 700)  # noqa: E731
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)  # noqa: E731
    edges = [imel(mel(rate / 2) * i / (n_filters + 1)) for i in range(n_filters + 2)]
    logmel = []
    for j in range(n_filters):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        acc = 0.0
        for k, p in enumerate(power):
            f = k * rate / nfft
            w = max(0.0, min((f - lo) / (mid - lo), (hi - f) / (hi - mid)))
            acc += w * p
        logmel.append(math.log(max(acc, 1e-10)))
    out = []
    for q in range(1, 13):
        s = sum(v * math.cos(math.pi * q * (2 * j + 1) / (2 * n_filters)) for j, v in enumerate(logmel))
        out.append(s * math.sqrt(2.0 / n_filters))
    return np.array(out)


def test_mfcc_matches_reference_and_tilt(rng):
    t = np.arange(8000) / 8000
    sine = AudioBuffer(0.5 * np.sin(2 * np.pi * 500 * t), 8000)
    noise = AudioBuffer(0.1 * rng.standard_normal(8000), 8000)
    for buf in (sine, noise):
        fs = frame_signal(buf)
        got = mfcc(fs).data[:5, 1:]
        ref = np.array([_reference_mfcc(fs.frames[i]) for i in range(5)])
        np.testing.assert_allclose(got, ref, atol=1e-6)
    # pre-emphasis gives white noise a steep rising tilt of its own, so compare without it
    c1_sine = np.abs(mfcc(frame_signal(sine), preemph=0.0).data[:, 1]).mean()
    c1_noise = np.abs(mfcc(frame_signal(noise), preemph=0.0).data[:, 1]).mean()
    assert c1_sine > c1_noise


def test_mfcc_gain_invariance(rng):
    x = rng.standard_normal(2000)
    a = mfcc(frame_signal(AudioBuffer(x, 8000))).data
    b = mfcc(frame_signal(AudioBuffer(3.0 * x, 8000))).data
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-9)
    np.testing.assert_allclose(b[:, 0] - a[:, 0], 2 * np.log(3.0), atol=1e-9)


def test_mfcc_zero_frame():
    f = mfcc(frame_signal(AudioBuffer(np.zeros(240), 8000))).data
    assert f[0, 0] == pytest.approx(np.log(1e-10))
    assert np.all(np.isfinite(f))


def test_plp_identical_frames_identical_rows(rng):
    x = np.tile(rng.standard_normal(160), 10)
    f = plp(frame_signal(AudioBuffer(x, 8000))).data
    np.testing.assert_allclose(f[1:], f[:-1], atol=1e-10)


def test_plp_resonance_peak(rng):
    x = resonator(rng.standard_normal(8000), 700.0, 80.0, 8000)
    a, err = plp_lpc(frame_signal(AudioBuffer(x, 8000)))
    spec = ar_spectrum(a[10], err[10])
    # the AR model lives on the Bark axis; map its argmax back to Hz
    peak_bark = np.argmax(spec) / (len(spec) - 1) * hz_to_bark(4000.0)
    assert abs(peak_bark - hz_to_bark(700.0)) <= 1.0


def test_plp_order_zero():
    with pytest.raises(ConfigError):
        plp_lpc(frame_signal(AudioBuffer(np.ones(240), 8000)), order=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2 ** 31 - 1))
def test_levinson_matches_toeplitz_solve(order, seed):
    x = np.random.default_rng(seed).standard_normal(400)
    r = np.array([x[: len(x) - k] @ x[k:] for k in range(order + 1)])
    a, err = levinson(r[None, :], order)
    expected = solve_toeplitz(r[:order], -r[1:order + 1])
    np.testing.assert_allclose(a[0, 1:], expected, rtol=1e-8, atol=1e-10)
    assert err[0] == pytest.approx(r[0] + r[1:order + 1] @ a[0, 1:], rel=1e-9)


def _fm(values):
    v = np.asarray(values, dtype=float).reshape(len(values), -1)
    return FeatureMatrix(v, "mfcc13", np.arange(len(v)) * 0.02)


def test_deltas():
    d = append_deltas(_fm(np.full(7, 4.0))).data
    assert np.all(d[:, 1:] == 0)
    ramp = append_deltas(_fm(np.arange(20.0))).data
    np.testing.assert_allclose(ramp[4:-4, 1], 1.0)
    np.testing.assert_allclose(ramp[4:-4, 2], 0.0, atol=1e-12)
    one = append_deltas(_fm([3.0])).data
    assert one.shape == (1, 3) and np.all(one[0, 1:] == 0)


def test_average_frames_rules():
    got = average_frames(_fm(np.arange(1.0, 11.0)), 5).data[:, 0]
    np.testing.assert_array_equal(got, [3.0, 8.0])
    x = _fm(np.arange(12.0))
    np.testing.assert_array_equal(average_frames(x, 1).data, x.data)
    g = average_frames(x, 5).data[:, 0]
    assert g.shape == (3,) and g[-1] == pytest.approx(10.5)


def test_extract_kinds_and_shapes(vowel):
    assert extract(vowel, "mfcc13").dim == 13
    assert extract(vowel, "plp39").dim == 39
    avg = extract(vowel, "mfcc13-averaged")
    assert len(avg) == -(-len(extract(vowel, "mfcc13")) // 5)
    with pytest.raises(ConfigError):
        extract(vowel, "lpcc")


def test_ten_seconds_give_hundred_observations():
    buf = AudioBuffer(np.random.default_rng(0).standard_normal(80000), 8000)
    assert len(extract(buf, "mfcc13-averaged")) == 100


def test_feature_csv_roundtrip(tmp_path, vowel):
    f = extract(vowel, "plp13")
    write_features_csv(f, tmp_path / "f.csv")
    g = read_features_csv(tmp_path / "f.csv")
    assert g.kind == "plp13"
    np.testing.assert_array_equal(g.data, f.data)
    np.testing.assert_array_equal(g.frame_times, f.frame_times)


def test_bark_roundtrip():
    f = np.linspace(0, 4000, 50)
    np.testing.assert_allclose(bark_to_hz(hz_to_bark(f)), f, atol=1e-6)
