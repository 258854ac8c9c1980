import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voiceqc import ConfigError, DataError
from voiceqc.audio import AudioBuffer
from voiceqc.degrade import (RoomSpec, Rir, apply_rir, clip_signal, generate_rir, make_noise,
                             measure_rt60, measure_snr, mix_at_snr, segment_mask)


def _unit(x):
    return x / np.sqrt(np.mean(x ** 2))


def test_gain_closed_form(rng):
    clean = AudioBuffer(_unit(rng.standard_normal(1000)), 8000)
    noise = AudioBuffer(_unit(rng.standard_normal(1000)), 8000)
    for snr, g in ((0.0, 1.0), (10.0, 10 ** -0.5)):
        added = mix_at_snr(clean, noise, snr).samples - clean.samples
        np.testing.assert_allclose(added, g * noise.samples, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-20.0, 40.0), st.integers(0, 2 ** 31 - 1),
       st.sampled_from(["white", "speech_shaped", "pink"]))
def test_achieved_snr(snr, seed, kind):
    rng = np.random.default_rng(seed)
    clean = AudioBuffer(rng.standard_normal(4000) * rng.uniform(0.01, 2), 8000)
    noise = make_noise(kind, 3000, 8000, seed)
    out = mix_at_snr(clean, noise, snr, seed=seed)
    assert abs(measure_snr(clean, out.samples - clean.samples) - snr) <= 0.01


def test_region_mixing(rng):
    clean = AudioBuffer(rng.standard_normal(2000), 8000)
    region = np.zeros(2000, bool)
    region[500:1500] = True
    out = mix_at_snr(clean, make_noise("white", 2000, 8000, 1), 5.0, region=region)
    diff = out.samples - clean.samples
    assert np.all(diff[~region] == 0)
    assert measure_snr(clean.samples[region], diff[region]) == pytest.approx(5.0, abs=1e-9)


def test_measure_snr_examples(rng):
    x = rng.standard_normal(100)
    assert measure_snr(x, x) == pytest.approx(0.0)
    assert measure_snr(x, x / 10) == pytest.approx(20.0)


def test_unknown_noise_and_silence():
    with pytest.raises(ConfigError):
        make_noise("brown", 10, 8000, 0)
    with pytest.raises(DataError):
        mix_at_snr(AudioBuffer(np.zeros(10), 8000), AudioBuffer(np.ones(10), 8000), 0.0)


def test_clip_examples():
    out = clip_signal(AudioBuffer(np.array([0.5, -1.0, 0.2]), 8000), 0.4).samples
    np.testing.assert_allclose(out, [0.4, -0.4, 0.2])
    x = AudioBuffer(np.array([0.5, -1.0, 0.2]), 8000)
    np.testing.assert_array_equal(clip_signal(x, 1.0).samples, x.samples)
    with pytest.raises(ConfigError):
        clip_signal(x, 0.0)


def test_clip_sweep_fraction_non_increasing(vowel):
    levels = np.round(np.arange(0.1, 0.81, 0.1), 1)
    outs = [clip_signal(vowel, lv) for lv in levels]
    assert len(outs) == 8
    fracs = [np.mean(np.abs(o.samples) >= lv * np.max(np.abs(vowel.samples)) - 1e-12)
             for o, lv in zip(outs, levels)]
    assert all(a >= b for a, b in zip(fracs, fracs[1:]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=50).filter(
    lambda v: max(map(abs, v)) > 0), st.floats(0.05, 1.0))
def test_clip_idempotent(values, level):
    x = AudioBuffer(np.asarray(values), 8000)
    once = clip_signal(x, level)
    thr = level * np.max(np.abs(x.samples))
    twice = AudioBuffer(np.clip(once.samples, -thr, thr), 8000)
    np.testing.assert_array_equal(once.samples, twice.samples)


def test_anechoic_geometry():
    spec = RoomSpec(src=(3.0, 3.0, 1.5), mic=(5.0, 3.0, 1.5), rt60=0.0)
    taps = generate_rir(spec).taps
    nz = np.flatnonzero(taps)
    assert nz.tolist() == [round(8000 * 2 / 343)] == [47]
    assert taps[47] == pytest.approx(1 / (8 * np.pi))


def test_room_validation():
    with pytest.raises(ConfigError):
        generate_rir(RoomSpec(src=(3, 3, 1.5), mic=(3, 3, 1.5)))
    with pytest.raises(ConfigError):
        generate_rir(RoomSpec(mic=(11, 3, 1.5)))


@pytest.mark.parametrize("rt60", [0.3, 0.6, 1.2, 1.8])
def test_rt60_within_twenty_percent(rt60):
    measured = measure_rt60(generate_rir(RoomSpec(rt60=rt60)))
    assert 0.8 * rt60 <= measured <= 1.2 * rt60


def test_measure_rt60_analytic(rng):
    t = np.arange(8000) / 8000
    taps = np.exp(-6.908 * t / 0.5) * rng.standard_normal(8000)
    assert measure_rt60(Rir(taps, 8000)) == pytest.approx(0.5, rel=0.05)
    assert measure_rt60(Rir(10 * taps, 8000)) == pytest.approx(measure_rt60(Rir(taps, 8000)))
    with pytest.raises(DataError):
        measure_rt60(Rir(np.array([1.0]), 8000))


def test_apply_rir_identity_delay_linearity(rng):
    x = AudioBuffer(0.1 * rng.standard_normal(500), 8000)
    np.testing.assert_array_equal(apply_rir(x, Rir(np.array([1.0]), 8000)).samples, x.samples)
    k = 7
    shifted = apply_rir(x, Rir(np.r_[np.zeros(k), 1.0], 8000)).samples
    np.testing.assert_array_equal(shifted[:k], 0)
    np.testing.assert_array_equal(shifted[k:], x.samples[:-k])
    rir = Rir(rng.standard_normal(30) * 0.05, 8000)
    a = apply_rir(AudioBuffer(0.5 * x.samples, 8000), rir).samples
    np.testing.assert_allclose(a, 0.5 * apply_rir(x, rir).samples, atol=1e-12)
    assert len(apply_rir(x, generate_rir(RoomSpec(rt60=0.6))).samples) == len(x)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 10 ** 6))
def test_segment_mask_fraction(fraction, seed):
    m = segment_mask(80000, 8000, fraction, seed)
    assert m.sum() == round(fraction * 80000)
