import numpy as np
import pytest

from voiceqc import ConfigError
from voiceqc.audio import load_manifest
from voiceqc.features import extract
from voiceqc.synth import (SynthSpec, VoiceParams, running_speech, silence, speaker_params,
                           synth_corpus, synth_recordings, synth_vowel, tone_sequence)


def test_steady_voice_is_periodic():
    p = VoiceParams(f0=100.0, jitter_pct=0, shimmer_pct=0, hnr_db=np.inf, vibrato_pct=0,
                    duration_s=1.0)
    x = synth_vowel(p, seed=1).samples[800:-800]
    a, b = x[:-80], x[80:]
    assert np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)) >= 0.99


def test_perturbation_lowers_periodicity():
    def corr(p):
        x = synth_vowel(p, seed=2).samples[800:-800]
        lag = int(round(8000 / p.f0))
        a, b = x[:-lag], x[lag:]
        return np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b))
    steady = VoiceParams(f0=100.0, jitter_pct=0.2, shimmer_pct=2, hnr_db=30, duration_s=1.0)
    rough = VoiceParams(f0=100.0, jitter_pct=3, shimmer_pct=15, hnr_db=5, duration_s=1.0)
    assert corr(rough) < corr(steady)


def test_level_and_length(vowel):
    assert vowel.rate == 8000
    assert len(vowel) == 16000
    assert np.max(np.abs(vowel.samples)) == pytest.approx(0.5)


def test_first_formant_is_a_spectral_peak():
    p = VoiceParams(duration_s=2.0, vibrato_pct=0)
    x = synth_vowel(p, seed=0).samples
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)))) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / 8000)
    smooth = np.convolve(spec, np.ones(201) / 201, mode="same")
    at = lambda hz: smooth[np.argmin(np.abs(freqs - hz))]  # noqa: E731
    f1, f2 = p.formants[:2]
    assert at(f1) > 3 * at(f1 / 2)
    assert at(f1) > 3 * at((f1 + f2) / 2)


def test_vowel_validation():
    with pytest.raises(ConfigError):
        synth_vowel(VoiceParams(f0=0))
    with pytest.raises(ConfigError):
        synth_vowel(VoiceParams(tremor_pct=120))


def test_corpus_deterministic_and_ordered():
    spec = SynthSpec(n_per_class=3, duration_s=0.5, seed=9)
    a, b = synth_recordings(spec), synth_recordings(spec)
    assert [r.id for r in a] == ["hc0000", "hc0001", "hc0002", "pd0000", "pd0001", "pd0002"]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.audio.samples, y.audio.samples)
    other = synth_recordings(SynthSpec(n_per_class=3, duration_s=0.5, seed=10))
    assert not np.array_equal(a[0].audio.samples, other[0].audio.samples)


def test_class_means_separate():
    spec = SynthSpec()
    rng = np.random.default_rng(0)
    hc = [speaker_params(spec, "hc", rng) for _ in range(200)]
    pd = [speaker_params(spec, "pd", rng) for _ in range(200)]
    assert np.median([p.jitter_pct for p in pd]) > np.median([p.jitter_pct for p in hc])
    assert np.median([p.hnr_db for p in pd]) < np.median([p.hnr_db for p in hc])
    assert np.median([p.tremor_pct for p in pd]) > np.median([p.tremor_pct for p in hc])


def test_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(n_per_class=0).validate()
    with pytest.raises(ConfigError):
        SynthSpec(jitter_pct={"hc": 1.0}).validate()
    same = {"hc": 1.0, "pd": 1.0}
    with pytest.raises(ConfigError):
        SynthSpec(f0_hz=same, jitter_pct=same, shimmer_pct=same, hnr_db=same).validate()


def test_synth_corpus_writes_manifest(tmp_path):
    manifest = synth_corpus(SynthSpec(n_per_class=2, duration_s=0.3), tmp_path, split="dev")
    back = load_manifest(tmp_path / "manifest.jsonl")
    assert [e.id for e in back.entries] == [e.id for e in manifest.entries]
    assert {e.split for e in back.entries} == {"dev"}
    assert all((tmp_path / e.path).exists() for e in back.entries)


@pytest.mark.parametrize("make", [lambda: running_speech(2.0, seed=1),
                                  lambda: tone_sequence(2.0, seed=1),
                                  lambda: silence(16000, seed=1)])
def test_outlier_sources_have_features(make):
    audio = make()
    assert len(audio) == 16000
    assert np.all(np.isfinite(extract(audio, "mfcc39").data))
