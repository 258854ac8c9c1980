"""Source-filter synthesis of sustained /a/ phonations and protocol-violation material."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline
from numba import njit

from . import ConfigError, PIPELINE_RATE
from .audio import AudioBuffer, CorpusManifest, ManifestEntry, save_manifest, write_wav

FORMANTS_A = (700.0, 1220.0, 2600.0)
BANDWIDTHS_A = (130.0, 70.0, 160.0)

# rough formant targets for running-speech-like material
VOWEL_TABLE = {
    "a": ((700, 1220, 2600), (130, 70, 160)),
    "e": ((530, 1840, 2480), (60, 100, 150)),
    "i": ((270, 2290, 3010), (60, 90, 150)),
    "o": ((570, 840, 2410), (80, 60, 150)),
    "u": ((300, 870, 2240), (60, 70, 150)),
}


@dataclass
class VoiceParams:
    f0: float = 150.0
    jitter_pct: float = 0.3
    shimmer_pct: float = 3.0
    hnr_db: float = 25.0
    formants: tuple = FORMANTS_A
    bandwidths: tuple = BANDWIDTHS_A
    duration_s: float = 10.0
    level: float = 0.5  # output peak amplitude
    vibrato_hz: float = 5.0
    vibrato_pct: float = 0.5
    # slow class-independent wander (standard deviations in percent)
    f0_drift_pct: float = 0.0
    level_drift_pct: float = 0.0
    formant_drift_pct: float = 0.0
    drift_hz: float = 1.0
    open_quotient: float = 0.6
    # periodic loudness modulation (vocal tremor)
    tremor_hz: float = 5.0
    tremor_pct: float = 0.0

    def validate(self) -> None:
        if self.f0 <= 0 or self.duration_s <= 0:
            raise ConfigError("f0 and duration must be positive")
        if self.jitter_pct < 0 or self.shimmer_pct < 0:
            raise ConfigError("jitter and shimmer must be non-negative")
        if not 0 <= self.tremor_pct < 100:
            raise ConfigError("tremor depth must lie in [0, 100) percent")
        if len(self.formants) != len(self.bandwidths):
            raise ConfigError("formants and bandwidths differ in length")


def resonator(x: np.ndarray, freq: float, bw: float, rate: int) -> np.ndarray:
    """Klatt second-order resonator with unit DC gain."""
    c = -np.exp(-2 * np.pi * bw / rate)
    b = 2 * np.exp(-np.pi * bw / rate) * np.cos(2 * np.pi * freq / rate)
    a = 1.0 - b - c
    return signal.lfilter([a], [1.0, -b, -c], x)


def vocal_tract(x: np.ndarray, formants, bandwidths, rate: int) -> np.ndarray:
    for f, bw in zip(formants, bandwidths):
        if f < rate / 2:
            x = resonator(x, f, bw, rate)
    return x


def slow_noise(n: int, rate: int, cutoff_hz: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian process band-limited to cutoff_hz (knots at 4x cutoff, cubic interpolation)."""
    step = max(1.0 / (4 * cutoff_hz), 1.0 / rate)
    knots = int(np.ceil(n / rate / step)) + 4
    vals = rng.standard_normal(knots)
    vals = signal.lfilter([0.5, 0.5], [1.0], vals)
    vals = (vals - vals.mean()) / max(vals.std(), 1e-12)
    t = np.arange(n) / rate
    return CubicSpline(np.arange(knots) * step, vals)(t)


@njit(cache=True)
def _tv_allpole(x, a, b, c):
    """y[n] = a[n] x[n] + b[n] y[n-1] + c[n] y[n-2]."""
    y = np.empty_like(x)
    y1 = 0.0
    y2 = 0.0
    for i in range(x.shape[0]):
        v = a[i] * x[i] + b[i] * y1 + c[i] * y2
        y[i] = v
        y2 = y1
        y1 = v
    return y


def varying_tract(x: np.ndarray, formants, bandwidths, rate: int, scale: np.ndarray) -> np.ndarray:
    """Cascaded unit-DC-gain resonators whose centre frequencies follow formants * scale."""
    out = np.asarray(x, dtype=np.float64)
    for f, bw in zip(formants, bandwidths):
        if f >= rate / 2:
            continue
        c = -np.exp(-2 * np.pi * bw / rate)
        b = 2 * np.exp(-np.pi * bw / rate) * np.cos(2 * np.pi * f * scale / rate)
        out = _tv_allpole(out, 1.0 - b - c, b, np.full_like(b, c))
    return out


def _rosenberg(phase: np.ndarray, oq: float) -> np.ndarray:
    """Rosenberg glottal flow for phase in [0, 1) of one period."""
    tp = 0.66 * oq
    tn = oq - tp
    g = np.zeros_like(phase)
    rise = phase < tp
    g[rise] = 0.5 * (1 - np.cos(np.pi * phase[rise] / tp))
    fall = (phase >= tp) & (phase < oq)
    g[fall] = np.cos(0.5 * np.pi * (phase[fall] - tp) / tn)
    return g


def _perturbed_series(n: int, pct: float, rng: np.random.Generator) -> np.ndarray:
    # iid Gaussian perturbation; mean |x_i - x_{i-1}| = 2 sd / sqrt(pi) matches the local percentage
    sd = pct / 100.0 * np.sqrt(np.pi) / 2.0
    return 1.0 + sd * rng.standard_normal(n)


def glottal_source(p: VoiceParams, n: int, rate: int, rng: np.random.Generator,
                   f0_track: np.ndarray | None = None) -> np.ndarray:
    """Glottal flow derivative with per-period jitter and shimmer, evaluated in continuous time."""
    t_end = n / rate
    if f0_track is None:
        t_grid = np.arange(n) / rate
        drift = 1 + p.f0_drift_pct / 100 * slow_noise(n, rate, p.drift_hz, rng)
        f0_track = p.f0 * (1 + p.vibrato_pct / 100 * np.sin(2 * np.pi * p.vibrato_hz * t_grid)) * drift
    max_periods = int(t_end * np.max(f0_track) * 1.2) + 4
    jit = _perturbed_series(max_periods, p.jitter_pct, rng)
    shim = np.clip(_perturbed_series(max_periods, p.shimmer_pct, rng), 0.05, None)
    onsets = [0.0]
    periods = []
    while onsets[-1] < t_end and len(periods) < max_periods:
        k = min(int(onsets[-1] * rate), n - 1)
        period = jit[len(periods)] / f0_track[k]
        periods.append(period)
        onsets.append(onsets[-1] + period)
    onsets = np.asarray(onsets[:-1])
    periods = np.asarray(periods)
    t = np.arange(n) / rate
    idx = np.clip(np.searchsorted(onsets, t, side="right") - 1, 0, len(onsets) - 1)
    phase = (t - onsets[idx]) / periods[idx]
    flow = _rosenberg(np.clip(phase, 0, 1 - 1e-12), p.open_quotient) * shim[idx]
    return np.diff(flow, prepend=flow[0])


def synth_vowel(p: VoiceParams, rate: int = PIPELINE_RATE, seed: int = 0) -> AudioBuffer:
    """Sustained vowel: jittered/shimmered glottal pulses plus aspiration noise at the given HNR,
    through cascaded formant resonators."""
    p.validate()
    rng = np.random.default_rng(seed)
    n = int(round(p.duration_s * rate))
    src = glottal_source(p, n, rate, rng)
    if p.formant_drift_pct > 0:
        scale = 1 + p.formant_drift_pct / 100 * slow_noise(n, rate, p.drift_hz, rng)
        tract = lambda x: varying_tract(x, p.formants, p.bandwidths, rate, scale)  # noqa: E731
    else:
        tract = lambda x: vocal_tract(x, p.formants, p.bandwidths, rate)  # noqa: E731
    voiced = np.diff(tract(src), prepend=0.0)  # lip radiation
    if np.isfinite(p.hnr_db):
        noise = np.diff(tract(rng.standard_normal(n)), prepend=0.0)
        gain = np.sqrt(np.mean(voiced ** 2) / np.mean(noise ** 2) * 10 ** (-p.hnr_db / 10))
        voiced = voiced + gain * noise
    if p.level_drift_pct > 0:
        voiced = voiced * np.exp(p.level_drift_pct / 100 * slow_noise(n, rate, p.drift_hz, rng))
    if p.tremor_pct > 0:
        t = np.arange(n) / rate
        voiced = voiced * (1 + p.tremor_pct / 100 * np.sin(2 * np.pi * p.tremor_hz * t + rng.uniform(0, 2 * np.pi)))
    ramp = min(int(0.05 * rate), n // 4)
    if ramp > 0:
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        voiced = voiced * env
    peak = np.max(np.abs(voiced))
    if peak > 0:
        voiced = voiced * (p.level / peak)
    return AudioBuffer(voiced, rate)


def silence(n: int, rate: int = PIPELINE_RATE, seed: int = 0, level_db: float = -60.0) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(rng.standard_normal(n) * 10 ** (level_db / 20), rate)


def running_speech(duration_s: float, rate: int = PIPELINE_RATE, seed: int = 0,
                   level: float = 0.5) -> AudioBuffer:
    """Speech-like babble: random vowel syllables with varying pitch, fricative bursts and pauses."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    out = np.zeros(n)
    pos = 0
    base_f0 = rng.uniform(100, 230)
    keys = list(VOWEL_TABLE)
    while pos < n:
        kind = rng.random()
        seg = int(rng.uniform(0.08, 0.3) * rate)
        seg = min(seg, n - pos)
        if seg < 8:
            break
        if kind < 0.6:
            formants, bws = VOWEL_TABLE[keys[rng.integers(len(keys))]]
            formants = tuple(f * rng.uniform(0.9, 1.1) for f in formants)
            t = np.arange(seg) / rate
            f0_track = base_f0 * rng.uniform(0.8, 1.25) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
            vp = VoiceParams(f0=base_f0, jitter_pct=1.0, shimmer_pct=5.0, formants=formants, bandwidths=bws)
            src = glottal_source(vp, seg, rate, rng, f0_track)
            x = np.diff(vocal_tract(src, formants, bws, rate), prepend=0.0)
            x *= np.hanning(seg)
        elif kind < 0.8:
            b, a = signal.butter(2, rng.uniform(0.4, 0.8), btype="high")
            x = signal.lfilter(b, a, rng.standard_normal(seg)) * np.hanning(seg) * 0.05
        else:
            x = np.zeros(seg)
        peak = np.max(np.abs(x))
        if peak > 0:
            x = x / peak * rng.uniform(0.3, 1.0)
        out[pos:pos + seg] = x
        pos += seg
    out += 10 ** (-60 / 20) * rng.standard_normal(n)
    return AudioBuffer(out * level / max(np.max(np.abs(out)), 1e-12), rate)


def tone_sequence(duration_s: float, rate: int = PIPELINE_RATE, seed: int = 0,
                  level: float = 0.5) -> AudioBuffer:
    """Irrelevant non-vocal sound: a sequence of steady tones (ring tones, music)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(int(rng.uniform(0.2, 0.6) * rate), n - pos)
        t = np.arange(seg) / rate
        f = rng.uniform(300, 2500)
        x = np.sin(2 * np.pi * f * t) + 0.3 * np.sin(2 * np.pi * 2 * f * t)
        out[pos:pos + seg] = x * np.hanning(seg)
        pos += seg
    return AudioBuffer(out * level / max(np.max(np.abs(out)), 1e-12), rate)


@dataclass
class SynthSpec:
    n_per_class: int = 100
    duration_s: float = 10.0
    f0_hz: dict = field(default_factory=lambda: {"hc": 150.0, "pd": 150.0})
    jitter_pct: dict = field(default_factory=lambda: {"hc": 0.3, "pd": 1.5})
    shimmer_pct: dict = field(default_factory=lambda: {"hc": 3.0, "pd": 10.0})
    hnr_db: dict = field(default_factory=lambda: {"hc": 25.0, "pd": 12.0})
    tremor_pct: dict = field(default_factory=lambda: {"hc": 2.0, "pd": 8.0})
    formants: tuple = FORMANTS_A
    bandwidths: tuple = BANDWIDTHS_A
    # between-speaker spread
    f0_spread: float = 0.25  # log-normal sd
    jitter_spread: float = 0.35  # log-normal sd
    shimmer_spread: float = 0.3  # log-normal sd
    hnr_spread_db: float = 3.0
    tremor_spread: float = 0.3  # log-normal sd
    formant_spread: float = 0.06
    # within-recording wander
    f0_drift_pct: float = 3.0
    level_drift_pct: float = 15.0
    formant_drift_pct: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_per_class < 1 or self.duration_s <= 0:
            raise ConfigError("n_per_class and duration_s must be positive")
        for name in ("f0_hz", "jitter_pct", "shimmer_pct", "hnr_db", "tremor_pct"):
            d = getattr(self, name)
            if set(d) != {"hc", "pd"}:
                raise ConfigError(f"{name} needs exactly the classes hc and pd")
        for cls in ("hc", "pd"):
            if self.jitter_pct[cls] < 0 or self.shimmer_pct[cls] < 0:
                raise ConfigError("jitter and shimmer must be non-negative")
            if not 0 <= self.tremor_pct[cls] < 100:
                raise ConfigError("tremor depth must lie in [0, 100) percent")
        same = all(getattr(self, k)["hc"] == getattr(self, k)["pd"]
                   for k in ("f0_hz", "jitter_pct", "shimmer_pct", "hnr_db"))
        if same:
            raise ConfigError("class parameter sets must differ")


def speaker_params(spec: SynthSpec, cls: str, rng: np.random.Generator) -> VoiceParams:
    """Draw one speaker's voice around the class means."""
    f0 = spec.f0_hz[cls] * float(np.exp(spec.f0_spread * rng.standard_normal()))
    # formants scale mildly with pitch (shorter vocal tracts for higher voices)
    tract = (f0 / spec.f0_hz[cls]) ** 0.3
    formants = tuple(f * tract * (1 + spec.formant_spread * rng.standard_normal())
                     for f in spec.formants)
    bandwidths = tuple(b * float(np.exp(0.2 * rng.standard_normal())) for b in spec.bandwidths)
    return VoiceParams(
        f0=f0,
        jitter_pct=spec.jitter_pct[cls] * float(np.exp(spec.jitter_spread * rng.standard_normal())),
        shimmer_pct=spec.shimmer_pct[cls] * float(np.exp(spec.shimmer_spread * rng.standard_normal())),
        hnr_db=spec.hnr_db[cls] + spec.hnr_spread_db * float(rng.standard_normal()),
        formants=formants, bandwidths=bandwidths, duration_s=spec.duration_s,
        level=float(rng.uniform(0.2, 0.8)),
        vibrato_hz=float(rng.uniform(3, 7)), vibrato_pct=float(rng.uniform(0.2, 1.0)),
        f0_drift_pct=spec.f0_drift_pct, level_drift_pct=spec.level_drift_pct,
        formant_drift_pct=spec.formant_drift_pct,
        tremor_hz=float(rng.uniform(4, 7)),
        tremor_pct=min(spec.tremor_pct[cls] * float(np.exp(spec.tremor_spread * rng.standard_normal())), 50.0),
    )


@dataclass
class SynthRecording:
    id: str
    label: str  # "pd" | "hc"
    audio: AudioBuffer
    params: VoiceParams


def synth_recordings(spec: SynthSpec, rate: int = PIPELINE_RATE) -> list[SynthRecording]:
    """In-memory corpus, HC recordings first then PD, deterministic given spec.seed."""
    spec.validate()
    out = []
    for ci, cls in enumerate(("hc", "pd")):
        children = np.random.SeedSequence([spec.seed, ci]).spawn(spec.n_per_class)
        for i, child in enumerate(children):
            rng = np.random.default_rng(child)
            params = speaker_params(spec, cls, rng)
            audio = synth_vowel(params, rate, seed=int(rng.integers(2 ** 31)))
            out.append(SynthRecording(f"{cls}{i:04d}", cls, audio, params))
    return out


def synth_corpus(spec: SynthSpec, out_dir: str | os.PathLike, rate: int = PIPELINE_RATE,
                 split: str = "train") -> CorpusManifest:
    """Write the synthetic corpus as WAV files plus manifest.jsonl under out_dir."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in synth_recordings(spec, rate):
        rel = f"wav/{rec.id}.wav"
        write_wav(rec.audio, out / rel)
        entries.append(ManifestEntry(rec.id, rel, rec.label, "clean", split))
    manifest = CorpusManifest(entries, root=out)
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest
