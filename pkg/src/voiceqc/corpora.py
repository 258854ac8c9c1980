"""Desk-scale corpus recipes built from synthetic vowels and simulated degradations."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import ConfigError, DataError, PIPELINE_RATE
from .audio import AudioBuffer
from .degrade import (RoomSpec, apply_rir, clip_signal, generate_rir, make_noise, mix_at_snr,
                      segment_mask)
from .enhance import ADHERENCE, DEGRADED, VIOLATION
from .synth import SynthSpec, running_speech, silence, synth_recordings, tone_sequence

QC_SNRS_DB = (-5.0, 0.0, 5.0, 10.0)
QC_RT60S = (0.6, 0.9, 1.2, 1.5, 1.8)
QC_CLIP_LEVELS = (0.1, 0.2, 0.3, 0.5)
NOISE_KINDS = ("white", "speech_shaped", "pink", "babble")
OUTLIER_KINDS = ("speech", "tones", "silence")


@dataclass
class Recording:
    id: str
    audio: AudioBuffer
    label: str | None = None  # "pd" / "hc" when known
    degradation: str = "clean"
    sample_labels: np.ndarray | None = None  # per-sample 1/2/3 for frame-level truth
    meta: dict = field(default_factory=dict)


@lru_cache(maxsize=64)
def room_rir(rt60: float, rate: int = PIPELINE_RATE):
    """Image-method RIR of the default 10 x 6 x 4 m room, cached per RT60."""
    return generate_rir(RoomSpec(rt60=float(rt60)), rate)


@lru_cache(maxsize=64)
def close_rir(rt60: float, distance_m: float = 0.3, rate: int = PIPELINE_RATE):
    """Default room with the microphone `distance_m` in front of the talker (handheld-phone geometry)."""
    src = (3.0, 3.0, 1.5)
    return generate_rir(RoomSpec(src=src, mic=(src[0] + float(distance_m), src[1], src[2]),
                                 rt60=float(rt60)), rate)


@lru_cache(maxsize=8)
def rir_bank(n: int = 16, seed: int = 0, rate: int = PIPELINE_RATE) -> tuple:
    """Fixed set of RIRs from varied rooms, positions and RT60s: (rt60, Rir) pairs."""
    rng = np.random.default_rng(seed)
    bank = []
    for i in range(n):
        dims = (rng.uniform(4, 10), rng.uniform(3, 7), rng.uniform(2.5, 4))
        src = tuple(rng.uniform(0.5, d - 0.5) for d in dims)
        while True:
            mic = tuple(rng.uniform(0.5, d - 0.5) for d in dims)
            if 0.5 <= np.linalg.norm(np.subtract(src, mic)) <= 4.0:
                break
        rt60 = QC_RT60S[i % len(QC_RT60S)]
        bank.append((rt60, generate_rir(RoomSpec(dims, src, mic, rt60), rate)))
    return tuple(bank)


def babble_noise(n: int, rate: int, seed: int, talkers: int = 6) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    x = sum(running_speech(n / rate, rate, int(rng.integers(2 ** 31))).samples for _ in range(talkers))
    return AudioBuffer(x / np.std(x), rate)


def add_noise(audio: AudioBuffer, kind: str, snr_db: float, seed: int,
              region: np.ndarray | None = None) -> AudioBuffer:
    if kind == "babble":
        noise = babble_noise(len(audio), audio.rate, seed)
    else:
        noise = make_noise(kind, len(audio), audio.rate, seed)
    return mix_at_snr(audio, noise, snr_db, seed=seed + 1, region=region)


def reverberate(audio: AudioBuffer, rt60: float) -> AudioBuffer:
    return apply_rir(audio, room_rir(round(float(rt60), 3), audio.rate))


def vowels(n_per_class: int, seed: int, duration_s: float = 10.0, **spec_kw) -> list:
    """Clean PD/HC vowels as Recording objects (HC first)."""
    spec = SynthSpec(n_per_class=n_per_class, duration_s=duration_s, seed=seed, **spec_kw)
    return [Recording(r.id, r.audio, r.label, "clean", meta={"params": r.params})
            for r in synth_recordings(spec)]


def outlier(kind: str, duration_s: float, seed: int, rate: int = PIPELINE_RATE) -> AudioBuffer:
    if kind == "speech":
        return running_speech(duration_s, rate, seed)
    if kind == "tones":
        return tone_sequence(duration_s, rate, seed)
    if kind == "silence":
        return silence(int(round(duration_s * rate)), rate, seed)
    raise ConfigError(f"unknown outlier kind {kind!r}")


def degrade_recording(rec: Recording, degradation: str, rng: np.random.Generator) -> Recording:
    """Apply one degradation class with parameters drawn from the desk-scale grids."""
    seed = int(rng.integers(2 ** 31))
    meta = dict(rec.meta)
    if degradation == "clean":
        audio = rec.audio
    elif degradation == "noise":
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        snr = float(rng.choice(QC_SNRS_DB))
        audio = add_noise(rec.audio, kind, snr, seed)
        meta.update(noise=kind, snr_db=snr)
    elif degradation == "reverb":
        rt60, rir = rir_bank()[int(rng.integers(len(rir_bank())))]
        audio = apply_rir(rec.audio, rir)
        meta.update(rt60_s=rt60)
    elif degradation == "distortion":
        level = float(rng.choice(QC_CLIP_LEVELS))
        audio = clip_signal(rec.audio, level)
        meta.update(clip_level=level)
    elif degradation == "combo":
        rt60, rir = rir_bank()[int(rng.integers(len(rir_bank())))]
        snr = float(rng.choice(QC_SNRS_DB))
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        audio = add_noise(apply_rir(rec.audio, rir), kind, snr, seed)
        meta.update(rt60_s=rt60, snr_db=snr, noise=kind)
    else:
        raise ConfigError(f"unknown degradation {degradation!r}")
    return Recording(rec.id, audio, rec.label, degradation, rec.sample_labels, meta)


def qc_recording_set(n_per_class: int, seed: int, duration_s: float = 5.0,
                     n_outliers: int | None = None, prefix: str = "r") -> list:
    """Balanced clean/noise/reverb/distortion recordings plus outliers, each from its own vowel."""
    rng = np.random.default_rng(seed)
    n_outliers = n_per_class if n_outliers is None else n_outliers
    base = vowels(-(-4 * n_per_class // 2), seed, duration_s)
    order = rng.permutation(len(base))[:4 * n_per_class]
    out = []
    for i, idx in enumerate(order):
        cls = ("clean", "noise", "reverb", "distortion")[i % 4]
        rec = degrade_recording(base[idx], cls, rng)
        rec.id = f"{prefix}{i:04d}"
        out.append(rec)
    for j in range(n_outliers):
        kind = OUTLIER_KINDS[j % len(OUTLIER_KINDS)]
        audio = outlier(kind, duration_s, int(rng.integers(2 ** 31)))
        out.append(Recording(f"{prefix}o{j:04d}", audio, None, "outlier", meta={"outlier": kind}))
    return out


def ubm_pool_set(n_per_class: int, seed: int, duration_s: float = 5.0, prefix: str = "u") -> list:
    """Background material for the QC universal model.

    Every degradation class plus noisy-reverberant combinations and a few
    outliers, so no class owns a region of feature space the others never visit.
    """
    rng = np.random.default_rng(seed)
    kinds = ("noise", "reverb", "distortion", "combo", "clean")
    base = vowels(-(-len(kinds) * n_per_class // 2), seed, duration_s)
    out = []
    for i, cls in enumerate(kinds):
        for j in range(n_per_class):
            rec = degrade_recording(base[i * n_per_class + j], cls, rng)
            rec.id = f"{prefix}{i * n_per_class + j:04d}"
            out.append(rec)
    for j in range(n_per_class // 2):
        audio = outlier(OUTLIER_KINDS[j % len(OUTLIER_KINDS)], duration_s, int(rng.integers(2 ** 31)))
        out.append(Recording(f"{prefix}o{j:04d}", audio, None, "outlier"))
    return out


def recordings_from_manifest(manifest, split: str | None = None, rate: int = PIPELINE_RATE) -> list:
    """Load manifest entries (optionally one split) as Recording objects at the pipeline rate."""
    out = []
    for e in manifest:
        if split is not None and e.split != split:
            continue
        out.append(Recording(e.id, manifest.load_audio(e, rate), e.label, e.degradation))
    if not out:
        raise DataError(f"manifest has no recordings{'' if split is None else f' in split {split!r}'}")
    return out


def inject_violations(audio: AudioBuffer, labels: np.ndarray, rng: np.random.Generator,
                      n_segments: tuple = (1, 3), seg_s: tuple = (0.4, 2.5)) -> AudioBuffer:
    """Overwrite random segments with speech, silence or tones; marks them VIOLATION in `labels`."""
    x = audio.samples.copy()
    n = len(x)
    peak = float(np.max(np.abs(x))) or 1.0
    for _ in range(int(rng.integers(n_segments[0], n_segments[1] + 1))):
        length = min(int(rng.uniform(*seg_s) * audio.rate), n)
        start = int(rng.integers(0, n - length + 1))
        kind = OUTLIER_KINDS[int(rng.integers(len(OUTLIER_KINDS)))]
        seg = outlier(kind, length / audio.rate, int(rng.integers(2 ** 31)), audio.rate).samples[:length]
        if kind != "silence":
            seg = seg * (peak / max(float(np.max(np.abs(seg))), 1e-12)) * rng.uniform(0.5, 1.0)
        x[start:start + length] = seg
        labels[start:start + length] = VIOLATION
    return AudioBuffer(x, audio.rate)


def frame_qc_set(n_per_class: int, seed: int, duration_s: float = 10.0, degraded_frac: float = 0.5,
                 violation_frac: float = 0.2, degraded_share: float = 0.6,
                 snrs=(-5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0), prefix: str = "f") -> list:
    """Vowels where some recordings have `degraded_share` of their duration noisy and some carry violations.

    Every recording gets per-sample truth labels (1 adherence, 2 degraded, 3 violation).
    """
    rng = np.random.default_rng(seed)
    recs = vowels(n_per_class, seed, duration_s)
    n = len(recs)
    perm = rng.permutation(n)
    n_deg = int(round(degraded_frac * n))
    n_vio = int(round(violation_frac * n))
    deg_set = set(perm[:n_deg].tolist())
    vio_set = set(perm[n_deg:n_deg + n_vio].tolist())
    out = []
    for i, rec in enumerate(recs):
        labels = np.full(len(rec.audio), ADHERENCE, dtype=np.int8)
        audio = rec.audio
        meta = {}
        if i in deg_set:
            mask = segment_mask(len(audio), audio.rate, degraded_share, int(rng.integers(2 ** 31)))
            kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
            snr = float(rng.choice(snrs))
            audio = add_noise(audio, kind, snr, int(rng.integers(2 ** 31)), region=mask)
            labels[mask] = DEGRADED
            meta.update(noise=kind, snr_db=snr)
        if i in vio_set:
            audio = inject_violations(audio, labels, rng)
        deg = "noise" if i in deg_set else ("outlier" if i in vio_set else "clean")
        out.append(Recording(f"{prefix}{i:04d}", audio, rec.label, deg, labels, meta))
    return out


def noisy_segment_set(recs: list, seed: int, share: float = 0.6, snrs=(-5.0, 0.0, 5.0, 10.0),
                      violation_frac: float = 0.0) -> list:
    """Copy of `recs` with `share` of every recording corrupted by noise at a random SNR."""
    rng = np.random.default_rng(seed)
    out = []
    for rec in recs:
        labels = np.full(len(rec.audio), ADHERENCE, dtype=np.int8)
        mask = segment_mask(len(rec.audio), rec.audio.rate, share, int(rng.integers(2 ** 31)))
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        snr = float(rng.choice(snrs))
        audio = add_noise(rec.audio, kind, snr, int(rng.integers(2 ** 31)), region=mask)
        labels[mask] = DEGRADED
        if violation_frac and rng.random() < violation_frac:
            audio = inject_violations(audio, labels, rng, n_segments=(1, 2), seg_s=(0.3, 1.5))
        out.append(Recording(rec.id, audio, rec.label, "noise", labels,
                             {"noise": kind, "snr_db": snr}))
    return out
