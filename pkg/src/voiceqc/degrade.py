"""Degradation simulation: additive noise at a target SNR, clipping, image-method reverberation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from . import ConfigError, DataError
from .audio import AudioBuffer

SOUND_SPEED = 343.0


def _power(x: np.ndarray) -> float:
    return float(np.mean(x * x))


def white_noise(n: int, rate: int, seed: int) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(rng.standard_normal(n), rate)


def speech_shaped_noise(n: int, rate: int, seed: int) -> AudioBuffer:
    """Gaussian noise with a long-term speech-like spectrum.

    Flat to ~500 Hz, then falling about 9 dB/octave; realised as white
    noise through a fixed low-order IIR.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n + 512)
    b, a = signal.butter(2, 500.0 / (rate / 2.0), btype="low")
    shaped = signal.lfilter(b, a, w) + 0.05 * w
    # mild high-pass to remove the sub-100 Hz rumble
    hb, ha = signal.butter(1, 100.0 / (rate / 2.0), btype="high")
    shaped = signal.lfilter(hb, ha, shaped)[512:]
    return AudioBuffer(shaped / np.std(shaped), rate)


def pink_noise(n: int, rate: int, seed: int) -> AudioBuffer:
    """Gaussian noise with a 1/f power spectrum, unit variance."""
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[1:] /= np.sqrt(f[1:] / f[1])
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return AudioBuffer(x / np.std(x), rate)


NOISE_TYPES = {"white": white_noise, "speech_shaped": speech_shaped_noise, "pink": pink_noise}


def make_noise(kind: str, n: int, rate: int, seed: int) -> AudioBuffer:
    try:
        return NOISE_TYPES[kind](n, rate, seed)
    except KeyError:
        raise ConfigError(f"unknown noise type {kind!r}") from None


def _crop_noise(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(noise) < n:
        reps = -(-n // len(noise)) + 1
        noise = np.tile(noise, reps)
    offset = int(rng.integers(0, len(noise) - n + 1))
    return noise[offset:offset + n]


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float, seed: int = 0,
               region: np.ndarray | None = None) -> AudioBuffer:
    """Add noise scaled so that clean-to-noise power over the mixed region equals snr_db.

    `region` is an optional boolean sample mask; noise is added only where
    it is true and powers are measured over that region.
    """
    if clean.rate != noise.rate:
        raise DataError(f"rate mismatch: {clean.rate} vs {noise.rate}")
    rng = np.random.default_rng(seed)
    n = len(clean)
    seg = _crop_noise(noise.samples, n, rng)
    mask = np.ones(n, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    if mask.shape != (n,):
        raise DataError("region mask must match the clean signal length")
    p_clean = _power(clean.samples[mask]) if mask.any() else 0.0
    p_noise = _power(seg[mask]) if mask.any() else 0.0
    if p_clean == 0.0:
        raise DataError("clean signal is silent over the mixed region")
    if p_noise == 0.0:
        raise DataError("noise is silent over the mixed region")
    gain = np.sqrt(p_clean / p_noise * 10.0 ** (-snr_db / 10.0))
    out = clean.samples + gain * np.where(mask, seg, 0.0)
    return AudioBuffer(out, clean.rate)


def measure_snr(clean: AudioBuffer | np.ndarray, noise_component: AudioBuffer | np.ndarray) -> float:
    c = clean.samples if isinstance(clean, AudioBuffer) else np.asarray(clean, float)
    e = noise_component.samples if isinstance(noise_component, AudioBuffer) else np.asarray(noise_component, float)
    if c.shape != e.shape:
        raise DataError("signals must have equal length")
    pe = float(np.sum(e * e))
    if pe == 0.0:
        raise DataError("noise component has zero power")
    return 10.0 * np.log10(float(np.sum(c * c)) / pe)


def clip_signal(x: AudioBuffer, level: float) -> AudioBuffer:
    """Limit samples to +-level * max|x|."""
    if not 0.0 < level <= 1.0:
        raise ConfigError(f"clipping level must be in (0, 1], got {level}")
    peak = float(np.max(np.abs(x.samples)))
    if peak == 0.0:
        raise DataError("cannot clip a silent signal")
    thr = level * peak
    return AudioBuffer(np.clip(x.samples, -thr, thr), x.rate)


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple = (10.0, 6.0, 4.0)
    src: tuple = (3.0, 3.0, 1.5)
    mic: tuple = (5.0, 3.0, 1.5)
    rt60: float = 0.6
    c: float = SOUND_SPEED
    max_order: int | None = None

    def validate(self) -> None:
        dims = np.asarray(self.dims, float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ConfigError(f"room dimensions must be three positive lengths, got {self.dims}")
        for name in ("src", "mic"):
            p = np.asarray(getattr(self, name), float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise ConfigError(f"{name} {tuple(p)} is not strictly inside the room")
        if np.allclose(self.src, self.mic):
            raise ConfigError("source and microphone coincide")
        if self.rt60 < 0:
            raise ConfigError(f"rt60 must be non-negative, got {self.rt60}")
        if self.c <= 0:
            raise ConfigError("sound speed must be positive")

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.src, self.mic)))


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    rate: int

    def __len__(self) -> int:
        return self.taps.shape[0]


def sabine_reflection(dims, rt60: float) -> float:
    """Uniform wall pressure reflection coefficient from Sabine's formula."""
    if rt60 <= 0:
        return 0.0
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    absorption = 0.161 * volume / (surface * rt60)
    return float(np.sqrt(max(0.0, 1.0 - absorption)))


def _image_taps(spec: RoomSpec, beta: float, rate: int, n_taps: int) -> np.ndarray:
    max_dist = n_taps * spec.c / rate
    dims = np.asarray(spec.dims, float)
    src = np.asarray(spec.src, float)
    mic = np.asarray(spec.mic, float)
    taps = np.zeros(n_taps)
    # per axis: image offsets (1 - 2q) s + 2 n L - m and reflection counts |n - q| + |n|
    axis_terms = []
    for ax in range(3):
        n = np.arange(-(int(np.ceil(max_dist / (2 * dims[ax]))) + 1),
                      int(np.ceil(max_dist / (2 * dims[ax]))) + 2)
        offs = np.concatenate([(1 - 2 * q) * src[ax] + 2 * n * dims[ax] - mic[ax] for q in (0, 1)])
        refl = np.concatenate([np.abs(n - q) + np.abs(n) for q in (0, 1)])
        axis_terms.append((offs, refl))
    (dx, rx), (dy, ry), (dz, rz) = axis_terms
    log_beta = np.log(beta)
    for i in range(len(dx)):
        d2_xy = dx[i] ** 2 + dy[:, None] ** 2
        if d2_xy.min() >= max_dist ** 2:
            continue
        dist = np.sqrt(d2_xy[:, :, None] + dz[None, None, :] ** 2)
        refl = rx[i] + ry[:, None, None] + rz[None, None, :]
        keep = dist < max_dist
        if spec.max_order is not None:
            keep &= refl <= spec.max_order
        if not keep.any():
            continue
        d = dist[keep]
        amp = np.exp(refl[keep] * log_beta) / (4 * np.pi * d)
        idx = np.rint(d / spec.c * rate).astype(np.int64)
        ok = idx < n_taps
        taps += np.bincount(idx[ok], weights=amp[ok], minlength=n_taps)
    return taps


def generate_rir(spec: RoomSpec, rate: int = 8000, calibrate: bool = True) -> Rir:
    """Allen-Berkley image method with a uniform wall reflection coefficient.

    Tap amplitude per image is beta**reflections / (4 pi d), delays rounded
    to the nearest sample, length ceil(rt60 * rate) taps (never shorter than
    the direct path). beta starts from Sabine's formula; with `calibrate`
    it is refined until the Schroeder-measured RT60 is within 2% of the
    requested one, because a shoebox with identical walls decays more slowly
    than the statistical formulas predict.
    """
    spec.validate()
    beta = sabine_reflection(spec.dims, spec.rt60)
    direct_delay = int(round(spec.distance / spec.c * rate))
    if beta == 0.0:
        taps = np.zeros(direct_delay + 1)
        taps[direct_delay] = 1.0 / (4 * np.pi * spec.distance)
        return Rir(taps, rate)
    n_taps = max(int(np.ceil(spec.rt60 * rate)), direct_delay + 1)
    taps = _image_taps(spec, beta, rate, n_taps)
    if not calibrate:
        return Rir(taps, rate)
    for _ in range(8):
        try:
            measured = measure_rt60(Rir(taps, rate))
        except DataError:
            break
        ratio = measured / spec.rt60
        if abs(ratio - 1.0) < 0.02:
            break
        # decay rate scales with -ln(beta)
        beta = float(np.exp(np.log(beta) * ratio))
        taps = _image_taps(spec, beta, rate, n_taps)
    return Rir(taps, rate)


def apply_rir(x: AudioBuffer, rir: Rir) -> AudioBuffer:
    """Convolve and truncate to the input length; renormalise to the input peak if it overflows."""
    if len(rir) == 0:
        raise DataError("empty RIR")
    if rir.rate != x.rate:
        raise DataError(f"rate mismatch: audio {x.rate} vs RIR {rir.rate}")
    nz = np.flatnonzero(rir.taps)
    if nz.size <= 1:
        # pure gain and delay: exact, no FFT round-off
        y = np.zeros(len(x))
        if nz.size and nz[0] < len(x):
            k = int(nz[0])
            y[k:] = rir.taps[k] * x.samples[:len(x) - k]
    else:
        y = signal.fftconvolve(x.samples, rir.taps)[:len(x)]
    peak = float(np.max(np.abs(y))) if len(y) else 0.0
    if peak > 1.0:
        y = y * (float(np.max(np.abs(x.samples))) / peak)
    return AudioBuffer(y, x.rate)


def schroeder_curve(taps: np.ndarray) -> np.ndarray:
    """Energy decay curve in dB (0 dB at t=0)."""
    energy = np.cumsum((taps ** 2)[::-1])[::-1]
    if energy[0] <= 0:
        raise DataError("RIR has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def measure_rt60(rir: Rir, start_db: float = -5.0, stop_db: float = -35.0) -> float:
    """RT60 from a least-squares line through the Schroeder curve between -5 and -35 dB."""
    edc = schroeder_curve(np.asarray(rir.taps, float))
    idx = np.flatnonzero((edc <= start_db) & (edc >= stop_db))
    if idx.size < 2 or not np.any(edc < stop_db):
        raise DataError("no measurable decay")
    t = idx / rir.rate
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise DataError("no measurable decay")
    t30 = (stop_db - start_db) / slope
    return float(2.0 * t30)


def segment_mask(n: int, rate: int, fraction: float, seed: int,
                 min_seg_s: float = 0.5, max_seg_s: float = 2.0) -> np.ndarray:
    """Boolean mask covering ~`fraction` of n samples with random contiguous segments."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must be in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    target = int(round(fraction * n))
    mask = np.zeros(n, dtype=bool)
    if target == 0:
        return mask
    if target >= n:
        mask[:] = True
        return mask
    # split the target into segments and the remainder into gaps, then interleave
    lengths = []
    left = target
    while left > 0:
        seg = int(rng.uniform(min_seg_s, max_seg_s) * rate)
        seg = min(max(seg, 1), left)
        lengths.append(seg)
        left -= seg
    gaps_total = n - target
    cuts = np.sort(rng.integers(0, gaps_total + 1, size=len(lengths)))
    gaps = np.diff(np.concatenate([[0], cuts]))
    pos = 0
    for g, seg in zip(gaps, lengths):
        pos += int(g)
        mask[pos:pos + seg] = True
        pos += seg
    return mask
