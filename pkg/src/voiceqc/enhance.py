"""Log-spectral-amplitude MMSE noise reduction and label-guided selective enhancement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter1d
from scipy.special import exp1

from . import ConfigError, DataError
from .audio import AudioBuffer

OBS_HOP_S = 0.1  # frame-level QC observation spacing
ADHERENCE, DEGRADED, VIOLATION = 1, 2, 3


@dataclass(frozen=True)
class EnhanceConfig:
    frame_s: float = 0.032
    hop_s: float = 0.008
    gain_floor_db: float = -25.0
    dd_weight: float = 0.98
    psd_smoothing: float = 0.85
    tracker_window_s: float = 1.5
    # minimum over neighbouring bins so harmonic peaks of a held vowel are not read as noise
    tracker_freq_halfwidth: int = 4
    crossfade_s: float = 0.010

    def validate(self) -> None:
        if self.frame_s <= 0 or self.hop_s <= 0 or self.hop_s > self.frame_s:
            raise ConfigError("need 0 < hop <= frame")
        if not 0 <= self.dd_weight < 1 or not 0 <= self.psd_smoothing < 1:
            raise ConfigError("smoothing weights must lie in [0, 1)")
        if self.gain_floor_db > 0 or self.tracker_window_s <= 0 or self.tracker_freq_halfwidth < 0:
            raise ConfigError("invalid enhancer settings")

    @property
    def gain_floor(self) -> float:
        return 10.0 ** (self.gain_floor_db / 20.0)


def _geometry(cfg: EnhanceConfig, rate: int) -> tuple[int, int]:
    n = int(round(cfg.frame_s * rate))
    hop = int(round(cfg.hop_s * rate))
    if n % hop:
        raise ConfigError("frame length must be a multiple of the hop for perfect reconstruction")
    return n, hop


def analysis_window(n: int, hop: int) -> np.ndarray:
    """Square-root periodic Hann, scaled so analysis x synthesis windows sum to one."""
    w = np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))
    return w / np.sqrt((n / hop) / 2.0)


def stft(x: np.ndarray, n: int, hop: int) -> np.ndarray:
    """Frames padded by n - hop on both ends so every sample is covered by n/hop frames."""
    pad = n - hop
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + (-len(x)) % hop)])
    n_frames = (len(xp) - n) // hop + 1
    idx = np.arange(n)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * analysis_window(n, hop), axis=1)


def istft(spec: np.ndarray, n: int, hop: int, length: int) -> np.ndarray:
    frames = np.fft.irfft(spec, n=n, axis=1) * analysis_window(n, hop)
    pad = n - hop
    out = np.zeros(hop * (frames.shape[0] - 1) + n)
    for i, f in enumerate(frames):
        out[i * hop:i * hop + n] += f
    return out[pad:pad + length]


_BIAS_CACHE: dict = {}


def _min_bias(window_frames: int, smoothing: float) -> float:
    """Ratio true PSD / expected minimum of the smoothed periodogram of Gaussian noise.

    Computed once per setting by simulation with a fixed generator so the result is deterministic.
    """
    key = (window_frames, round(smoothing, 6))
    if key not in _BIAS_CACHE:
        rng = np.random.default_rng(12345)
        n_bins, n_frames = 64, window_frames * 6
        per = rng.exponential(1.0, size=(n_frames, n_bins))
        sm = np.empty_like(per)
        sm[0] = per[0]
        for t in range(1, n_frames):
            sm[t] = smoothing * sm[t - 1] + (1 - smoothing) * per[t]
        mins = _causal_min(sm, window_frames)[window_frames:]
        _BIAS_CACHE[key] = float(1.0 / np.mean(mins))
    return _BIAS_CACHE[key]


def _causal_min(x: np.ndarray, size: int) -> np.ndarray:
    """Minimum over rows t-size+1 .. t; the first rows see a shorter history."""
    return minimum_filter1d(x, size=size, axis=0, origin=size // 2 - size + 1, mode="nearest")


def track_noise_psd(power: np.ndarray, frame_rate: float, cfg: EnhanceConfig | None = None) -> np.ndarray:
    """Minimum-statistics noise PSD per (frame, bin) from a power spectrogram.

    Smoothed periodogram, causal sliding minimum over the tracker window,
    then a minimum across neighbouring bins, scaled by a bias factor that
    makes the estimate unbiased for stationary white Gaussian noise.
    """
    cfg = cfg or EnhanceConfig()
    P = np.asarray(power, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise DataError("need at least one STFT frame")
    if np.any(P < 0):
        raise DataError("power spectrogram must be non-negative")
    a = cfg.psd_smoothing
    sm = np.empty_like(P)
    sm[0] = P[0]
    for t in range(1, P.shape[0]):
        sm[t] = a * sm[t - 1] + (1 - a) * P[t]
    win = max(1, int(round(cfg.tracker_window_s * frame_rate)))
    # causal: minimum over frames t-win+1 .. t (edge frames see a shorter history)
    mins = _causal_min(sm, win)
    bias = _min_bias(win, a)
    if cfg.tracker_freq_halfwidth:
        mins = minimum_filter1d(mins, size=2 * cfg.tracker_freq_halfwidth + 1, axis=1, mode="nearest")
        bias *= _freq_min_bias(cfg.tracker_freq_halfwidth, win, a)
    return mins * bias


_FREQ_BIAS_CACHE: dict = {}


def _freq_min_bias(halfwidth: int, window_frames: int, smoothing: float) -> float:
    key = (halfwidth, window_frames, round(smoothing, 6))
    if key not in _FREQ_BIAS_CACHE:
        rng = np.random.default_rng(54321)
        n_bins, n_frames = 129, window_frames * 4
        per = rng.exponential(1.0, size=(n_frames, n_bins))
        sm = np.empty_like(per)
        sm[0] = per[0]
        for t in range(1, n_frames):
            sm[t] = smoothing * sm[t - 1] + (1 - smoothing) * per[t]
        mins = _causal_min(sm, window_frames)[window_frames:]
        fm = minimum_filter1d(mins, size=2 * halfwidth + 1, axis=1, mode="nearest")
        _FREQ_BIAS_CACHE[key] = float(np.mean(mins) / np.mean(fm))
    return _FREQ_BIAS_CACHE[key]


def mmse_gain(prior_snr, post_snr, floor: float = 10 ** (-25 / 20)) -> np.ndarray:
    """Log-spectral-amplitude gain xi/(1+xi) * exp(E1(v)/2), v = xi*gamma/(1+xi), clamped to [floor, 1]."""
    xi = np.asarray(prior_snr, dtype=np.float64)
    gamma = np.asarray(post_snr, dtype=np.float64)
    if np.any(xi < 0) or np.any(gamma < 0):
        raise DataError("SNRs must be non-negative")
    if not (np.all(np.isfinite(gamma)) and np.all(~np.isnan(xi))):
        raise DataError("SNRs must be finite")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(np.isinf(xi), 1.0, xi / (1.0 + xi))
        v = ratio * gamma
        # E1(0) diverges; v -> 0 only where the ratio also vanishes, so clamp below
        g = ratio * np.exp(0.5 * exp1(np.maximum(v, 1e-300)))
    g = np.where(np.isnan(g), floor, g)
    return np.clip(g, floor, 1.0)


def enhance(noisy: AudioBuffer, cfg: EnhanceConfig | None = None) -> AudioBuffer:
    """Full-signal log-MMSE enhancement with decision-directed prior SNR."""
    cfg = cfg or EnhanceConfig()
    cfg.validate()
    n, hop = _geometry(cfg, noisy.rate)
    if len(noisy) < n + hop:
        raise DataError("audio too short for enhancement")
    spec = stft(noisy.samples, n, hop)
    power = np.abs(spec) ** 2
    noise = track_noise_psd(power, noisy.rate / hop, cfg)
    floor = cfg.gain_floor
    eps = 1e-12 * max(float(np.max(noise)), 1e-30)
    gains = np.empty_like(power)
    prev_clean = np.zeros(power.shape[1])
    for t in range(power.shape[0]):
        lam = np.maximum(noise[t], eps)
        gamma = power[t] / lam
        xi = cfg.dd_weight * prev_clean / lam + (1 - cfg.dd_weight) * np.maximum(gamma - 1.0, 0.0)
        xi = np.maximum(xi, floor ** 2)
        g = mmse_gain(xi, gamma, floor)
        gains[t] = g
        prev_clean = (g ** 2) * power[t]
    if float(np.max(noise)) == 0.0:
        gains[:] = 1.0
    out = istft(spec * gains, n, hop, len(noisy))
    return AudioBuffer(out, noisy.rate)


def _crossfade_blend(orig: np.ndarray, proc: np.ndarray, regions: np.ndarray, fade: int) -> np.ndarray:
    """Take `proc` inside regions and `orig` elsewhere, with linear ramps centred on each boundary."""
    w = regions.astype(np.float64)
    if fade > 1:
        kernel = np.ones(fade) / fade
        w = np.convolve(w, kernel, mode="same")
        # keep exact 0/1 away from run boundaries
        w = np.clip(w, 0.0, 1.0)
        w[w < 1e-9] = 0.0
        w[w > 1.0 - 1e-9] = 1.0
    return orig * (1.0 - w) + proc * w


def obs_to_samples(values: np.ndarray, n: int, rate: int, hop_s: float = OBS_HOP_S) -> np.ndarray:
    """Expand per-observation values to samples; the last observation extends to the end."""
    hop = int(round(hop_s * rate))
    idx = np.minimum(np.arange(n) // hop, len(values) - 1)
    return np.asarray(values)[idx]


def selective_enhance(audio: AudioBuffer, labels, cfg: EnhanceConfig | None = None,
                      hop_s: float = OBS_HOP_S) -> tuple[AudioBuffer, np.ndarray]:
    """Enhance degraded runs only; violations are passed through and masked out.

    `labels` holds one class per observation (1 adherence, 2 degraded, 3 violation),
    or any object with a `labels` attribute. Returns (audio, keep_mask per observation).
    """
    cfg = cfg or EnhanceConfig()
    y = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if y.ndim != 1 or y.size == 0:
        raise DataError("need a non-empty label sequence")
    if np.any((y < 1) | (y > 3)):
        raise DataError("labels must be 1, 2 or 3")
    hop = int(round(hop_s * audio.rate))
    expected = len(audio) / hop
    if abs(y.size - expected) > 1.0 + 1e-9:
        raise DataError(f"{y.size} labels do not cover {len(audio)} samples at {hop_s} s spacing")
    keep = y != VIOLATION
    degraded = obs_to_samples(y == DEGRADED, len(audio), audio.rate, hop_s)
    if not degraded.any():
        return audio, keep
    enhanced = enhance(audio, cfg).samples
    fade = int(round(cfg.crossfade_s * audio.rate))
    out = _crossfade_blend(audio.samples, enhanced, degraded, fade)
    return AudioBuffer(out, audio.rate), keep


def segmental_snr(clean: np.ndarray, test: np.ndarray, rate: int, frame_s: float = 0.03,
                  lo: float = -10.0, hi: float = 35.0) -> float:
    """Mean per-frame SNR of `test` against `clean`, each frame clamped to [lo, hi] dB."""
    clean = np.asarray(clean, float)
    test = np.asarray(test, float)
    if clean.shape != test.shape:
        raise DataError("signals must have equal length")
    n = int(round(frame_s * rate))
    k = len(clean) // n
    c = clean[:k * n].reshape(k, n)
    e = (test[:k * n] - clean[:k * n]).reshape(k, n)
    pc = np.sum(c ** 2, axis=1)
    pe = np.sum(e ** 2, axis=1)
    active = pc > 1e-10 * max(float(pc.max()), 1e-300)
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(pc[active] / np.maximum(pe[active], 1e-300))
    return float(np.mean(np.clip(snr, lo, hi)))
