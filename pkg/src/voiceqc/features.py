"""Framing and cepstral features: MFCC-13/39, PLP-13/39, deltas, frame averaging."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from . import ConfigError, DataError
from .audio import AudioBuffer

FRAME_LEN_S = 0.030
HOP_S = 0.020
NFFT = 256
LOG_FLOOR = 1e-10
KINDS = ("mfcc13", "mfcc39", "plp13", "plp39", "mfcc13-averaged")


@dataclass(frozen=True)
class FrameSet:
    frames: np.ndarray  # T x N, already windowed
    frame_len_s: float
    hop_s: float
    rate: int

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def times(self) -> np.ndarray:
        """Frame centre times in seconds."""
        n = self.frames.shape[1]
        hop = int(round(self.hop_s * self.rate))
        return (np.arange(len(self)) * hop + n / 2.0) / self.rate


@dataclass
class FeatureMatrix:
    data: np.ndarray
    kind: str
    frame_times: np.ndarray

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.data.shape[0] != self.frame_times.shape[0]:
            raise DataError("frame_times length does not match feature rows")
        if not np.all(np.isfinite(self.data)):
            raise DataError("feature matrix contains non-finite values")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def subset(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.data[rows], self.kind, self.frame_times[rows])


def hamming(n: int) -> np.ndarray:
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1))


def frame_signal(buffer: AudioBuffer, frame_len_s: float = FRAME_LEN_S,
                 hop_s: float = HOP_S) -> FrameSet:
    """Cut the signal into Hamming-windowed frames, T = 1 + floor((L - N) / H)."""
    n = int(round(frame_len_s * buffer.rate))
    hop = int(round(hop_s * buffer.rate))
    if n < 2 or hop < 1:
        raise ConfigError("frame length and hop must span at least 2 and 1 samples")
    x = buffer.samples
    if len(x) < n:
        raise DataError(f"signal of {len(x)} samples is shorter than one frame ({n})")
    t = 1 + (len(x) - n) // hop
    idx = np.arange(n)[None, :] + hop * np.arange(t)[:, None]
    return FrameSet(x[idx] * hamming(n), frame_len_s, hop_s, buffer.rate)


def power_spectrum(frames: np.ndarray, nfft: int = NFFT) -> np.ndarray:
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = 23, nfft: int = NFFT, rate: int = 8000,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale, shape (n_filters, nfft//2+1)."""
    fmax = rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mfcc(frames: FrameSet, n_ceps: int = 12, n_filters: int = 23,
         preemph: float = 0.97) -> FeatureMatrix:
    """Log energy plus c1..c_n_ceps mel cepstra; 13 columns by default."""
    if len(frames) == 0:
        raise DataError("empty frame set")
    x = frames.frames
    log_e = np.log(np.sum(x ** 2, axis=1) + LOG_FLOOR)
    y = x.copy()
    y[:, 1:] -= preemph * x[:, :-1]
    fb = mel_filterbank(n_filters, NFFT, frames.rate)
    energies = power_spectrum(y) @ fb.T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)[:, 1:n_ceps + 1]
    return FeatureMatrix(np.column_stack([log_e, ceps]), "mfcc13", frames.times)


def hz_to_bark(f):
    return 6.0 * np.arcsinh(np.asarray(f) / 600.0)


def bark_to_hz(z):
    return 600.0 * np.sinh(np.asarray(z) / 6.0)


def bark_filterbank(nfft: int = NFFT, rate: int = 8000, n_bands: int | None = None):
    """Critical-band masking curves on the Bark scale.

    Returns (weights, centre_freqs); with n_bands=None the band count is
    ceil(bark(rate/2)) + 1, i.e. 17 bands at 8 kHz.
    """
    nyq_bark = hz_to_bark(rate / 2.0)
    if n_bands is None:
        n_bands = int(np.ceil(nyq_bark)) + 1
    step = nyq_bark / (n_bands - 1)
    centres = np.arange(n_bands) * step
    bins_bark = hz_to_bark(np.arange(nfft // 2 + 1) * rate / nfft)
    lof = bins_bark[None, :] - centres[:, None] - 0.5
    hif = bins_bark[None, :] - centres[:, None] + 0.5
    w = 10.0 ** np.minimum(0.0, np.minimum(hif, -2.5 * lof))
    return w, bark_to_hz(centres)


def equal_loudness(f) -> np.ndarray:
    fsq = np.asarray(f, dtype=np.float64) ** 2
    return (fsq / (fsq + 1.6e5)) ** 2 * ((fsq + 1.44e6) / (fsq + 9.61e6))


def levinson(r: np.ndarray, order: int):
    """Levinson-Durbin recursion, batched over rows of `r`.

    Returns (a, err) with a[..., 0] = 1 so the predictor polynomial is
    A(z) = sum_k a[k] z^-k. Raises ArithmeticError naming the first row
    whose prediction error becomes non-positive.
    """
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    a = np.zeros((r.shape[0], order + 1))
    a[:, 0] = 1.0
    err = r[:, 0].copy()
    for i in range(1, order + 1):
        _check_err(err, i - 1)
        acc = r[:, i] + np.sum(a[:, 1:i] * r[:, i - 1:0:-1], axis=1)
        k = -acc / err
        a[:, 1:i] = a[:, 1:i] + k[:, None] * a[:, i - 1:0:-1]
        a[:, i] = k
        err = err * (1.0 - k * k)
    _check_err(err, order)
    return (a[0], err[0]) if single else (a, err)


def _check_err(err: np.ndarray, order: int) -> None:
    bad = np.flatnonzero(~(err > 0))
    if bad.size:
        raise ArithmeticError(f"row {bad[0]}: prediction error non-positive at order {order}")


def lpc_to_cepstrum(a: np.ndarray, err, n_ceps: int) -> np.ndarray:
    """Cepstrum c0..c_{n_ceps-1} of the all-pole model err / |A|^2, batched over rows."""
    single = np.ndim(a) == 1
    a = np.atleast_2d(a)
    err = np.atleast_1d(err)
    p = a.shape[1] - 1
    c = np.zeros((a.shape[0], n_ceps))
    c[:, 0] = np.log(err)
    for n in range(1, n_ceps):
        acc = -a[:, n] if n <= p else np.zeros(a.shape[0])
        for k in range(max(1, n - p), n):
            acc = acc - (k / n) * c[:, k] * a[:, n - k]
        c[:, n] = acc
    return c[0] if single else c


def ar_spectrum(a: np.ndarray, err: float, n_points: int = 512) -> np.ndarray:
    """All-pole power spectrum on n_points bins from 0 to Nyquist."""
    w = np.linspace(0, np.pi, n_points)
    resp = np.exp(-1j * np.outer(w, np.arange(len(a)))) @ a
    return err / np.abs(resp) ** 2


def plp_lpc(frames: FrameSet, order: int = 12):
    """Per-frame PLP all-pole models: returns (A, errs), A is T x (order+1)."""
    if order < 1:
        raise ConfigError(f"PLP order must be >= 1, got {order}")
    if len(frames) == 0:
        raise DataError("empty frame set")
    pspec = power_spectrum(frames.frames)
    w, centres = bark_filterbank(NFFT, frames.rate)
    bands = np.maximum(pspec @ w.T, LOG_FLOOR) * equal_loudness(centres)
    loud = bands ** 0.33
    loud[:, 0] = loud[:, 1]
    loud[:, -1] = loud[:, -2]
    # symmetric spectrum -> autocorrelation by inverse DFT
    full = np.concatenate([loud, loud[:, -2:0:-1]], axis=1)
    r = np.fft.ifft(full, axis=1).real[:, :order + 1]
    try:
        return levinson(r, order)
    except ArithmeticError as exc:
        raise DataError(f"PLP Levinson-Durbin unstable: frame {exc}") from exc


def plp(frames: FrameSet, order: int = 12) -> FeatureMatrix:
    """PLP cepstra c0..c12 (13 columns with the default order)."""
    coefs, errs = plp_lpc(frames, order)
    ceps = lpc_to_cepstrum(coefs, errs, 13)
    return FeatureMatrix(ceps, "plp13", frames.times)


def _delta(x: np.ndarray, width: int = 2) -> np.ndarray:
    padded = np.concatenate([np.repeat(x[:1], width, axis=0), x,
                             np.repeat(x[-1:], width, axis=0)])
    t = x.shape[0]
    num = np.zeros_like(x)
    for k in range(1, width + 1):
        num += k * (padded[width + k:width + k + t] - padded[width - k:width - k + t])
    return num / (2.0 * sum(k * k for k in range(1, width + 1)))


def append_deltas(features: FeatureMatrix, width: int = 2) -> FeatureMatrix:
    """Append delta and double-delta columns: [x, dx, ddx]."""
    if len(features) < 1:
        raise DataError("need at least one frame for deltas")
    d1 = _delta(features.data, width)
    d2 = _delta(d1, width)
    kind = features.kind.replace("13", "39") if features.kind.endswith("13") else features.kind
    return FeatureMatrix(np.hstack([features.data, d1, d2]), kind, features.frame_times)


def average_frames(features: FeatureMatrix, group: int = 5) -> FeatureMatrix:
    """Average non-overlapping runs of `group` rows; a trailing partial run is kept."""
    if group < 1:
        raise ConfigError(f"group must be >= 1, got {group}")
    t = len(features)
    n_out = -(-t // group)
    ids = np.arange(t) // group
    counts = np.bincount(ids, minlength=n_out)[:, None]
    sums = np.zeros((n_out, features.dim))
    np.add.at(sums, ids, features.data)
    times = np.bincount(ids, weights=features.frame_times, minlength=n_out) / counts[:, 0]
    kind = "mfcc13-averaged" if features.kind == "mfcc13" else features.kind
    return FeatureMatrix(sums / counts, kind, times)


def extract(buffer: AudioBuffer, kind: str, hop_s: float = HOP_S) -> FeatureMatrix:
    """Convenience front end for the feature kinds used by the pipeline."""
    if kind not in KINDS:
        raise ConfigError(f"unknown feature kind {kind!r}")
    frames = frame_signal(buffer, FRAME_LEN_S, hop_s)
    if kind.startswith("plp"):
        feats = plp(frames)
    else:
        feats = mfcc(frames)
    if kind.endswith("39"):
        feats = append_deltas(feats)
    elif kind == "mfcc13-averaged":
        feats = average_frames(feats, 5)
    return feats


def write_features_csv(features: FeatureMatrix, path: str | os.PathLike) -> None:
    """CSV with a `kind=...,dims=...` header row; each row is time then values."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"kind={features.kind},dims={features.dim}\n")
        for t, row in zip(features.frame_times, features.data):
            fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")


def read_features_csv(path: str | os.PathLike) -> FeatureMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        meta = dict(part.split("=", 1) for part in header.split(","))
        dims = int(meta["dims"])
        rows = [list(map(float, line.split(","))) for line in fh if line.strip()]
    arr = np.array(rows, dtype=np.float64).reshape(-1, dims + 1)
    return FeatureMatrix(arr[:, 1:], meta["kind"], arr[:, 0])
