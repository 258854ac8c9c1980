"""Audio buffers, PCM16 WAV I/O, resampling and corpus manifests."""

from __future__ import annotations

import json
import logging
import os
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import signal

from . import ConfigError, DataError

log = logging.getLogger(__name__)

PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise DataError("audio must be mono (1-D samples)")
        if self.rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(x)):
            raise DataError("audio contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.rate)


def read_wav(path: str | os.PathLike) -> AudioBuffer:
    """Read a mono 16-bit PCM WAV file, scaling samples by 1/32768."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a PCM WAV file ({exc})") from exc
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if channels != 1:
        raise DataError(f"{path}: expected mono, got {channels} channels")
    if len(raw) < 2 * n:
        raise DataError(f"{path}: truncated data chunk ({len(raw)} of {2 * n} bytes)")
    if n == 0:
        raise DataError(f"{path}: empty audio")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / PCM_SCALE, rate)


def write_wav(buffer: AudioBuffer, path: str | os.PathLike) -> None:
    if len(buffer) == 0:
        raise DataError("cannot write empty audio")
    x = np.clip(buffer.samples, -1.0, 1.0 - 1.0 / PCM_SCALE)
    pcm = np.round(x * PCM_SCALE).astype("<i2")
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(buffer.rate))
            w.writeframes(pcm.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _polyphase_filter(up: int, down: int, taps_per_phase: int = 64,
                      beta: float = 8.0) -> np.ndarray:
    # taps_per_phase counts taps per branch of the larger of the two rate factors
    factor = max(up, down)
    n_taps = taps_per_phase * factor + 1
    # unit DC gain; resample_poly applies the factor `up` itself
    return signal.firwin(n_taps, 1.0 / factor, window=("kaiser", beta))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Windowed-sinc polyphase resampling; output length round(L*target/source)."""
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if target_rate == buffer.rate:
        return AudioBuffer(buffer.samples.copy(), buffer.rate)
    ratio = Fraction(int(target_rate), int(buffer.rate))
    up, down = ratio.numerator, ratio.denominator
    h = _polyphase_filter(up, down)
    y = signal.resample_poly(buffer.samples, up, down, window=h)
    n_out = int(round(len(buffer) * target_rate / buffer.rate))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.shape[0])])
    return AudioBuffer(y, int(target_rate))


CLASSES = ("pd", "hc", "unknown")
DEGRADATIONS = ("clean", "noise", "reverb", "distortion", "combo", "outlier")
SPLITS = ("train", "test", "dev")
_REQUIRED = ("id", "path", "class", "degradation", "split")
_OPTIONAL = ("snr_db", "rt60_s", "clip_level")


@dataclass
class ManifestEntry:
    id: str
    path: str
    label: str
    degradation: str = "clean"
    split: str = "train"
    snr_db: float | None = None
    rt60_s: float | None = None
    clip_level: float | None = None

    def validate(self) -> None:
        if self.label not in CLASSES:
            raise DataError(f"entry {self.id!r}: unknown class {self.label!r}")
        if self.degradation not in DEGRADATIONS:
            raise DataError(f"entry {self.id!r}: unknown degradation {self.degradation!r}")
        if self.split not in SPLITS:
            raise DataError(f"entry {self.id!r}: unknown split {self.split!r}")
        needs_snr = self.degradation in ("noise", "combo")
        if needs_snr and self.snr_db is None:
            raise DataError(f"entry {self.id!r}: degradation={self.degradation} requires snr_db")
        if not needs_snr and self.snr_db is not None:
            raise DataError(f"entry {self.id!r}: snr_db given for degradation={self.degradation}")

    def to_json(self) -> dict:
        d = {"id": self.id, "path": self.path, "class": self.label,
             "degradation": self.degradation, "split": self.split}
        for key in _OPTIONAL:
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise DataError(f"duplicate id {e.id!r}")
            seen.add(e.id)
            e.validate()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load_audio(self, entry: ManifestEntry, rate: int | None = None) -> AudioBuffer:
        buf = read_wav(self.resolve(entry))
        if rate is not None and buf.rate != rate:
            buf = resample(buf, rate)
        return buf

    def select(self, **criteria) -> "CorpusManifest":
        keep = [e for e in self.entries
                if all(getattr(e, k) == v for k, v in criteria.items())]
        return CorpusManifest(keep, self.root)


def _entry_from_json(obj: dict, lineno: int) -> ManifestEntry:
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise DataError(f"line {lineno}: missing required field(s) {', '.join(missing)}")
    unknown = set(obj) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        log.warning("line %d: ignoring unknown field(s) %s", lineno, sorted(unknown))
    kwargs = {k: (None if obj.get(k) is None else float(obj[k])) for k in _OPTIONAL}
    return ManifestEntry(id=str(obj["id"]), path=str(obj["path"]), label=obj["class"],
                         degradation=obj["degradation"], split=obj["split"], **kwargs)


def load_manifest(path: str | os.PathLike, check_paths: bool = True) -> CorpusManifest:
    """Load and validate a JSON-Lines corpus manifest."""
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc})") from exc
            entries.append(_entry_from_json(obj, lineno))
    manifest = CorpusManifest(entries, root=path.parent)
    if check_paths:
        for e in manifest:
            if not manifest.resolve(e).exists():
                raise DataError(f"entry {e.id!r}: path not found: {e.path}")
    return manifest


def save_manifest(manifest: CorpusManifest | Iterable[ManifestEntry],
                  path: str | os.PathLike) -> None:
    entries = manifest.entries if isinstance(manifest, CorpusManifest) else list(manifest)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
