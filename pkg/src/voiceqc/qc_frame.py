"""Frame-level quality control: iHMM state sequences mapped to adherence/degraded/violation by naive Bayes."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import ConfigError, DataError
from .audio import AudioBuffer
from .enhance import OBS_HOP_S, ADHERENCE, DEGRADED, VIOLATION
from .features import FeatureMatrix, average_frames, extract
from .ihmm import IhmmResult

FRAME_CLASSES = (ADHERENCE, DEGRADED, VIOLATION)
CLASS_NAMES = {ADHERENCE: "adherence", DEGRADED: "degraded", VIOLATION: "violation"}
AVERAGE_GROUP = 5


def observations(audio: AudioBuffer) -> FeatureMatrix:
    """Averaged MFCC-13 observations, one per ~0.1 s."""
    obs = average_frames(extract(audio, "mfcc13"), AVERAGE_GROUP)
    if len(obs) == 0:
        raise DataError("audio shorter than one observation")
    return obs


def build_histograms(states, n_states: int, window: int = 5) -> np.ndarray:
    """(T, K) state counts over a centred window of `window` observations, truncated at the edges.

    States are 1-based.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be a positive odd count, got {window}")
    s = np.asarray(states, dtype=np.int64)
    if s.size and (s.min() < 1 or s.max() > n_states):
        raise DataError(f"states must lie in 1..{n_states}")
    T = s.size
    onehot = np.zeros((T + 1, n_states))
    onehot[np.arange(1, T + 1), s - 1] = 1.0
    csum = np.cumsum(onehot, axis=0)
    half = window // 2
    lo = np.clip(np.arange(T) - half, 0, T)
    hi = np.clip(np.arange(T) + half + 1, 0, T)
    return csum[hi] - csum[lo]


@dataclass(frozen=True)
class NbModel:
    probs: np.ndarray  # (K, 3) state-given-class probabilities
    priors: np.ndarray  # (3,)
    totals: np.ndarray  # (3,) histogram mass per class in training

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    def log_probs(self, n_states: int) -> np.ndarray:
        """Log table widened to n_states columns; unseen states get the smoothing floor."""
        K = self.n_states
        lp = np.log(self.probs)
        if n_states <= K:
            return lp
        extra = np.broadcast_to(-np.log(self.totals + K), (n_states - K, 3))
        return np.vstack([lp, extra])

    def to_json(self) -> dict:
        return {"schema": "nb-v1", "probs": self.probs.tolist(), "priors": self.priors.tolist(),
                "totals": self.totals.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NbModel":
        if obj.get("schema") != "nb-v1":
            raise DataError(f"unsupported model schema {obj.get('schema')!r}")
        return cls(np.array(obj["probs"]), np.array(obj["priors"]), np.array(obj["totals"]))


def nb_train(hists, labels, smoothing: float = 1.0) -> NbModel:
    """Multinomial naive Bayes with additive smoothing and empirical class priors."""
    H = np.vstack(hists).astype(np.float64)
    y = np.concatenate([np.atleast_1d(np.asarray(v)) for v in labels]).astype(np.int64)
    if H.shape[0] != y.shape[0]:
        raise DataError("histograms and labels differ in length")
    if np.any(H < 0):
        raise DataError("histogram counts must be non-negative")
    present = set(np.unique(y).tolist())
    if not set(FRAME_CLASSES) <= present:
        raise DataError(f"training labels miss classes {sorted(set(FRAME_CLASSES) - present)}")
    if present - set(FRAME_CLASSES):
        raise DataError("labels must be 1, 2 or 3")
    K = H.shape[1]
    counts = np.stack([H[y == c].sum(axis=0) for c in FRAME_CLASSES], axis=1)  # (K, 3)
    totals = counts.sum(axis=0)
    probs = (counts + smoothing) / (totals + smoothing * K)
    priors = np.array([np.mean(y == c) for c in FRAME_CLASSES])
    return NbModel(probs, priors, totals)


def nb_log_scores(model: NbModel, hists) -> np.ndarray:
    H = np.atleast_2d(np.asarray(hists, dtype=np.float64))
    if np.any(H < 0):
        raise DataError("histogram counts must be non-negative")
    return np.log(model.priors)[None, :] + H @ model.log_probs(H.shape[1])[:H.shape[1]]


def nb_predict(model: NbModel, hist):
    """(label, posterior) for one histogram, or arrays of both for a (T, K) stack."""
    H = np.asarray(hist, dtype=np.float64)
    single = H.ndim == 1
    scores = nb_log_scores(model, H)
    post = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
    # argmax returns the first maximum, i.e. the lower class index on ties
    labels = np.asarray(FRAME_CLASSES)[np.argmax(scores, axis=1)]
    if single:
        return int(labels[0]), post[0]
    return labels, post


@dataclass
class FrameLabels:
    labels: np.ndarray  # (T,) values in {1, 2, 3}
    posterior: np.ndarray  # (T, 3)
    states: np.ndarray  # (T,) 1-based iHMM states
    obs_hop_s: float = OBS_HOP_S

    def to_json(self, rec_id: str) -> dict:
        return {"id": rec_id, "obs_hop_s": self.obs_hop_s, "states": self.states.tolist(),
                "labels": self.labels.tolist(), "posteriors": self.posterior.tolist()}


def label_observations(obs, ihmm: IhmmResult, nb: NbModel, window: int = 5) -> FrameLabels:
    states = ihmm.assign(obs)
    hist = build_histograms(states, max(ihmm.n_states, int(states.max())), window)
    labels, post = nb_predict(nb, hist)
    return FrameLabels(np.asarray(labels, dtype=np.int64), post, np.asarray(states))


def label_recording(audio: AudioBuffer, ihmm: IhmmResult, nb: NbModel, window: int = 5) -> FrameLabels:
    """Observations -> iHMM states (fitted or decoded) -> histograms -> naive Bayes labels."""
    return label_observations(observations(audio), ihmm, nb, window)


def obs_labels_from_mask(sample_labels: np.ndarray, n_obs: int, rate: int,
                         hop_s: float = OBS_HOP_S) -> np.ndarray:
    """Majority per-sample class inside each observation's hop; ties go to the higher class."""
    hop = int(round(hop_s * rate))
    lab = np.asarray(sample_labels, dtype=np.int64)
    out = np.empty(n_obs, dtype=np.int64)
    for i in range(n_obs):
        seg = lab[i * hop:(i + 1) * hop]
        if seg.size == 0:
            seg = lab[-hop:]
        counts = np.bincount(seg, minlength=4)[1:]
        out[i] = 3 - int(np.argmax(counts[::-1]))
    return out


def confusion(true_labels: Iterable, pred_labels: Iterable) -> np.ndarray:
    """3x3 counts, rows true class, columns predicted."""
    t = np.concatenate([np.atleast_1d(a) for a in true_labels]).astype(np.int64)
    p = np.concatenate([np.atleast_1d(a) for a in pred_labels]).astype(np.int64)
    if t.shape != p.shape:
        raise DataError("label sequences differ in length")
    m = np.zeros((3, 3), dtype=np.int64)
    np.add.at(m, (t - 1, p - 1), 1)
    return m


def write_frame_labels(items: Sequence[tuple[str, FrameLabels]], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec_id, fl in items:
            fh.write(json.dumps(fl.to_json(rec_id)) + "\n")


def read_frame_labels(path: str | os.PathLike) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[obj["id"]] = FrameLabels(np.asarray(obj["labels"], dtype=np.int64),
                                             np.asarray(obj["posteriors"], dtype=np.float64),
                                             np.asarray(obj["states"], dtype=np.int64),
                                             float(obj.get("obs_hop_s", OBS_HOP_S)))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{n}: bad frame-label record ({exc})") from None
    return out
