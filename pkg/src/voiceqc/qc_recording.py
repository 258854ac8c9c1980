"""Recording-level quality control with a UBM and MAP-adapted degradation detectors."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import DataError
from .features import FeatureMatrix
from .gmm import EmConfig, GmmModel, em_fit, map_adapt

QC_CLASSES = ("clean", "noise", "reverb", "distortion")


def _data(X) -> np.ndarray:
    arr = X.data if isinstance(X, FeatureMatrix) else np.atleast_2d(np.asarray(X, dtype=np.float64))
    if arr.shape[0] == 0:
        raise DataError("empty feature matrix")
    return arr


def _pool(features) -> np.ndarray:
    if isinstance(features, (FeatureMatrix, np.ndarray)):
        return _data(features)
    if not features:
        raise DataError("no features to pool")
    return np.vstack([_data(f) for f in features])


def train_ubm(features, n_components: int = 64, cfg: EmConfig | None = None,
              max_frames: int | None = None, seed: int = 0) -> GmmModel:
    """Degradation-independent background GMM over pooled frames.

    `max_frames` subsamples the pool uniformly (without replacement) to bound cost.
    """
    X = _pool(features)
    if max_frames is not None and X.shape[0] > max_frames:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(X.shape[0], max_frames, replace=False))]
    return em_fit(X, n_components, cfg)


@dataclass(frozen=True)
class DetectorBank:
    ubm: GmmModel
    models: Mapping[str, GmmModel]
    thresholds: Mapping[str, float] = field(default_factory=lambda: {c: 0.0 for c in QC_CLASSES})
    kind: str = "mfcc39"

    def __post_init__(self):
        if set(self.models) != set(QC_CLASSES):
            raise DataError(f"detector bank needs exactly the classes {QC_CLASSES}")
        if set(self.thresholds) != set(QC_CLASSES):
            raise DataError("thresholds must cover every detector")
        for name, m in self.models.items():
            if m.dim != self.ubm.dim or m.n_components != self.ubm.n_components:
                raise DataError(f"model {name!r} disagrees with the UBM in shape")

    def with_thresholds(self, thresholds: Mapping[str, float]) -> "DetectorBank":
        return DetectorBank(self.ubm, self.models, dict(thresholds), self.kind)

    def to_json(self) -> dict:
        return {"schema": "qcbank-v1", "kind": self.kind, "ubm": self.ubm.to_json(),
                "models": {c: self.models[c].to_json() for c in QC_CLASSES},
                "thresholds": {c: float(self.thresholds[c]) for c in QC_CLASSES}}

    @classmethod
    def from_json(cls, obj: dict) -> "DetectorBank":
        if obj.get("schema") != "qcbank-v1":
            raise DataError(f"unsupported bank schema {obj.get('schema')!r}")
        return cls(GmmModel.from_json(obj["ubm"]),
                   {c: GmmModel.from_json(m) for c, m in obj["models"].items()},
                   {c: float(v) for c, v in obj["thresholds"].items()},
                   obj.get("kind", "mfcc39"))


def save_bank(bank: DetectorBank, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bank.to_json(), fh)


def load_bank(path: str | os.PathLike) -> DetectorBank:
    with open(path, encoding="utf-8") as fh:
        return DetectorBank.from_json(json.load(fh))


def build_bank(ubm: GmmModel, class_features: Mapping[str, object], relevance: float = 16.0,
               kind: str = "mfcc39") -> DetectorBank:
    """MAP-adapt the UBM means to each degradation class; thresholds start at 0."""
    missing = [c for c in QC_CLASSES if c not in class_features]
    if missing:
        raise DataError(f"missing class data for {missing}")
    extra = set(class_features) - set(QC_CLASSES)
    if extra:
        raise DataError(f"unknown degradation classes {sorted(extra)}")
    models = {c: map_adapt(ubm, _pool(class_features[c]), relevance) for c in QC_CLASSES}
    return DetectorBank(ubm, models, {c: 0.0 for c in QC_CLASSES}, kind)


def frame_scores(bank: DetectorBank, X) -> np.ndarray:
    """Per-frame log p(x|class) - log p(x|ubm), shape (T, 4) in QC_CLASSES order."""
    data = _data(X)
    if data.shape[1] != bank.ubm.dim:
        raise DataError(f"feature dim {data.shape[1]} does not match bank dim {bank.ubm.dim}")
    ubm_ll = bank.ubm.frame_loglik(data)
    cols = []
    for c in QC_CLASSES:
        m = bank.models[c]
        cols.append(np.zeros_like(ubm_ll) if m is bank.ubm else m.frame_loglik(data) - ubm_ll)
    return np.stack(cols, axis=1)


def detector_scores(bank: DetectorBank, X) -> dict:
    """Duration-normalised log-likelihood ratio per detector."""
    per_frame = frame_scores(bank, X)
    return {c: float(v) for c, v in zip(QC_CLASSES, per_frame.mean(axis=0))}


@dataclass(frozen=True)
class QcDecision:
    scores: Mapping[str, float]
    accepted: tuple
    verdict: str  # single-class | multi-class | outlier
    best: str  # argmax under equal priors

    def to_json(self, rec_id: str | None = None) -> dict:
        out = {"scores": {c: float(self.scores[c]) for c in self.scores},
               "accepted": list(self.accepted), "verdict": self.verdict, "best": self.best}
        if rec_id is not None:
            out = {"id": rec_id, **out}
        return out


def decide(scores: Mapping[str, float], thresholds: Mapping[str, float]) -> QcDecision:
    if set(scores) != set(thresholds):
        raise DataError("scores and thresholds have different keys")
    order = [c for c in QC_CLASSES if c in scores] + sorted(set(scores) - set(QC_CLASSES))
    accepted = tuple(c for c in order if scores[c] >= thresholds[c])
    verdict = "outlier" if not accepted else ("single-class" if len(accepted) == 1 else "multi-class")
    # every detector shares the UBM denominator, so the largest ratio is the largest class likelihood
    best = max(order, key=lambda c: (scores[c], -order.index(c)))
    return QcDecision(dict(scores), accepted, verdict, best)


def eer_threshold(positives: Sequence[float], negatives: Sequence[float]) -> tuple[float, float]:
    """Threshold (accept if score >= thr) minimising |miss - false alarm|; returns (thr, eer).

    When the sets are separated, the midpoint of the gap is returned with eer 0.
    """
    pos = np.sort(np.asarray(positives, dtype=np.float64))
    neg = np.sort(np.asarray(negatives, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise DataError("threshold calibration needs positive and negative scores")
    if pos[0] > neg[-1]:
        return float((pos[0] + neg[-1]) / 2), 0.0
    cands = np.unique(np.concatenate([pos, neg]))
    mids = np.concatenate([[cands[0] - 1.0], (cands[:-1] + cands[1:]) / 2, [cands[-1] + 1.0]])
    miss = np.searchsorted(pos, mids, side="left") / pos.size
    fa = (neg.size - np.searchsorted(neg, mids, side="left")) / neg.size
    gap = np.abs(miss - fa)
    best = np.flatnonzero(gap == gap.min())
    # several equally balanced thresholds: take the middle one
    i = best[len(best) // 2]
    return float(mids[i]), float((miss[i] + fa[i]) / 2)


def calibrate_thresholds(bank: DetectorBank, dev_scores: Mapping[str, tuple]) -> DetectorBank:
    """Per-detector EER thresholds from (positive scores, negative scores) per class."""
    missing = [c for c in QC_CLASSES if c not in dev_scores]
    if missing:
        raise DataError(f"no dev scores for {missing}")
    thr = {c: eer_threshold(*dev_scores[c])[0] for c in QC_CLASSES}
    return bank.with_thresholds(thr)


def dev_score_sets(score_dicts: Sequence[Mapping[str, float]], labels: Sequence[str]) -> dict:
    """Split recording scores into one-vs-rest sets; labels outside QC_CLASSES count as negatives only."""
    if len(score_dicts) != len(labels):
        raise DataError("scores and labels differ in length")
    out = {}
    for c in QC_CLASSES:
        pos = [s[c] for s, y in zip(score_dicts, labels) if y == c]
        neg = [s[c] for s, y in zip(score_dicts, labels) if y != c]
        out[c] = (pos, neg)
    return out
