"""PD/HC likelihood-ratio detection, ROC/AUC and repeated stratified cross-validation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ConfigError, DataError
from .features import FeatureMatrix
from .gmm import EmConfig, GmmModel, em_fit


@dataclass(frozen=True)
class PdModelPair:
    pd: GmmModel
    hc: GmmModel
    kind: str = "plp39"

    def __post_init__(self):
        if self.pd.dim != self.hc.dim:
            raise DataError("PD and HC models have different dimensions")

    def swapped(self) -> "PdModelPair":
        return PdModelPair(self.hc, self.pd, self.kind)

    def to_json(self) -> dict:
        return {"schema": "pdpair-v1", "kind": self.kind,
                "pd": self.pd.to_json(), "hc": self.hc.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "PdModelPair":
        if obj.get("schema") != "pdpair-v1":
            raise DataError(f"unsupported model schema {obj.get('schema')!r}")
        return cls(GmmModel.from_json(obj["pd"]), GmmModel.from_json(obj["hc"]), obj["kind"])


def save_pair(pair: PdModelPair, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pair.to_json(), fh)


def load_pair(path: str | os.PathLike) -> PdModelPair:
    with open(path, encoding="utf-8") as fh:
        return PdModelPair.from_json(json.load(fh))


def _pool(feats: Sequence[FeatureMatrix]) -> np.ndarray:
    return np.vstack([f.data for f in feats])


def train_pd(pd_feats: Sequence[FeatureMatrix], hc_feats: Sequence[FeatureMatrix],
             n_components: int = 32, cfg: EmConfig | None = None) -> PdModelPair:
    """Fit one GMM to the pooled frames of each class."""
    if not pd_feats:
        raise DataError("no PD recordings to train on")
    if not hc_feats:
        raise DataError("no HC recordings to train on")
    cfg = cfg or EmConfig()
    kind = pd_feats[0].kind
    return PdModelPair(em_fit(_pool(pd_feats), n_components, cfg),
                       em_fit(_pool(hc_feats), n_components, cfg), kind)


def score_llr(pair: PdModelPair, X: FeatureMatrix | np.ndarray, normalize: bool = False) -> float:
    """sum_t log p(x_t | PD) - sum_t log p(x_t | HC); divided by T when normalize."""
    data = X.data if isinstance(X, FeatureMatrix) else np.atleast_2d(np.asarray(X, float))
    if data.shape[0] == 0:
        raise DataError("cannot score an empty feature matrix")
    if data.shape[1] != pair.pd.dim:
        raise DataError(f"feature dim {data.shape[1]} does not match model dim {pair.pd.dim}")
    if pair.pd is pair.hc:
        return 0.0
    llr = pair.pd.frame_loglik(data).sum() - pair.hc.frame_loglik(data).sum()
    return float(llr / data.shape[0]) if normalize else float(llr)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("threshold,fpr,tpr\n")
            for th, f, t in self.points:
                fh.write(f"{th!r},{f!r},{t!r}\n")


def _split_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("labels must be binary (0/1)")
    yb = y.astype(bool)
    pos, neg = s[yb], s[~yb]
    if pos.size == 0 or neg.size == 0:
        raise DataError("ROC needs both positive and negative examples")
    return s, yb, pos, neg


def mann_whitney_auc(scores, labels) -> float:
    """P(score+ > score-) + 0.5 P(tie), via exact integer pair counting."""
    _, _, pos, neg = _split_scores(scores, labels)
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    twice = int(np.sum(below, dtype=np.int64) + np.sum(not_above, dtype=np.int64))
    return twice / (2 * pos.size * neg.size)


def roc_auc(scores, labels) -> RocCurve:
    """ROC from sweeping every distinct threshold (score >= thr is positive)."""
    s, y, pos, neg = _split_scores(scores, labels)
    thr = np.unique(s)[::-1]
    order = np.sort(pos)
    tp = pos.size - np.searchsorted(order, thr, side="left")
    nsorted = np.sort(neg)
    fp = neg.size - np.searchsorted(nsorted, thr, side="left")
    thresholds = np.concatenate([[np.inf], thr])
    tpr = np.concatenate([[0.0], tp / pos.size])
    fpr = np.concatenate([[0.0], fp / neg.size])
    return RocCurve(thresholds, fpr, tpr, mann_whitney_auc(s, y))


def stratified_folds(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per item; each class is shuffled then dealt round-robin."""
    y = np.asarray(labels)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if idx.size < k:
            raise DataError(f"class {cls!r} has {idx.size} items, fewer than k={k}")
        perm = rng.permutation(idx)
        folds[perm] = (np.arange(perm.size) + offset) % k
        offset += perm.size
    return folds


def percentile_ci(values, level: float = 0.95) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = np.percentile(v, [100 * (1 - level) / 2, 100 * (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class CvResult:
    aucs: dict  # condition -> list of AUCs in (rep, fold) order
    scores: dict  # condition -> (reps, n) array of held-out scores
    labels: np.ndarray
    folds: np.ndarray  # (reps, n)
    models: list = field(default_factory=list)

    def mean(self, condition: str = "clean") -> float:
        return float(np.mean(self.aucs[condition]))

    def ci95(self, condition: str = "clean") -> tuple[float, float]:
        return percentile_ci(self.aucs[condition])

    def summary(self, condition: str = "clean") -> dict:
        lo, hi = self.ci95(condition)
        return {"auc_mean": self.mean(condition), "auc_ci95": [lo, hi],
                "per_fold": [float(a) for a in self.aucs[condition]]}

    def pooled_roc(self, condition: str = "clean", rep: int = 0) -> RocCurve:
        return roc_auc(self.scores[condition][rep], self.labels)


def cross_validate(features: Sequence[FeatureMatrix], labels, k: int = 5, reps: int = 10,
                   seed: int = 0, n_components: int = 32, em: EmConfig | None = None,
                   conditions: Mapping[str, Sequence[FeatureMatrix] | Callable] | None = None,
                   normalize: bool = False, keep_models: bool = False) -> CvResult:
    """Repeated stratified k-fold CV of the PD/HC detector.

    Models are always trained on `features` of the training folds. Held-out
    recordings are scored on the clean features (condition "clean") and on
    each entry of `conditions`: either a parallel list of test-time feature
    matrices or a callable (index, pair) -> score for custom pipelines.
    Labels: 1 = PD (positive), 0 = HC.
    """
    y = np.asarray(labels).astype(int)
    if len(features) != len(y):
        raise DataError("features and labels differ in length")
    if k < 2 or reps < 1:
        raise ConfigError("need k >= 2 and reps >= 1")
    conds = {"clean": features}
    conds.update(conditions or {})
    for name, feats in conds.items():
        if not callable(feats) and len(feats) != len(y):
            raise DataError(f"condition {name!r} has {len(feats)} items, expected {len(y)}")
    rng = np.random.default_rng(seed)
    em = em or EmConfig(seed=seed)
    n = len(y)
    aucs = {c: [] for c in conds}
    scores = {c: np.zeros((reps, n)) for c in conds}
    folds_all = np.zeros((reps, n), dtype=np.int64)
    models = []
    for r in range(reps):
        folds = stratified_folds(y, k, rng)
        folds_all[r] = folds
        for f in range(k):
            test = np.flatnonzero(folds == f)
            train = np.flatnonzero(folds != f)
            pair = train_pd([features[i] for i in train if y[i] == 1],
                            [features[i] for i in train if y[i] == 0],
                            n_components, EmConfig(em.max_iters, em.rel_tol, em.var_floor_frac,
                                                   em.seed + 1000 * r + f, em.kmeans_iters))
            if keep_models:
                models.append(pair)
            for name, feats in conds.items():
                for i in test:
                    if callable(feats):
                        scores[name][r, i] = feats(int(i), pair)
                    else:
                        scores[name][r, i] = score_llr(pair, feats[i], normalize)
                aucs[name].append(mann_whitney_auc(scores[name][r, test], y[test]))
    return CvResult(aucs, scores, y, folds_all, models)
