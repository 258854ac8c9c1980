"""Experiment orchestration: clean-trained degradation sweeps, QC-guided enhancement scenarios, reports."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import ConfigError, DataError, PIPELINE_RATE, __version__
from .audio import load_manifest
from .config import config_hash, from_dict, to_dict
from .corpora import (Recording, add_noise, close_rir, degrade_recording,
                      frame_qc_set, noisy_segment_set, qc_recording_set, recordings_from_manifest,
                      ubm_pool_set, vowels)
from .degrade import apply_rir, clip_signal
from .detector import cross_validate, roc_auc, percentile_ci
from .enhance import OBS_HOP_S, EnhanceConfig, enhance, selective_enhance
from .features import KINDS, FeatureMatrix, extract
from .gmm import EmConfig, map_adapt
from .ihmm import IhmmConfig, ihmm_fit
from .qc_frame import (CLASS_NAMES, build_histograms, confusion, label_observations, nb_train,
                       obs_labels_from_mask, observations)
from .qc_recording import QC_CLASSES, DetectorBank, detector_scores, train_ubm

log = logging.getLogger(__name__)

ENHANCEMENT_MODES = ("none", "full", "random", "predicted", "oracle")
SWEEP_FAMILIES = ("white", "speech_shaped", "pink", "babble", "reverb", "clipping")
KINDS_OF_RUN = ("integration", "sweep")


@dataclass
class CorpusSettings:
    manifest: str | None = None  # WAV corpus; a synthetic one is generated when absent
    split: str | None = None
    n_per_class: int = 100
    duration_s: float = 10.0
    seed: int = 1

    def validate(self) -> None:
        if self.manifest is None and (self.n_per_class < 5 or self.duration_s <= 0):
            raise ConfigError("synthetic corpus needs n_per_class >= 5 and a positive duration")


@dataclass
class CvSettings:
    folds: int = 5
    reps: int = 3
    n_components: int = 32
    em_iters: int = 30
    feature_kind: str = "plp39"
    seed: int = 0

    def validate(self) -> None:
        if self.folds < 2 or self.reps < 1 or self.n_components < 1 or self.em_iters < 1:
            raise ConfigError("need folds >= 2 and positive reps, n_components, em_iters")
        if self.feature_kind not in KINDS:
            raise ConfigError(f"unknown feature kind {self.feature_kind!r}")


@dataclass
class SweepPlan:
    families: tuple = ("white", "speech_shaped", "reverb", "clipping")
    snrs_db: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    rt60s: tuple = (0.3, 0.6, 0.9, 1.2, 1.5, 1.8)
    mic_distance_m: float = 0.3
    clip_levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    seed: int = 1000

    def validate(self) -> None:
        bad = set(self.families) - set(SWEEP_FAMILIES)
        if bad:
            raise ConfigError(f"unknown sweep families {sorted(bad)}")
        if self.mic_distance_m <= 0:
            raise ConfigError("mic distance must be positive")


@dataclass
class DegradationPlan:
    """How the test split of an integration run is corrupted."""
    share: float = 0.6  # fraction of each recording under noise (frame level)
    snrs_db: tuple = (0.0, 5.0, 10.0)
    violation_frac: float = 0.0
    # recording level: whole-recording classes assigned round-robin
    recording_classes: tuple = ("clean", "noise", "reverb")
    seed: int = 5

    def validate(self) -> None:
        if not 0 <= self.share <= 1 or not 0 <= self.violation_frac <= 1:
            raise ConfigError("share and violation_frac must lie in [0, 1]")
        bad = set(self.recording_classes) - set(QC_CLASSES)
        if bad or not self.recording_classes:
            raise ConfigError(f"recording_classes must be a non-empty subset of {QC_CLASSES}")


@dataclass
class QcSettings:
    level: str = "frame"  # or "recording"
    train_per_class: int = 50
    train_duration_s: float = 10.0
    train_seed: int = 7
    # frame level
    alpha: float = 10.0
    gamma: float = 10.0
    iters: int = 150
    ihmm_seed: int = 0
    window: int = 5
    smoothing: float = 1.0
    transductive: bool = True  # fit the iHMM on training plus (unlabelled) test observations
    # recording level
    ubm_components: int = 64
    relevance: float = 16.0
    ubm_max_frames: int = 80000

    def validate(self) -> None:
        if self.level not in ("frame", "recording"):
            raise ConfigError(f"QC level must be 'frame' or 'recording', got {self.level!r}")
        if self.train_per_class < 2 or self.train_duration_s <= 0:
            raise ConfigError("QC training corpus too small")


@dataclass
class ExperimentConfig:
    kind: str = "integration"
    scenarios: tuple = ("none", "random", "predicted", "oracle")
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    cv: CvSettings = field(default_factory=CvSettings)
    degradation: DegradationPlan = field(default_factory=DegradationPlan)
    sweep: SweepPlan = field(default_factory=SweepPlan)
    qc: QcSettings = field(default_factory=QcSettings)
    enhancer: EnhanceConfig = field(default_factory=EnhanceConfig)
    seed: int = 0  # coin flips of the "random" scenario
    out_dir: str | None = None

    def validate(self) -> None:
        if self.kind not in KINDS_OF_RUN:
            raise ConfigError(f"kind must be one of {KINDS_OF_RUN}, got {self.kind!r}")
        if self.kind == "integration":
            if not self.scenarios:
                raise ConfigError("scenario list is empty")
            unknown = [s for s in self.scenarios if s not in ENHANCEMENT_MODES]
            if unknown:
                raise ConfigError(f"unknown enhancement mode(s) {unknown}; choose from {ENHANCEMENT_MODES}")
            if len(set(self.scenarios)) != len(self.scenarios):
                raise ConfigError("duplicate scenarios")
        elif not self.sweep.families:
            raise ConfigError("scenario list is empty: no sweep families")
        for part in (self.corpus, self.cv, self.degradation, self.sweep, self.qc, self.enhancer):
            part.validate()

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        return from_dict(cls, data)

    def to_dict(self) -> dict:
        return to_dict(self)

    def hash(self) -> str:
        return config_hash(self)


@dataclass
class ScenarioResult:
    name: str
    aucs: list  # per (rep, fold)
    scores: np.ndarray  # (reps, n) held-out scores
    labels: np.ndarray  # (n,) 1 = PD

    @property
    def auc(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def ci95(self) -> tuple[float, float]:
        return percentile_ci(self.aucs)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    def roc(self):
        reps = self.scores.shape[0]
        return roc_auc(self.scores.ravel(), np.tile(self.labels, reps))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    scenarios: list
    confusion: np.ndarray | None = None
    confusion_classes: tuple = ()
    trends: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def auc(self, name: str) -> float:
        for s in self.scenarios:
            if s.name == name:
                return s.auc
        raise KeyError(name)


# -- corpus -----------------------------------------------------------------

def load_corpus(cfg: CorpusSettings) -> list:
    if cfg.manifest is not None:
        recs = recordings_from_manifest(load_manifest(cfg.manifest), cfg.split)
        recs = [r for r in recs if r.label in ("pd", "hc")]
    else:
        recs = vowels(cfg.n_per_class, cfg.seed, cfg.duration_s)
    labels = [r.label for r in recs]
    if labels.count("pd") < 2 or labels.count("hc") < 2:
        raise DataError("corpus needs at least two PD and two HC recordings")
    return recs


def _binary(recs) -> np.ndarray:
    return np.array([1 if r.label == "pd" else 0 for r in recs])


def _em(cv: CvSettings) -> EmConfig:
    return EmConfig(max_iters=cv.em_iters, seed=cv.seed)


def _features(audio, kind: str, keep: np.ndarray | None = None) -> FeatureMatrix:
    """Features with frames under dropped observations removed (all kept if nothing would remain)."""
    f = extract(audio, kind)
    if keep is None or keep.all():
        return f
    idx = np.clip(np.floor(f.frame_times / OBS_HOP_S).astype(np.int64), 0, len(keep) - 1)
    mask = np.asarray(keep, dtype=bool)[idx]
    return f.subset(mask) if mask.any() else f


# -- sweeps -----------------------------------------------------------------

def sweep_conditions(recs: list, plan: SweepPlan, kind: str) -> tuple[dict, dict]:
    """Test-time feature sets per sweep level plus the (family -> [(level, name)]) layout."""
    conds, layout = {}, {}
    for fam in plan.families:
        layout[fam] = []
        if fam == "reverb":
            levels = plan.rt60s
        elif fam == "clipping":
            levels = plan.clip_levels
        else:
            levels = plan.snrs_db
        for level in levels:
            level = float(level)
            if fam == "reverb":
                name = f"reverb@{level:g}s"
                rir = close_rir(level, plan.mic_distance_m)
                feats = [extract(apply_rir(r.audio, rir), kind) for r in recs]
            elif fam == "clipping":
                name = f"clip@{level:g}"
                feats = [extract(clip_signal(r.audio, level), kind) for r in recs]
            else:
                name = f"{fam}@{level:g}dB"
                # one noise realisation per recording across levels, so only the SNR changes
                feats = [extract(add_noise(r.audio, fam, level, plan.seed + i), kind)
                         for i, r in enumerate(recs)]
            conds[name] = feats
            layout[fam].append((level, name))
    return conds, layout


def _trend(layout: dict, aucs: dict) -> dict:
    out = {}
    for fam, items in layout.items():
        levels = [lv for lv, _ in items]
        values = [aucs[name] for _, name in items]
        # severity grows with lower SNR, longer RT60 and lower clipping level
        severity = levels if fam == "reverb" else [-lv for lv in levels]
        varied = len(items) > 1 and len(set(values)) > 1
        rho = float(spearmanr(severity, values).statistic) if varied else float("nan")
        out[fam] = {"levels": levels, "auc": values, "spearman_vs_severity": rho}
    return out


def run_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    recs = load_corpus(cfg.corpus)
    y = _binary(recs)
    kind = cfg.cv.feature_kind
    clean = [extract(r.audio, kind) for r in recs]
    conds, layout = sweep_conditions(recs, cfg.sweep, kind)
    log.info("sweep: %d conditions over %d recordings", len(conds), len(recs))
    cv = cross_validate(clean, y, cfg.cv.folds, cfg.cv.reps, cfg.cv.seed, cfg.cv.n_components,
                        _em(cfg.cv), conditions=conds, normalize=True)
    scenarios = [ScenarioResult(name, list(cv.aucs[name]), cv.scores[name], y)
                 for name in ["clean", *conds]]
    means = {s.name: s.auc for s in scenarios}
    return ExperimentResult(cfg, scenarios, trends=_trend(layout, means),
                            notes={"models": "trained on clean features of the training folds"})


# -- integration -------------------------------------------------------------

def _degrade_test_split(recs: list, cfg: ExperimentConfig) -> list:
    plan = cfg.degradation
    if cfg.qc.level == "frame":
        if plan.share == 0 and plan.violation_frac == 0:
            return [Recording(r.id, r.audio, r.label, "clean",
                              np.ones(len(r.audio), dtype=np.int8)) for r in recs]
        return noisy_segment_set(recs, plan.seed, plan.share, plan.snrs_db, plan.violation_frac)
    rng = np.random.default_rng(plan.seed)
    order = rng.permutation(len(recs))
    classes = plan.recording_classes
    out = [None] * len(recs)
    for j, i in enumerate(order):
        out[i] = degrade_recording(recs[i], classes[j % len(classes)], rng)
    return out


def _frame_qc(test: list, cfg: ExperimentConfig):
    """Predicted per-observation labels for the test split, truth labels, and the confusion matrix."""
    qc = cfg.qc
    train = frame_qc_set(qc.train_per_class, qc.train_seed, qc.train_duration_s)
    train_obs = [observations(r.audio) for r in train]
    train_truth = [obs_labels_from_mask(r.sample_labels, len(o), r.audio.rate)
                   for r, o in zip(train, train_obs)]
    test_obs = [observations(r.audio) for r in test]
    fit_obs = [o.data for o in train_obs] + ([o.data for o in test_obs] if qc.transductive else [])
    ihmm = ihmm_fit(fit_obs, IhmmConfig(alpha=qc.alpha, gamma=qc.gamma, iters=qc.iters, seed=qc.ihmm_seed))
    log.info("iHMM: %d states, best sweep %d", ihmm.n_states, ihmm.best_sweep)
    hists = [build_histograms(ihmm.assign(o), ihmm.n_states, qc.window) for o in train_obs]
    nb = nb_train(hists, train_truth, qc.smoothing)
    predicted = [label_observations(o, ihmm, nb, qc.window).labels for o in test_obs]
    truth = [obs_labels_from_mask(r.sample_labels, len(o), r.audio.rate) for r, o in zip(test, test_obs)]
    return predicted, truth, confusion(truth, predicted), {"ihmm_states": ihmm.n_states}


def train_recording_qc(qc: QcSettings, kind: str = "mfcc39") -> DetectorBank:
    """UBM on pooled background material, then one mean-adapted model per QC class."""
    duration = min(qc.train_duration_s, 5.0)
    pool = ubm_pool_set(qc.train_per_class, qc.train_seed, duration)
    adapt = qc_recording_set(qc.train_per_class, qc.train_seed + 1, duration, n_outliers=0, prefix="a")
    ubm = train_ubm([extract(r.audio, kind) for r in pool], qc.ubm_components,
                    EmConfig(max_iters=50, seed=qc.train_seed), qc.ubm_max_frames, qc.train_seed)
    models = {}
    for cls in QC_CLASSES:
        X = np.vstack([extract(r.audio, kind).data for r in adapt if r.degradation == cls])
        models[cls] = map_adapt(ubm, X, qc.relevance)
    return DetectorBank(ubm, models, {c: 0.0 for c in models}, kind)


def _recording_qc(test: list, cfg: ExperimentConfig):
    bank = train_recording_qc(cfg.qc)
    predicted = []
    for r in test:
        scores = detector_scores(bank, extract(r.audio, bank.kind))
        predicted.append(max(scores, key=lambda c: (scores[c], -QC_CLASSES.index(c))))
    truth = [r.degradation for r in test]
    idx = {c: i for i, c in enumerate(QC_CLASSES)}
    m = np.zeros((len(idx), len(idx)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        m[idx[t], idx[p]] += 1
    return predicted, truth, m


def _recording_process(audio, cls: str, enh: EnhanceConfig):
    # only the noise branch has an enhancer; reverberant and clipped audio pass through
    return enhance(audio, enh) if cls == "noise" else audio


def run_integration(cfg: ExperimentConfig) -> ExperimentResult:
    recs = load_corpus(cfg.corpus)
    y = _binary(recs)
    test = _degrade_test_split(recs, cfg)
    kind, enh = cfg.cv.feature_kind, cfg.enhancer
    needs_qc = "predicted" in cfg.scenarios
    notes = {"training": "each scenario's processed features are used for training and testing (matched CV)"}
    conf, conf_classes, predicted, truth = None, (), None, None
    if cfg.qc.level == "frame":
        if needs_qc:
            predicted, truth, conf, extra = _frame_qc(test, cfg)
            notes.update(extra)
            conf_classes = tuple(CLASS_NAMES[c] for c in (1, 2, 3))
        else:
            truth = [obs_labels_from_mask(r.sample_labels, len(observations(r.audio)), r.audio.rate)
                     for r in test]
    else:
        notes["reverb_branch"] = "pass-through (no dereverberation enhancer available)"
        if needs_qc:
            predicted, truth, conf = _recording_qc(test, cfg)
            conf_classes = QC_CLASSES
        else:
            truth = [r.degradation for r in test]

    full_cache = {}

    def full(i):
        if i not in full_cache:
            full_cache[i] = enhance(test[i].audio, enh)
        return full_cache[i]

    coin = np.random.default_rng([cfg.seed, 17]).random(len(test)) < 0.5
    scenarios = []
    for mode in cfg.scenarios:
        feats = []
        for i, r in enumerate(test):
            keep = None
            if mode == "none" or (mode == "random" and not coin[i]):
                audio = r.audio
            elif mode in ("full", "random"):
                audio = full(i)
            elif cfg.qc.level == "frame":
                labels = predicted[i] if mode == "predicted" else truth[i]
                audio, keep = selective_enhance(r.audio, labels, enh)
            else:
                cls = predicted[i] if mode == "predicted" else truth[i]
                audio = full(i) if cls == "noise" else r.audio
            feats.append(_features(audio, kind, keep))
        log.info("scenario %s: features ready", mode)
        cv = cross_validate(feats, y, cfg.cv.folds, cfg.cv.reps, cfg.cv.seed, cfg.cv.n_components,
                            _em(cfg.cv), normalize=True)
        scenarios.append(ScenarioResult(mode, list(cv.aucs["clean"]), cv.scores["clean"], y))
    return ExperimentResult(cfg, scenarios, conf, conf_classes, notes=notes)


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> ExperimentResult:
    """Run the configured scenario matrix; writes a report when an output directory is given."""
    cfg.validate()
    result = run_integration(cfg) if cfg.kind == "integration" else run_sweep(cfg)
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir is not None:
        emit_report(result, out_dir)
    return result


# -- report -----------------------------------------------------------------

def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "@.-_" else "_" for ch in name)


def emit_report(result: ExperimentResult, out_dir: str | os.PathLike) -> Path:
    """metrics.json, roc.csv per scenario, confusion.csv (when QC ran) and run_manifest.json."""
    if not result.scenarios:
        raise ConfigError("scenario list is empty; nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics = {}
        for s in result.scenarios:
            lo, hi = s.ci95
            metrics[s.name] = {"auc": s.auc, "ci95": [lo, hi], "n": s.n}
            sub = out / _safe_name(s.name)
            sub.mkdir(exist_ok=True)
            s.roc().write_csv(sub / "roc.csv")
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
        if result.confusion is not None:
            with open(out / "confusion.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["true\\predicted", *result.confusion_classes])
                for name, row in zip(result.confusion_classes, result.confusion):
                    w.writerow([name, *[int(v) for v in row]])
        if result.trends:
            (out / "trends.json").write_text(json.dumps(result.trends, indent=2) + "\n")
        cfg = result.config
        manifest = {
            "version": __version__,
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "seeds": {"corpus": cfg.corpus.seed, "cv": cfg.cv.seed, "degradation": cfg.degradation.seed,
                      "sweep": cfg.sweep.seed, "qc_train": cfg.qc.train_seed, "ihmm": cfg.qc.ihmm_seed,
                      "random_scenario": cfg.seed},
            "scenarios": [s.name for s in result.scenarios],
            "notes": result.notes,
            "rate": PIPELINE_RATE,
        }
        (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc.strerror}") from None
    return out
