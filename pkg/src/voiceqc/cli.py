"""Command-line front end: `voiceqc <command> --config cfg.json --seed N --out DIR`.

Exit status: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import PIPELINE_RATE, ConfigError, DataError
from .audio import CorpusManifest, ManifestEntry, load_manifest, read_wav, save_manifest, write_wav
from .config import from_dict, load_json
from .corpora import add_noise, close_rir, frame_qc_set, room_rir
from .degrade import apply_rir, clip_signal
from .detector import cross_validate, load_pair, save_pair, score_llr, train_pd
from .enhance import EnhanceConfig, enhance, selective_enhance
from .experiment import CvSettings, ExperimentConfig, run_experiment
from .features import KINDS, extract, write_features_csv
from .gmm import EmConfig, load_gmm, save_gmm
from .ihmm import IhmmConfig, ihmm_fit
from .qc_frame import (build_histograms, label_observations, nb_train, obs_labels_from_mask,
                       observations, read_frame_labels, write_frame_labels)
from .qc_recording import (QC_CLASSES, build_bank, calibrate_thresholds, decide, detector_scores,
                           dev_score_sets, load_bank, save_bank, train_ubm)
from .synth import SynthSpec, synth_corpus

log = logging.getLogger("voiceqc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


@dataclass
class DegradeSettings:
    degradation: str = "noise"  # noise | reverb | distortion | combo
    noise_kind: str = "white"
    snr_db: float = 10.0
    rt60_s: float = 0.6
    mic_distance_m: float | None = None  # None: default room geometry (2 m)
    clip_level: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.degradation not in ("noise", "reverb", "distortion", "combo"):
            raise ConfigError(f"unknown degradation {self.degradation!r}")


@dataclass
class FeatureSettings:
    kind: str = "plp39"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")


@dataclass
class GmmSettings:
    n_components: int = 32
    em_iters: int = 100
    kind: str = "plp39"
    max_frames: int | None = 80000
    seed: int = 0

    def validate(self) -> None:
        if self.n_components < 1 or self.em_iters < 1:
            raise ConfigError("n_components and em_iters must be positive")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")


@dataclass
class RecQcSettings:
    relevance: float = 16.0
    kind: str = "mfcc39"

    def validate(self) -> None:
        if self.relevance <= 0:
            raise ConfigError("relevance must be positive")


@dataclass
class FrameQcSettings:
    train_per_class: int = 50
    train_duration_s: float = 10.0
    window: int = 5
    smoothing: float = 1.0
    ihmm: IhmmConfig = field(default_factory=IhmmConfig)
    seed: int = 7

    def validate(self) -> None:
        if self.train_per_class < 2:
            raise ConfigError("train_per_class must be at least 2")
        self.ihmm.validate()


@dataclass
class EnhanceSettings:
    mode: str = "full"
    enhancer: EnhanceConfig = field(default_factory=EnhanceConfig)

    def validate(self) -> None:
        if self.mode not in ("full", "selective"):
            raise ConfigError(f"mode must be full or selective, got {self.mode!r}")
        self.enhancer.validate()


def _settings(cls, args, seed_field: str | None = "seed", **overrides):
    cfg = from_dict(cls, load_json(args.config), "config")
    if args.seed is not None and seed_field is not None:
        cfg = replace(cfg, **{seed_field: args.seed})
    for k, v in overrides.items():
        if v is not None:
            cfg = replace(cfg, **{k: v})
    cfg.validate()
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _manifest(args) -> CorpusManifest:
    if not args.manifest:
        raise ConfigError("--manifest is required")
    try:
        return load_manifest(args.manifest)
    except OSError as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc.strerror}") from None


def _split(manifest: CorpusManifest, split: str | None) -> list:
    entries = [e for e in manifest if split is None or e.split == split]
    if not entries:
        raise DataError(f"no manifest entries{'' if split is None else f' in split {split!r}'}")
    return entries


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = _settings(SynthSpec, args, n_per_class=args.n_per_class)
    manifest = synth_corpus(spec, _out(args), split=args.split)
    log.info("wrote %d recordings", len(manifest))


def cmd_degrade(args) -> None:
    cfg = _settings(DegradeSettings, args)
    manifest = _manifest(args)
    out = _out(args)
    (out / "wav").mkdir(exist_ok=True)
    entries = []
    for i, e in enumerate(_split(manifest, args.split)):
        audio = manifest.load_audio(e, PIPELINE_RATE)
        seed = cfg.seed * 100003 + i
        extra = {}
        if cfg.degradation in ("reverb", "combo"):
            rir = room_rir(cfg.rt60_s) if cfg.mic_distance_m is None else close_rir(cfg.rt60_s, cfg.mic_distance_m)
            audio = apply_rir(audio, rir)
            extra["rt60_s"] = cfg.rt60_s
        if cfg.degradation in ("noise", "combo"):
            audio = add_noise(audio, cfg.noise_kind, cfg.snr_db, seed)
            extra["snr_db"] = cfg.snr_db
        if cfg.degradation == "distortion":
            audio = clip_signal(audio, cfg.clip_level)
            extra["clip_level"] = cfg.clip_level
        rel = f"wav/{e.id}.wav"
        write_wav(audio, out / rel)
        entries.append(ManifestEntry(e.id, rel, e.label, cfg.degradation, e.split, **extra))
    save_manifest(entries, out / "manifest.jsonl")


def cmd_features(args) -> None:
    cfg = _settings(FeatureSettings, args, seed_field=None, kind=args.kind)
    manifest = _manifest(args)
    out = _out(args)
    for e in _split(manifest, args.split):
        write_features_csv(extract(manifest.load_audio(e, PIPELINE_RATE), cfg.kind), out / f"{e.id}.csv")


def _load_features(manifest, entries, kind):
    return [extract(manifest.load_audio(e, PIPELINE_RATE), kind) for e in entries]


def cmd_train_ubm(args) -> None:
    cfg = _settings(GmmSettings, args)
    manifest = _manifest(args)
    feats = _load_features(manifest, _split(manifest, args.split), cfg.kind)
    ubm = train_ubm(feats, cfg.n_components, EmConfig(max_iters=cfg.em_iters, seed=cfg.seed),
                    cfg.max_frames, cfg.seed)
    save_gmm(ubm, _out(args) / "ubm.json")


def cmd_qc_rec(args) -> None:
    cfg = _settings(RecQcSettings, args, seed_field=None)
    manifest = _manifest(args)
    out = _out(args)
    if args.bank:
        bank = load_bank(args.bank)
        targets = list(manifest)
    else:
        if not args.ubm:
            raise ConfigError("qc rec needs --bank, or --ubm to train a detector bank")
        ubm = load_gmm(args.ubm)
        train = [e for e in manifest if e.split == "train" and e.degradation in QC_CLASSES]
        class_feats = {c: [extract(manifest.load_audio(e, PIPELINE_RATE), cfg.kind).data
                           for e in train if e.degradation == c] for c in QC_CLASSES}
        bank = build_bank(ubm, class_feats, cfg.relevance, cfg.kind)
        dev = [e for e in manifest if e.split == "dev"]
        if dev:
            scores = [detector_scores(bank, extract(manifest.load_audio(e, PIPELINE_RATE), bank.kind))
                      for e in dev]
            bank = calibrate_thresholds(bank, dev_score_sets(scores, [e.degradation for e in dev]))
        save_bank(bank, out / "bank.json")
        targets = [e for e in manifest if e.split == "test"] or list(manifest)
    with open(out / "qc_recording.jsonl", "w", encoding="utf-8") as fh:
        for e in targets:
            scores = detector_scores(bank, extract(manifest.load_audio(e, PIPELINE_RATE), bank.kind))
            fh.write(json.dumps(decide(scores, bank.thresholds).to_json(e.id)) + "\n")


def cmd_qc_frame(args) -> None:
    cfg = _settings(FrameQcSettings, args)
    manifest = _manifest(args)
    out = _out(args)
    train = frame_qc_set(cfg.train_per_class, cfg.seed, cfg.train_duration_s)
    train_obs = [observations(r.audio) for r in train]
    truth = [obs_labels_from_mask(r.sample_labels, len(o), r.audio.rate) for r, o in zip(train, train_obs)]
    targets = _split(manifest, args.split)
    target_obs = [observations(manifest.load_audio(e, PIPELINE_RATE)) for e in targets]
    ihmm_cfg = cfg.ihmm if args.seed is None else replace(cfg.ihmm, seed=args.seed)
    ihmm = ihmm_fit([o.data for o in train_obs + target_obs], ihmm_cfg)
    nb = nb_train([build_histograms(ihmm.assign(o), ihmm.n_states, cfg.window) for o in train_obs],
                  truth, cfg.smoothing)
    _dump_json(nb.to_json(), out / "nb.json")
    write_frame_labels([(e.id, label_observations(o, ihmm, nb, cfg.window))
                        for e, o in zip(targets, target_obs)], out / "qc_frame.jsonl")


def cmd_train_pd(args) -> None:
    cfg = _settings(GmmSettings, args)
    manifest = _manifest(args)
    entries = _split(manifest, args.split)
    feats = _load_features(manifest, entries, cfg.kind)
    em = EmConfig(max_iters=cfg.em_iters, seed=cfg.seed)
    pair = train_pd([f for f, e in zip(feats, entries) if e.label == "pd"],
                    [f for f, e in zip(feats, entries) if e.label == "hc"], cfg.n_components, em)
    save_pair(pair, _out(args) / "pd_models.json")


def cmd_score(args) -> None:
    if not args.models:
        raise ConfigError("--models is required")
    load_json(args.config)  # validated for uniformity; scoring has no tunables
    pair = load_pair(args.models)
    manifest = _manifest(args)
    with open(_out(args) / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "class", "llr"])
        for e in _split(manifest, args.split):
            llr = score_llr(pair, extract(manifest.load_audio(e, PIPELINE_RATE), pair.kind), normalize=True)
            w.writerow([e.id, e.label, repr(llr)])


def cmd_enhance(args) -> None:
    cfg = _settings(EnhanceSettings, args, seed_field=None, mode=args.mode)
    if cfg.mode == "selective" and not args.labels:
        raise ConfigError("selective mode needs --labels <qc_frame.jsonl>")
    labels = read_frame_labels(args.labels) if args.labels else {}
    out = _out(args)
    if args.input:
        items = [(Path(args.input).stem, read_wav(args.input))]
    else:
        manifest = _manifest(args)
        items = [(e.id, manifest.load_audio(e, PIPELINE_RATE)) for e in _split(manifest, args.split)]
    for rec_id, audio in items:
        if cfg.mode == "full":
            result = enhance(audio, cfg.enhancer)
            keep = np.ones(-(-len(audio) // int(round(0.1 * audio.rate))), dtype=bool)
        else:
            if rec_id not in labels:
                raise DataError(f"no frame labels for {rec_id!r}")
            result, keep = selective_enhance(audio, labels[rec_id], cfg.enhancer)
        write_wav(result, out / f"{rec_id}.wav")
        _dump_json({"id": rec_id, "obs_hop_s": 0.1, "keep": [bool(k) for k in keep]}, out / f"{rec_id}.keep.json")


def cmd_experiment(args) -> None:
    data = load_json(args.config)
    cfg = ExperimentConfig.from_dict(data)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, cv=replace(cfg.cv, seed=args.seed))
    cfg.validate()
    run_experiment(cfg, _out(args))


def cmd_eval(args) -> None:
    cfg = _settings(CvSettings, args)
    manifest = _manifest(args)
    entries = [e for e in _split(manifest, args.split) if e.label in ("pd", "hc")]
    feats = _load_features(manifest, entries, cfg.feature_kind)
    y = [1 if e.label == "pd" else 0 for e in entries]
    cv = cross_validate(feats, y, cfg.folds, cfg.reps, cfg.seed, cfg.n_components,
                        EmConfig(max_iters=cfg.em_iters, seed=cfg.seed), normalize=True)
    out = _out(args)
    cv.pooled_roc().write_csv(out / "roc.csv")
    _dump_json(cv.summary(), out / "metrics.json")


# -- parser -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON settings file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voiceqc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, manifest=True):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if manifest:
            p.add_argument("--manifest", help="corpus manifest (JSON lines)")
            p.add_argument("--split", help="restrict to one manifest split")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "synthesize a PD/HC vowel corpus", manifest=False)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--split", default="train")
    add("degrade", cmd_degrade, "apply noise, reverberation or clipping to a corpus")
    add("features", cmd_features, "extract feature CSVs").add_argument("--kind", choices=KINDS)
    add("train-ubm", cmd_train_ubm, "train the QC background model")
    p = add("train-pd", cmd_train_pd, "train the PD/HC model pair")
    p = add("score", cmd_score, "log-likelihood-ratio scores")
    p.add_argument("--models", help="pd_models.json from train-pd")
    p = add("enhance", cmd_enhance, "MMSE enhancement, full or label-guided")
    p.add_argument("--mode", choices=("full", "selective"))
    p.add_argument("--labels", help="qc_frame.jsonl with per-observation labels")
    p.add_argument("--input", help="single WAV instead of a manifest")
    add("experiment", cmd_experiment, "run a sweep or integration experiment", manifest=False)
    add("eval", cmd_eval, "cross-validated PD detection AUC")

    qc = sub.add_parser("qc", help="quality control")
    qsub = qc.add_subparsers(dest="level", required=True)
    p = qsub.add_parser("rec", help="recording-level degradation detectors")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--ubm", help="ubm.json; trains a bank from the manifest's train/dev splits")
    p.add_argument("--bank", help="existing bank.json to apply")
    p.set_defaults(func=cmd_qc_rec)
    p = qsub.add_parser("frame", help="frame-level adherence/degraded/violation labels")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.set_defaults(func=cmd_qc_frame)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
