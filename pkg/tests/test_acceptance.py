"""End-to-end acceptance checks, one test per criterion.

Each test prints a single "criterion N: PASS|FAIL ..." line before asserting, so a
failing criterion still reports its numbers; the lines are repeated in the terminal summary.
Run alone with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from conftest import ACCEPTANCE_LINES
from oracles import bayes_posterior, brute_force_auc, gmm_loglik_mp
from voiceqc.corpora import frame_qc_set, qc_recording_set, ubm_pool_set, vowels
from voiceqc.degrade import RoomSpec, clip_signal, generate_rir, make_noise, measure_rt60, measure_snr, mix_at_snr
from voiceqc.detector import cross_validate, mann_whitney_auc, roc_auc
from voiceqc.enhance import enhance, segmental_snr
from voiceqc.experiment import ExperimentConfig, run_experiment
from voiceqc.features import extract
from voiceqc.gmm import EmConfig, GmmModel, em_fit_trace, gmm_loglik, map_adapt
from voiceqc.ihmm import IhmmConfig, ihmm_fit
from voiceqc.qc_frame import (build_histograms, confusion, nb_predict, nb_train, obs_labels_from_mask,
                              observations)
from voiceqc.qc_recording import (QC_CLASSES, DetectorBank, calibrate_thresholds, decide, detector_scores,
                                  dev_score_sets, train_ubm)
from voiceqc.synth import VoiceParams, synth_vowel

pytestmark = pytest.mark.acceptance


def report(capsys, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    with capsys.disabled():
        print("\n" + line)
    return ok


# 1 --------------------------------------------------------------------------

def test_criterion_1_oracles(capsys):
    rng = np.random.default_rng(101)
    auc_bad = 0
    for _ in range(300):
        n = int(rng.integers(2, 201))
        scores = rng.integers(-8, 8, n).astype(float) if rng.random() < 0.5 else rng.standard_normal(n)
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        ref = brute_force_auc(scores, labels)
        auc_bad += mann_whitney_auc(scores, labels) != ref or roc_auc(scores, labels).auc != ref

    nb_err = 0.0
    for _ in range(200):
        K = int(rng.integers(2, 12))
        hists = rng.integers(0, 6, (40, K))
        model = nb_train(hists, np.r_[[1, 2, 3], rng.integers(1, 4, 37)], smoothing=1.0)
        h = rng.integers(0, 6, K)
        post = nb_predict(model, h)[1]
        ref = np.asarray(bayes_posterior(model.probs, model.priors, h))
        nb_err = max(nb_err, float(np.max(np.abs(post - ref))))

    ll_err = 0.0
    for _ in range(200):
        C, D = int(rng.integers(1, 9)), int(rng.choice([2, 13, 39]))
        m = GmmModel(rng.dirichlet(np.ones(C)), rng.normal(0, 3, (C, D)), rng.uniform(0.2, 4, (C, D)))
        x = rng.normal(0, 4, D)
        ref = gmm_loglik_mp(m.weights, m.means, m.variances, x)
        ll_err = max(ll_err, abs(gmm_loglik(m, x) - ref) / abs(ref))

    ok = auc_bad == 0 and nb_err <= 1e-12 and ll_err <= 1e-9
    report(capsys, 1, ok, f"AUC mismatches {auc_bad}/300, NB max abs err {nb_err:.1e} (<=1e-12), "
                          f"GMM max rel err {ll_err:.1e} (<=1e-9)")
    assert ok


# 2 --------------------------------------------------------------------------

def test_criterion_2_em_monotone(capsys):
    runs, worst = 0, 0.0
    for C in (1, 2, 8):
        for D in (2, 39):
            for seed in range(9):
                rng = np.random.default_rng([C, D, seed])
                X = rng.standard_normal((500, D)) * rng.uniform(0.5, 2, D) + rng.integers(0, 4, 500)[:, None]
                _, hist = em_fit_trace(X, C, EmConfig(max_iters=50, rel_tol=1e-12, seed=seed))
                drops = np.diff(hist)
                worst = min(worst, float(drops.min()) if drops.size else 0.0)
                runs += 1
    ok = runs >= 50 and worst >= -1e-9
    report(capsys, 2, ok, f"{runs} EM runs, largest log-likelihood decrease {max(0.0, -worst):.1e} (<=1e-9)")
    assert ok


# 3 --------------------------------------------------------------------------

def test_criterion_3_degradation_oracles(capsys):
    vowel = synth_vowel(VoiceParams(duration_s=2.0), seed=5)
    snr_err = 0.0
    for snr in range(-20, 41, 5):
        for kind in ("white", "speech_shaped", "pink"):
            noise = make_noise(kind, len(vowel), 8000, snr + 100)
            mixed = mix_at_snr(vowel, noise, float(snr), seed=snr + 20)
            snr_err = max(snr_err, abs(measure_snr(vowel, mixed.samples - vowel.samples) - snr))
    rt_rel = {}
    for rt in (0.3, 0.6, 1.2, 1.8):
        rt_rel[rt] = measure_rt60(generate_rir(RoomSpec(rt60=rt))) / rt - 1
    idem = True
    for level in (0.05, 0.1, 0.3, 0.8, 1.0):
        once = clip_signal(vowel, level)
        thr = level * np.max(np.abs(vowel.samples))
        idem &= np.array_equal(np.clip(once.samples, -thr, thr), once.samples)
    ok = snr_err <= 0.01 and all(abs(v) <= 0.2 for v in rt_rel.values()) and idem
    rts = ", ".join(f"{k:g}s {100 * v:+.1f}%" for k, v in rt_rel.items())
    report(capsys, 3, ok, f"max SNR error {snr_err:.2e} dB (<=0.01), RT60 deviation [{rts}] (<=20%), "
                          f"clipping idempotent {idem}")
    assert ok


# 4 --------------------------------------------------------------------------

def test_criterion_4_clean_detection(capsys):
    t0 = time.time()
    recs = vowels(100, 1)
    feats = [extract(r.audio, "plp39") for r in recs]
    y = np.array([1 if r.label == "pd" else 0 for r in recs])
    cv = cross_validate(feats, y, k=5, reps=3, seed=0, n_components=32, em=EmConfig(max_iters=30, seed=0),
                        normalize=True)
    elapsed = time.time() - t0
    ok = cv.mean() >= 0.90 and elapsed <= 300
    report(capsys, 4, ok, f"mean AUC {cv.mean():.3f} (>=0.90) over 5x3 folds, 100+100 recordings, "
                          f"{elapsed:.0f} s (<=300)")
    assert ok


# 5 --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep():
    return run_experiment(ExperimentConfig.from_dict({"kind": "sweep"}))


def test_criterion_5_degradation_trends(sweep, capsys):
    auc = {s.name: s.auc for s in sweep.scenarios}
    checks = {
        "white": auc["white@-5dB"] <= auc["white@10dB"] - 0.05,
        "speech_shaped": auc["speech_shaped@-5dB"] <= auc["speech_shaped@10dB"] - 0.05,
        "reverb": auc["reverb@1.8s"] <= auc["reverb@0.3s"] - 0.03,
        "clipping": auc["clip@0.1"] <= auc["clip@0.8"] - 0.03,
    }
    rho = {fam: t["spearman_vs_severity"] for fam, t in sweep.trends.items()}
    # the expected direction is AUC falling as severity rises
    monotone = {fam: -r >= 0.8 for fam, r in rho.items()}
    ok = all(checks.values()) and all(monotone.values())
    detail = "; ".join(
        f"{fam}: {a:.3f}->{b:.3f} rho {rho[fam]:+.2f}"
        for fam, (a, b) in {"white": (auc["white@10dB"], auc["white@-5dB"]),
                            "speech_shaped": (auc["speech_shaped@10dB"], auc["speech_shaped@-5dB"]),
                            "reverb": (auc["reverb@0.3s"], auc["reverb@1.8s"]),
                            "clipping": (auc["clip@0.8"], auc["clip@0.1"])}.items())
    report(capsys, 5, ok, f"clean {auc['clean']:.3f}; {detail} (drops >=0.05/0.05/0.03/0.03, rho <= -0.8)")
    assert ok


# 6 --------------------------------------------------------------------------

def test_criterion_6_recording_qc(capsys):
    kind = "mfcc39"
    pool = [extract(r.audio, kind) for r in ubm_pool_set(40, 11, 5.0)]
    adapt = qc_recording_set(100, 12, 3.0, n_outliers=0, prefix="a")
    adapt_feats = {c: np.vstack([extract(r.audio, kind).data for r in adapt if r.degradation == c])
                   for c in QC_CLASSES}
    dev = qc_recording_set(20, 13, 5.0, prefix="d")
    test = qc_recording_set(60, 14, 5.0, prefix="t")
    dev_feats = [extract(r.audio, kind) for r in dev]
    test_feats = [extract(r.audio, kind) for r in test]
    labels = [r.degradation for r in test]
    inlier = [l != "outlier" for l in labels]

    aucs, rejected = {}, None
    for C in (16, 32, 64):
        ubm = train_ubm(pool, C, EmConfig(max_iters=50, seed=0), max_frames=80000)
        bank = DetectorBank(ubm, {c: map_adapt(ubm, adapt_feats[c], 16.0) for c in QC_CLASSES})
        scores = [detector_scores(bank, f) for f in test_feats]
        aucs[C] = {c: mann_whitney_auc([s[c] for s, k in zip(scores, inlier) if k],
                                       [int(l == c) for l, k in zip(labels, inlier) if k]) for c in QC_CLASSES}
        if C == 64:
            dev_scores = [detector_scores(bank, f) for f in dev_feats]
            bank = calibrate_thresholds(bank, dev_score_sets(dev_scores, [r.degradation for r in dev]))
            out = [decide(s, bank.thresholds) for s, l in zip(scores, labels) if l == "outlier"]
            rejected = np.mean([d.verdict == "outlier" for d in out])

    per_det = all(v >= 0.90 for v in aucs[64].values())
    trend = {c: aucs[16][c] <= aucs[32][c] <= aucs[64][c] for c in QC_CLASSES}
    ok = per_det and all(trend.values()) and rejected >= 0.95
    table = "; ".join(f"{c} " + "/".join(f"{aucs[C][c]:.3f}" for C in (16, 32, 64)) for c in QC_CLASSES)
    report(capsys, 6, ok, f"AUC at C=16/32/64: {table} (C=64 >=0.90, non-decreasing); "
                          f"outliers rejected {100 * rejected:.1f}% (>=95%)")
    assert ok


# 7 --------------------------------------------------------------------------

def _aligned_accuracy(true, pred):
    t = np.unique(true, return_inverse=True)[1]
    p = np.unique(pred, return_inverse=True)[1]
    m = np.zeros((t.max() + 1, p.max() + 1))
    np.add.at(m, (t, p), 1)
    r, c = linear_sum_assignment(-m)
    return m[r, c].sum() / len(true)


def test_criterion_7_frame_qc(capsys):
    train = frame_qc_set(50, 7, 10.0, prefix="tr")
    test = frame_qc_set(25, 8, 10.0, prefix="te")
    train_obs = [observations(r.audio) for r in train]
    test_obs = [observations(r.audio) for r in test]
    truth = lambda recs, obs: [obs_labels_from_mask(r.sample_labels, len(o), 8000)  # noqa: E731
                               for r, o in zip(recs, obs)]
    fit = ihmm_fit([o.data for o in train_obs + test_obs], IhmmConfig(seed=0))
    nb = nb_train([build_histograms(fit.assign(o), fit.n_states) for o in train_obs], truth(train, train_obs))
    pred = [nb_predict(nb, build_histograms(fit.assign(o), fit.n_states))[0] for o in test_obs]
    m = confusion(truth(test, test_obs), pred)
    diag = m.diagonal() / m.sum(axis=1)

    rng = np.random.default_rng(3)
    trans = np.full((3, 3), 0.05) + np.eye(3) * 0.85
    means = np.array([[-3.0, 0.0], [0.0, 3.0], [3.0, 0.0]])
    z = np.empty(800, dtype=int)
    z[0] = 0
    for t in range(1, 800):
        z[t] = rng.choice(3, p=trans[z[t - 1]])
    X = means[z] + 0.6 * rng.standard_normal((800, 2))
    synthetic = ihmm_fit([X], IhmmConfig(iters=100, seed=1))
    acc = _aligned_accuracy(z, synthetic.states[0])

    ok = bool(np.all(diag >= 0.85)) and acc >= 0.90
    report(capsys, 7, ok, f"confusion diagonal adherence/degraded/violation "
                          f"{'/'.join(f'{d:.3f}' for d in diag)} (>=0.85, {fit.n_states} iHMM states); "
                          f"3-state HMM aligned accuracy {acc:.3f} (>=0.90)")
    assert ok


# 8 --------------------------------------------------------------------------

def test_criterion_8_enhancement(capsys):
    gains, passes = [], []
    for seed in range(3):
        v = synth_vowel(VoiceParams(f0=110 + 40 * seed, jitter_pct=[0.3, 1.5, 0.8][seed],
                                    shimmer_pct=[3, 10, 6][seed], hnr_db=[25, 12, 18][seed],
                                    duration_s=3.0), seed=seed)
        noisy = mix_at_snr(v, make_noise("white", len(v), 8000, seed + 7), 0.0, seed=1)
        gains.append(segmental_snr(v.samples, enhance(noisy).samples, 8000)
                     - segmental_snr(v.samples, noisy.samples, 8000))
        out = enhance(v).samples
        passes.append(10 * np.log10(np.sum((out - v.samples) ** 2) / np.sum(v.samples ** 2)))
    ok = min(gains) >= 3.0 and max(passes) <= -15.0
    report(capsys, 8, ok, f"segSNR gain at 0 dB white {'/'.join(f'{g:.2f}' for g in gains)} dB (>=3); "
                          f"clean pass-through error {'/'.join(f'{p:.1f}' for p in passes)} dB (<=-15)")
    assert ok


# 9 --------------------------------------------------------------------------

def test_criterion_9_integration(capsys):
    cfg = ExperimentConfig.from_dict({"scenarios": ["none", "predicted", "oracle"]})
    res = run_experiment(cfg)
    none, pred, oracle = (res.auc(k) for k in ("none", "predicted", "oracle"))
    reps = res.config.cv.reps
    ok = oracle >= pred >= none and pred - none >= 0.02 and reps >= 3
    report(capsys, 9, ok, f"AUC none {none:.3f}, predicted {pred:.3f}, oracle {oracle:.3f} "
                          f"(oracle >= predicted >= none, gap >= 0.02; {reps} seeded CV reps)")
    assert ok


# 10 -------------------------------------------------------------------------

def test_criterion_10_reproducible(tmp_path, capsys):
    settings = {
        "scenarios": ["none", "full", "random", "predicted", "oracle"],
        "corpus": {"n_per_class": 10, "duration_s": 4.0},
        "cv": {"folds": 2, "reps": 2, "n_components": 4, "em_iters": 10},
        "qc": {"train_per_class": 6, "train_duration_s": 4.0, "iters": 20}}
    # two independent runs from the same settings, as a user rerunning the command would
    run_experiment(ExperimentConfig.from_dict(json.loads(json.dumps(settings))), tmp_path / "a")
    run_experiment(ExperimentConfig.from_dict(json.loads(json.dumps(settings))), tmp_path / "b")
    a = (tmp_path / "a" / "metrics.json").read_bytes()
    b = (tmp_path / "b" / "metrics.json").read_bytes()
    ok = a == b and len(json.loads(a)) == 5
    report(capsys, 10, ok, f"metrics.json identical on rerun: {a == b} ({len(a)} bytes)")
    assert ok

