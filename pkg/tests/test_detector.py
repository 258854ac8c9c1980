import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_auc
from voiceqc import ConfigError, DataError
from voiceqc.detector import (PdModelPair, cross_validate, load_pair, mann_whitney_auc,
                              percentile_ci, roc_auc, save_pair, score_llr, stratified_folds,
                              train_pd)
from voiceqc.features import FeatureMatrix
from voiceqc.gmm import EmConfig, GmmModel


def fm(data):
    data = np.asarray(data, float)
    return FeatureMatrix(data, "plp39", np.arange(len(data)) * 0.02)


scores_st = st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=200).filter(
    lambda v: 0 < sum(y for _, y in v) < len(v))


@settings(max_examples=100, deadline=None)
@given(scores_st)
def test_auc_matches_pair_count(pairs):
    s = [float(a) for a, _ in pairs]
    y = [b for _, b in pairs]
    ref = brute_force_auc(s, y)
    assert mann_whitney_auc(s, y) == ref
    assert roc_auc(s, y).auc == ref


@settings(max_examples=50, deadline=None)
@given(scores_st)
def test_roc_trapezoid_equals_auc(pairs):
    s = [float(a) for a, _ in pairs]
    y = [b for _, b in pairs]
    roc = roc_auc(s, y)
    assert np.trapezoid(roc.tpr, roc.fpr) == pytest.approx(roc.auc, abs=1e-12)
    assert roc.fpr[0] == 0 and roc.tpr[-1] == 1 and roc.fpr[-1] == 1
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)


def test_auc_examples():
    assert mann_whitney_auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert mann_whitney_auc([1, 2, 3, 4], [1, 1, 0, 0]) == 0.0
    assert mann_whitney_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(DataError):
        mann_whitney_auc([1, 2], [1, 1])
    with pytest.raises(DataError):
        mann_whitney_auc([1, 2], [0, 2])


def test_roc_csv(tmp_path):
    roc = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    roc.write_csv(tmp_path / "roc.csv")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["threshold", "fpr", "tpr"]
    assert len(lines) == 1 + len(roc.fpr)


def test_stratified_folds_balanced(rng):
    y = np.r_[np.zeros(23), np.ones(17)]
    folds = stratified_folds(y, 5, rng)
    for f in range(5):
        for c in (0, 1):
            n = np.sum((folds == f) & (y == c))
            assert abs(n - np.sum(y == c) / 5) <= 1
    with pytest.raises(DataError):
        stratified_folds(np.r_[np.zeros(10), np.ones(3)], 5, rng)


def test_percentile_ci():
    lo, hi = percentile_ci(np.arange(101))
    assert (lo, hi) == pytest.approx((2.5, 97.5))


def _two_class(rng, n=20, T=80, D=3, shift=1.0):
    feats = [fm(rng.standard_normal((T, D)) + shift * (i < n)) for i in range(2 * n)]
    labels = np.r_[np.ones(n, int), np.zeros(n, int)]
    return feats, labels


def test_llr_sign_and_swap(rng):
    feats, labels = _two_class(rng)
    pair = train_pd([f for f, y in zip(feats, labels) if y], [f for f, y in zip(feats, labels) if not y],
                    2, EmConfig(seed=0))
    s = score_llr(pair, feats[0])
    assert s > 0
    assert score_llr(pair.swapped(), feats[0]) == pytest.approx(-s)
    assert score_llr(pair, feats[0], normalize=True) == pytest.approx(s / len(feats[0]))
    same = PdModelPair(pair.pd, pair.pd)
    assert score_llr(same, feats[0]) == 0.0
    with pytest.raises(DataError):
        score_llr(pair, np.zeros((0, 3)))
    with pytest.raises(DataError):
        train_pd([], feats[:2])


def test_pair_roundtrip(tmp_path, rng):
    g = GmmModel(np.array([1.0]), rng.standard_normal((1, 2)), np.ones((1, 2)))
    save_pair(PdModelPair(g, g), tmp_path / "p.json")
    back = load_pair(tmp_path / "p.json")
    np.testing.assert_array_equal(back.pd.means, g.means)


def test_cross_validate_separable_and_deterministic(rng):
    feats, labels = _two_class(rng, shift=1.5)
    a = cross_validate(feats, labels, k=5, reps=2, seed=3, n_components=2,
                       em=EmConfig(max_iters=10, seed=3))
    b = cross_validate(feats, labels, k=5, reps=2, seed=3, n_components=2,
                       em=EmConfig(max_iters=10, seed=3))
    assert a.mean() > 0.95
    assert len(a.aucs["clean"]) == 10
    np.testing.assert_array_equal(a.scores["clean"], b.scores["clean"])
    assert a.summary()["auc_mean"] == a.mean()


def test_cross_validate_chance_on_identical_classes(rng):
    feats = [fm(rng.standard_normal((60, 2))) for _ in range(40)]
    labels = np.r_[np.ones(20, int), np.zeros(20, int)]
    res = cross_validate(feats, labels, k=5, reps=2, n_components=1)
    assert abs(res.mean() - 0.5) < 0.2


def test_cross_validate_conditions(rng):
    feats, labels = _two_class(rng, shift=1.5)
    flipped = [fm(-f.data) for f in feats]
    res = cross_validate(feats, labels, k=4, reps=1, n_components=1,
                         conditions={"flip": flipped, "const": lambda i, pair: 0.0})
    assert res.mean("flip") < res.mean("clean")
    assert res.mean("const") == 0.5
    with pytest.raises(ConfigError):
        cross_validate(feats, labels, k=1)
    with pytest.raises(DataError):
        cross_validate(feats, labels[:-1])
