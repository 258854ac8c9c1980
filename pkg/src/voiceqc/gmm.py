"""Diagonal-covariance Gaussian mixtures: EM fitting, log-likelihood, MAP mean adaptation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import ConfigError, DataError
from .features import FeatureMatrix

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # (C,)
    means: np.ndarray  # (C, D)
    variances: np.ndarray  # (C, D)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if w.ndim != 1 or w.shape[0] < 1:
            raise DataError("weights must be a non-empty vector")
        if mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise DataError("weights, means and variances disagree in shape")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError("weights must lie on the simplex")
        if np.any(var <= 0) or not np.all(np.isfinite(var)) or not np.all(np.isfinite(mu)):
            raise DataError("variances must be positive and parameters finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, X: np.ndarray) -> np.ndarray:
        """log b_c + log N(x_t; mu_c, diag var_c), shape (T, C)."""
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise DataError(f"feature dim {X.shape[1]} does not match model dim {self.dim}")
        # shift both sides to limit cancellation in the expanded quadratic form
        ref = self.means.mean(axis=0)
        X = X - ref
        mu = self.means - ref
        prec = 1.0 / self.variances
        const = (np.log(self.weights, where=self.weights > 0,
                        out=np.full(self.n_components, -np.inf))
                 - 0.5 * (self.dim * LOG_2PI + np.sum(np.log(self.variances), axis=1)
                          + np.sum(mu ** 2 * prec, axis=1)))
        quad = (X ** 2) @ prec.T - 2.0 * X @ (mu * prec).T
        return const[None, :] - 0.5 * quad

    def frame_loglik(self, X: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_logpdf(X), axis=1)

    def to_json(self) -> dict:
        return {"schema": "gmm-v1", "dim": self.dim, "C": self.n_components,
                "weights": self.weights.tolist(), "means": self.means.tolist(),
                "vars": self.variances.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "GmmModel":
        if obj.get("schema") != "gmm-v1":
            raise DataError(f"unsupported model schema {obj.get('schema')!r}")
        model = cls(np.array(obj["weights"]), np.array(obj["means"]), np.array(obj["vars"]))
        if model.dim != obj["dim"] or model.n_components != obj["C"]:
            raise DataError("model header disagrees with parameter shapes")
        return model


def save_gmm(model: GmmModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_gmm(path: str | os.PathLike) -> GmmModel:
    with open(path, encoding="utf-8") as fh:
        return GmmModel.from_json(json.load(fh))


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    rel_tol: float = 1e-5
    var_floor_frac: float = 1e-3
    seed: int = 0
    kmeans_iters: int = 10

    def validate(self) -> None:
        if self.max_iters < 1 or self.rel_tol <= 0 or self.var_floor_frac <= 0:
            raise ConfigError("EM settings must be positive")


def _as_array(X) -> np.ndarray:
    arr = X.data if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    arr = np.atleast_2d(arr)
    if arr.shape[0] == 0:
        raise DataError("empty feature matrix")
    if not np.all(np.isfinite(arr)):
        raise DataError("non-finite features")
    return arr


def _sq_dist(X: np.ndarray, centres: np.ndarray) -> np.ndarray:
    d = (X ** 2).sum(1)[:, None] - 2.0 * X @ centres.T + (centres ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    """k-means++ seeding followed by a few Lloyd iterations; ties go to the lowest index."""
    t = X.shape[0]
    centres = np.empty((k, X.shape[1]))
    centres[0] = X[rng.integers(t)]
    d2 = _sq_dist(X, centres[:1])[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centres[i] = X[rng.integers(t)]
        else:
            centres[i] = X[rng.choice(t, p=d2 / total)]
        d2 = np.minimum(d2, _sq_dist(X, centres[i:i + 1])[:, 0])
    for _ in range(iters):
        assign = np.argmin(_sq_dist(X, centres), axis=1)
        for c in range(k):
            members = X[assign == c]
            if len(members):
                centres[c] = members.mean(0)
    return centres


def em_fit_trace(X, n_components: int, cfg: EmConfig | None = None):
    """EM fit returning (model, per-iteration mean log-likelihood history).

    history[i] is the mean frame log-likelihood of the parameters entering
    iteration i; the final entry belongs to the returned model.
    """
    cfg = cfg or EmConfig()
    cfg.validate()
    X = _as_array(X)
    t, d = X.shape
    if n_components < 1:
        raise ConfigError("need at least one component")
    if t < n_components:
        raise DataError(f"{t} frames cannot support {n_components} components")
    rng = np.random.default_rng(cfg.seed)
    floor = cfg.var_floor_frac * np.maximum(X.var(axis=0), 1e-12)
    # fit on centred data; the shift is added back to the means at the end
    shift = X.mean(axis=0)
    X = X - shift

    centres = kmeans_pp(X, n_components, rng, cfg.kmeans_iters)
    assign = np.argmin(_sq_dist(X, centres), axis=1)
    resp = np.zeros((t, n_components))
    resp[np.arange(t), assign] = 1.0
    weights, means, variances = _m_step(X, resp, floor, None)

    history = []
    for _ in range(cfg.max_iters):
        model = GmmModel(weights, means, variances)
        logp = model.component_logpdf(X)
        ll_t = logsumexp(logp, axis=1)
        history.append(float(ll_t.mean()))
        if len(history) > 1 and history[-1] - history[-2] < cfg.rel_tol * abs(history[-2]):
            break
        resp = np.exp(logp - ll_t[:, None])
        weights, means, variances = _m_step(X, resp, floor, model)
    else:
        model = GmmModel(weights, means, variances)
        history.append(float(model.frame_loglik(X).mean()))
    return GmmModel(model.weights, model.means + shift, model.variances), history


def _m_step(X, resp, floor, previous: GmmModel | None):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    safe = np.maximum(nk, 1e-300)[:, None]
    means = (resp.T @ X) / safe
    variances = (resp.T @ (X ** 2)) / safe - means ** 2
    variances = np.maximum(variances, floor[None, :])
    dead = nk < 1e-10
    if np.any(dead):
        if previous is not None:
            means[dead] = previous.means[dead]
            variances[dead] = previous.variances[dead]
        else:
            means[dead] = X.mean(0)
            variances[dead] = np.maximum(X.var(0), floor)
    return weights, means, variances


def em_fit(X, n_components: int, cfg: EmConfig | None = None) -> GmmModel:
    """Maximum-likelihood diagonal GMM by EM with k-means++ initialisation."""
    return em_fit_trace(X, n_components, cfg)[0]


def gmm_loglik(model: GmmModel, x) -> float:
    """log sum_c b_c N(x; mu_c, Sigma_c) for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise DataError(f"expected a {model.dim}-vector, got shape {x.shape}")
    return float(model.frame_loglik(x[None, :])[0])


def avg_loglik(model: GmmModel, X) -> float:
    X = _as_array(X)
    return float(model.frame_loglik(X).mean())


def map_adapt(ubm: GmmModel, X, relevance: float = 16.0) -> GmmModel:
    """Mean-only MAP adaptation of a UBM toward the frames X."""
    X = _as_array(X)
    if X.shape[1] != ubm.dim:
        raise DataError(f"feature dim {X.shape[1]} does not match UBM dim {ubm.dim}")
    if relevance < 0:
        raise ConfigError("relevance factor must be non-negative")
    logp = ubm.component_logpdf(X)
    resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    n = resp.sum(axis=0)
    ex = (resp.T @ X) / np.maximum(n, 1e-300)[:, None]
    if np.isinf(relevance):
        alpha = np.zeros_like(n)
    else:
        alpha = n / (n + relevance) if relevance > 0 else (n > 0).astype(float)
    means = alpha[:, None] * ex + (1.0 - alpha[:, None]) * ubm.means
    return GmmModel(ubm.weights.copy(), means, ubm.variances.copy())
