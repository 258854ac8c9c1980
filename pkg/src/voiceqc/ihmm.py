"""Infinite HMM (HDP-HMM) fitted by direct-assignment Gibbs sampling with collapsed normal-gamma emissions."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln, logsumexp

from . import ConfigError, DataError
from .features import FeatureMatrix

LOG_PI = math.log(math.pi)
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class NormalGammaPrior:
    """Per-dimension normal-gamma hyperparameters; None means 'use data statistics'."""
    mean: tuple | None = None
    kappa: float = 1.0
    shape: float = 1.0
    rate: tuple | None = None


@dataclass(frozen=True)
class IhmmConfig:
    alpha: float = 10.0
    gamma: float = 10.0
    iters: int = 150
    seed: int = 0
    prior: NormalGammaPrior = field(default_factory=NormalGammaPrior)
    init_states: int = 10  # random start; single-site moves rarely split one big state
    max_states: int = 400

    def validate(self) -> None:
        if self.alpha <= 0 or self.gamma <= 0:
            raise ConfigError("alpha and gamma must be positive")
        if self.iters < 1 or self.init_states < 1 or self.max_states < 2:
            raise ConfigError("iters, init_states and max_states must be positive")
        if self.prior.kappa <= 0 or self.prior.shape <= 0:
            raise ConfigError("prior kappa and shape must be positive")


def sequence_key(X: np.ndarray) -> str:
    """Content hash identifying an observation sequence."""
    a = np.ascontiguousarray(X, dtype=np.float64)
    return hashlib.sha1(a.tobytes() + str(a.shape).encode()).hexdigest()


# ---------------------------------------------------------------- numba kernels

@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _refresh(k, cnt, sx, sxx, m0, k0, a0, b0, const, loc, inv, half):
    """Student-t posterior predictive parameters of state k."""
    n = cnt[k]
    kn = k0 + n
    an = a0 + 0.5 * n
    nu = 2.0 * an
    c = sx.shape[1] * (math.lgamma(an + 0.5) - math.lgamma(an))
    for d in range(sx.shape[1]):
        mn = (k0 * m0[d] + sx[k, d]) / kn
        bn = b0[d] + 0.5 * (sxx[k, d] + k0 * m0[d] * m0[d] - kn * mn * mn)
        if bn < 1e-12 * b0[d]:
            bn = 1e-12 * b0[d]
        s2 = bn * (kn + 1.0) / (an * kn)
        loc[k, d] = mn
        inv[k, d] = 1.0 / (nu * s2)
        c -= 0.5 * math.log(nu * math.pi * s2)
    const[k] = c
    half[k] = 0.5 * (nu + 1.0)


@njit(cache=True)
def _logpred(x, k, const, loc, inv, half):
    acc = 0.0
    for d in range(x.shape[0]):
        r = x[d] - loc[k, d]
        acc += math.log1p(r * r * inv[k, d])
    return const[k] - half[k] * acc


@njit(cache=True)
def _logpred_prior(x, m0, k0, a0, b0):
    nu = 2.0 * a0
    c = x.shape[0] * (math.lgamma(a0 + 0.5) - math.lgamma(a0))
    acc = 0.0
    for d in range(x.shape[0]):
        s2 = b0[d] * (k0 + 1.0) / (a0 * k0)
        c -= 0.5 * math.log(nu * math.pi * s2)
        r = x[d] - m0[d]
        acc += math.log1p(r * r / (nu * s2))
    return c - 0.5 * (nu + 1.0) * acc


@njit(cache=True)
def _move_state(src, dst, K, start_row, z, cnt, sx, sxx, N, R, beta, const, loc, inv, half):
    """Copy state src into slot dst (src is the last active slot)."""
    for i in range(z.shape[0]):
        if z[i] == src:
            z[i] = dst
    cnt[dst] = cnt[src]
    sx[dst] = sx[src]
    sxx[dst] = sxx[src]
    const[dst] = const[src]
    loc[dst] = loc[src]
    inv[dst] = inv[src]
    half[dst] = half[src]
    beta[dst] = beta[src]
    for j in range(K):
        N[dst, j] = N[src, j]
    R[dst] = R[src]
    for j in range(K):
        N[j, dst] = N[j, src]
    N[start_row, dst] = N[start_row, src]
    N[dst, dst] = N[src, src]


@njit(cache=True)
def _clear_state(k, K, start_row, cnt, sx, sxx, N, R):
    cnt[k] = 0
    sx[k] = 0.0
    sxx[k] = 0.0
    R[k] = 0
    for j in range(K):
        N[k, j] = 0
        N[j, k] = 0
    N[start_row, k] = 0


@njit(cache=True)
def _sweep(X, starts, ends, z, K, cnt, sx, sxx, N, R, beta, const, loc, inv, half,
           m0, k0, a0, b0, alpha, gamma, logw):
    cap = cnt.shape[0]
    start_row = N.shape[0] - 1
    D = X.shape[1]
    for s in range(starts.shape[0]):
        for i in range(starts[s], ends[s]):
            x = X[i]
            old = z[i]
            prev = z[i - 1] if i > starts[s] else start_row
            nxt = z[i + 1] if i < ends[s] - 1 else -1
            # remove observation i
            N[prev, old] -= 1
            if prev != start_row:
                R[prev] -= 1
            if nxt >= 0:
                N[old, nxt] -= 1
                R[old] -= 1
            cnt[old] -= 1
            for d in range(D):
                sx[old, d] -= x[d]
                sxx[old, d] -= x[d] * x[d]
            if cnt[old] == 0:
                z[i] = -1
                last = K - 1
                beta[K] += beta[old]
                if old != last:
                    _move_state(last, old, K, start_row, z, cnt, sx, sxx, N, R, beta, const, loc, inv, half)
                beta[last] = beta[K]
                beta[K] = 0.0
                _clear_state(last, K, start_row, cnt, sx, sxx, N, R)
                K -= 1
                prev = z[i - 1] if i > starts[s] else start_row
                nxt = z[i + 1] if i < ends[s] - 1 else -1
            else:
                _refresh(old, cnt, sx, sxx, m0, k0, a0, b0, const, loc, inv, half)
            # conditional over existing states and a new one
            best = -np.inf
            for k in range(K):
                a = alpha * beta[k] + N[prev, k]
                if nxt >= 0:
                    same = 1.0 if (prev == k and k == nxt) else 0.0
                    b = alpha * beta[nxt] + N[k, nxt] + same
                    c = alpha + R[k] + (1.0 if prev == k else 0.0)
                    lw = math.log(a) + math.log(b) - math.log(c)
                else:
                    lw = math.log(a)
                lw += _logpred(x, k, const, loc, inv, half)
                logw[k] = lw
                if lw > best:
                    best = lw
            lw = math.log(alpha * beta[K]) + _logpred_prior(x, m0, k0, a0, b0)
            if nxt >= 0:
                lw += math.log(beta[nxt])
            logw[K] = lw
            if lw > best:
                best = lw
            total = 0.0
            for k in range(K + 1):
                logw[k] = math.exp(logw[k] - best)
                total += logw[k]
            u = np.random.random() * total
            k = 0
            acc = logw[0]
            while acc < u and k < K:
                k += 1
                acc += logw[k]
            if k == K:
                if K + 1 >= cap:
                    raise RuntimeError("iHMM state capacity exceeded")
                b = np.random.beta(1.0, gamma)
                beta[K + 1] = beta[K] * (1.0 - b)
                beta[K] = beta[K] * b
                K += 1
            # add observation i as state k
            z[i] = k
            N[prev, k] += 1
            if prev != start_row:
                R[prev] += 1
            if nxt >= 0:
                N[k, nxt] += 1
                R[k] += 1
            cnt[k] += 1
            for d in range(D):
                sx[k, d] += x[d]
                sxx[k, d] += x[d] * x[d]
            _refresh(k, cnt, sx, sxx, m0, k0, a0, b0, const, loc, inv, half)
    return K


@njit(cache=True)
def _resample_beta(K, N, beta, alpha, gamma):
    """Auxiliary table counts per (row, column), then beta ~ Dir(column table counts, gamma)."""
    rows = N.shape[0]
    start_row = rows - 1
    total = 0.0
    draws = np.empty(K + 1)
    for k in range(K):
        m = 0
        ab = alpha * beta[k]
        for j in range(rows):
            if j >= K and j != start_row:
                continue
            n = N[j, k]
            for t in range(n):
                if np.random.random() < ab / (ab + t):
                    m += 1
        draws[k] = np.random.gamma(m, 1.0) if m > 0 else 0.0
        total += draws[k]
    draws[K] = np.random.gamma(gamma, 1.0)
    total += draws[K]
    for k in range(K + 1):
        beta[k] = draws[k] / total
    # states must keep positive mass for the log-weights
    for k in range(K + 1):
        if beta[k] < 1e-300:
            beta[k] = 1e-300


@njit(cache=True)
def _joint_ll(K, cnt, sx, sxx, N, R, beta, m0, k0, a0, b0, alpha):
    D = sx.shape[1]
    start_row = N.shape[0] - 1
    ll = 0.0
    for k in range(K):
        n = cnt[k]
        kn = k0 + n
        an = a0 + 0.5 * n
        for d in range(D):
            mn = (k0 * m0[d] + sx[k, d]) / kn
            bn = b0[d] + 0.5 * (sxx[k, d] + k0 * m0[d] * m0[d] - kn * mn * mn)
            if bn < 1e-12 * b0[d]:
                bn = 1e-12 * b0[d]
            ll += (math.lgamma(an) - math.lgamma(a0) + a0 * math.log(b0[d]) - an * math.log(bn)
                   + 0.5 * math.log(k0 / kn) - 0.5 * n * math.log(2.0 * math.pi))
    for j in range(N.shape[0]):
        if j >= K and j != start_row:
            continue
        rj = 0
        for k in range(K):
            rj += N[j, k]
        if rj == 0:
            continue
        ll += math.lgamma(alpha) - math.lgamma(alpha + rj)
        for k in range(K):
            if N[j, k] > 0:
                ab = alpha * beta[k]
                ll += math.lgamma(ab + N[j, k]) - math.lgamma(ab)
    return ll


# ---------------------------------------------------------------- public API

@dataclass
class IhmmResult:
    """Point estimate of the iHMM: best sweep, states relabelled 1..K by first appearance."""
    states: list  # per sequence, int arrays with values in 1..K
    n_states: int
    beta: np.ndarray  # (K+1,), last entry is the unrepresented mass
    counts: np.ndarray  # (K,) observations per state
    sums: np.ndarray  # (K, D)
    sumsq: np.ndarray  # (K, D)
    transitions: np.ndarray  # (K+1, K): rows 0..K-1 states, row K the sequence start
    prior_mean: np.ndarray
    prior_kappa: float
    prior_shape: float
    prior_rate: np.ndarray
    alpha: float
    joint_ll: list  # per sweep
    best_sweep: int
    keys: dict = field(default_factory=dict)  # sequence hash -> index into states

    def predictive_params(self):
        """Student-t (loc, scale^2, dof) per state and dimension."""
        n = self.counts[:, None].astype(np.float64)
        kn = self.prior_kappa + n
        an = self.prior_shape + 0.5 * n
        mn = (self.prior_kappa * self.prior_mean + self.sums) / kn
        bn = self.prior_rate + 0.5 * (self.sumsq + self.prior_kappa * self.prior_mean ** 2 - kn * mn ** 2)
        bn = np.maximum(bn, 1e-12 * self.prior_rate)
        return mn, bn * (kn + 1) / (an * kn), np.broadcast_to(2 * an, mn.shape)

    def emission_logpdf(self, X: np.ndarray) -> np.ndarray:
        """(T, K) log posterior-predictive density of each observation under each state."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        loc, s2, nu = self.predictive_params()
        r2 = (X[:, None, :] - loc[None]) ** 2 / (nu * s2)[None]
        c = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi * s2)
        return np.sum(c[None] - 0.5 * (nu + 1)[None] * np.log1p(r2), axis=2)

    def transition_logprob(self):
        """(log initial, log transition) over the active states, smoothed by the prior."""
        K = self.n_states
        ab = self.alpha * self.beta[:K]
        rows = self.transitions + ab[None, :]
        rows = rows / rows.sum(axis=1, keepdims=True)
        return np.log(rows[K]), np.log(rows[:K])

    def viterbi(self, X: np.ndarray) -> np.ndarray:
        """Most likely state path (1-based) over the active states."""
        em = self.emission_logpdf(X)
        log_init, log_trans = self.transition_logprob()
        T, K = em.shape
        delta = log_init + em[0]
        back = np.zeros((T, K), dtype=np.int64)
        for t in range(1, T):
            cand = delta[:, None] + log_trans
            back[t] = np.argmax(cand, axis=0)
            delta = cand[back[t], np.arange(K)] + em[t]
        path = np.empty(T, dtype=np.int64)
        path[-1] = int(np.argmax(delta))
        for t in range(T - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return path + 1

    def assign(self, X) -> np.ndarray:
        """Fitted states when X was part of the fit, Viterbi decoding otherwise."""
        data = X.data if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
        idx = self.keys.get(sequence_key(data))
        if idx is not None:
            return self.states[idx].copy()
        return self.viterbi(data)

    def posterior_state_marginal(self, X) -> np.ndarray:
        """Forward-backward state posteriors (T, K) under the point estimate."""
        em = self.emission_logpdf(X)
        log_init, log_trans = self.transition_logprob()
        T, K = em.shape
        fwd = np.empty((T, K))
        fwd[0] = log_init + em[0]
        for t in range(1, T):
            fwd[t] = logsumexp(fwd[t - 1][:, None] + log_trans, axis=0) + em[t]
        bwd = np.zeros((T, K))
        for t in range(T - 2, -1, -1):
            bwd[t] = logsumexp(log_trans + (em[t + 1] + bwd[t + 1])[None, :], axis=1)
        post = fwd + bwd
        return np.exp(post - logsumexp(post, axis=1, keepdims=True))


def _prepare(obs):
    seqs = []
    for o in obs:
        a = o.data if isinstance(o, FeatureMatrix) else np.asarray(o, dtype=np.float64)
        a = np.atleast_2d(a)
        if a.shape[0] == 0:
            continue
        seqs.append(a)
    if not seqs:
        raise DataError("no observations to fit")
    D = seqs[0].shape[1]
    if any(s.shape[1] != D for s in seqs):
        raise DataError("observation sequences differ in dimension")
    X = np.ascontiguousarray(np.vstack(seqs))
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite observations")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    ends = np.cumsum(lengths)
    starts = ends - lengths
    return seqs, X, starts, ends


def ihmm_fit(obs, cfg: IhmmConfig | None = None) -> IhmmResult:
    """Fit an HDP-HMM to one or more observation sequences.

    Each sweep resamples every state indicator given its neighbours and the
    global weights, with emissions collapsed under a per-dimension normal-gamma
    prior, then resamples the global weights through auxiliary table counts.
    The first observation of each sequence transitions out of a shared start row.
    The sweep with the highest joint log-likelihood is returned.
    """
    cfg = cfg or IhmmConfig()
    cfg.validate()
    seqs, X, starts, ends = _prepare(obs)
    T, D = X.shape
    if T < 10:
        raise DataError(f"need at least 10 observations, got {T}")
    pr = cfg.prior
    m0 = np.asarray(pr.mean, dtype=np.float64) if pr.mean is not None else X.mean(axis=0)
    b0 = np.asarray(pr.rate, dtype=np.float64) if pr.rate is not None else X.var(axis=0)
    b0 = np.maximum(b0, 1e-8 * max(float(np.max(b0)), 1e-12))
    if m0.shape != (D,) or b0.shape != (D,):
        raise ConfigError("prior mean and rate need one entry per dimension")
    k0, a0 = float(pr.kappa), float(pr.shape)

    cap = cfg.max_states + 2
    rng = np.random.default_rng(cfg.seed)
    _seed(int(rng.integers(2 ** 31)))
    K0 = min(cfg.init_states, T)
    z = rng.integers(0, K0, size=T).astype(np.int64) if K0 > 1 else np.zeros(T, dtype=np.int64)
    # make sure every initial label is used
    z[:K0] = np.arange(K0)
    cnt = np.zeros(cap, dtype=np.int64)
    sx = np.zeros((cap, D))
    sxx = np.zeros((cap, D))
    N = np.zeros((cap + 1, cap), dtype=np.int64)
    R = np.zeros(cap + 1, dtype=np.int64)
    start_row = cap
    for s, e in zip(starts, ends):
        N[start_row, z[s]] += 1
        for i in range(s, e):
            cnt[z[i]] += 1
            sx[z[i]] += X[i]
            sxx[z[i]] += X[i] ** 2
            if i + 1 < e:
                N[z[i], z[i + 1]] += 1
                R[z[i]] += 1
    K = int(K0)
    beta = np.zeros(cap + 1)
    beta[:K + 1] = 1.0 / (K + 1)
    const = np.zeros(cap)
    loc = np.zeros((cap, D))
    inv = np.zeros((cap, D))
    half = np.zeros(cap)
    for k in range(K):
        _refresh(k, cnt, sx, sxx, m0, k0, a0, b0, const, loc, inv, half)
    logw = np.zeros(cap + 1)

    history = []
    best = None
    for sweep in range(cfg.iters):
        K = _sweep(X, starts, ends, z, K, cnt, sx, sxx, N, R, beta, const, loc, inv, half,
                   m0, k0, a0, b0, float(cfg.alpha), float(cfg.gamma), logw)
        _resample_beta(K, N, beta, float(cfg.alpha), float(cfg.gamma))
        ll = float(_joint_ll(K, cnt, sx, sxx, N, R, beta, m0, k0, a0, b0, float(cfg.alpha)))
        history.append(ll)
        if best is None or ll > best[0]:
            best = (ll, sweep, z.copy(), K, beta[:K + 1].copy())

    _, best_sweep, zb, K, bb = best
    # relabel by first appearance
    order = []
    seen = np.full(K, -1, dtype=np.int64)
    for v in zb:
        if seen[v] < 0:
            seen[v] = len(order)
            order.append(v)
    zr = seen[zb]
    order = np.asarray(order)
    counts = np.bincount(zr, minlength=K)
    sums = np.zeros((K, D))
    sumsq = np.zeros((K, D))
    np.add.at(sums, zr, X)
    np.add.at(sumsq, zr, X ** 2)
    trans = np.zeros((K + 1, K))
    for s, e in zip(starts, ends):
        trans[K, zr[s]] += 1
        np.add.at(trans, (zr[s:e - 1], zr[s + 1:e]), 1)
    beta_out = np.concatenate([bb[order], bb[K:K + 1]])
    states = [zr[s:e] + 1 for s, e in zip(starts, ends)]
    keys = {}
    for i, sq in enumerate(seqs):
        keys.setdefault(sequence_key(sq), i)
    return IhmmResult(states, K, beta_out, counts, sums, sumsq, trans, m0, k0, a0, b0,
                      float(cfg.alpha), history, best_sweep, keys)
