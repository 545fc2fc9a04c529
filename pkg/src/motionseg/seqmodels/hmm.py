"""Gaussian hidden Markov model: log-space inference and EM fitting.

All dynamic programming runs in log space. Covariances carry a small
diagonal floor so EM never degenerates on tight clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ModelInvalidError, ShapeError

LOG_EPS = -1e300  # stand-in for log(0) that survives arithmetic


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


@dataclass
class GaussianHmm:
    pi: np.ndarray  # (K,)
    A: np.ndarray  # (K, K) row-stochastic
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covs = np.asarray(self.covs, dtype=np.float64)
        K = self.pi.shape[0]
        if self.A.shape != (K, K) or self.means.shape[0] != K or self.covs.shape[0] != K:
            raise ShapeError("hmm parameter shapes disagree")
        if np.max(np.abs(self.A.sum(axis=1) - 1.0)) > 1e-10:
            raise ModelInvalidError("transition rows must sum to 1 within 1e-10")

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def gaussian_logpdf(X, mean, cov) -> np.ndarray:
    """Log density of rows of X under N(mean, cov)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = X.shape[1]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ModelInvalidError("covariance is not positive definite")
    diff = X - mean
    maha = np.sum(diff @ np.linalg.inv(cov) * diff, axis=1)
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def emission_log_probs(hmm: GaussianHmm, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack(
        [gaussian_logpdf(X, hmm.means[k], hmm.covs[k]) for k in range(hmm.n_states)], axis=1
    )


def _log_clip(p):
    out = np.full(p.shape, LOG_EPS)
    np.log(p, out=out, where=p > 0)
    return out


def hmm_forward_backward(hmm: GaussianHmm, X) -> tuple[np.ndarray, float]:
    """Per-frame state posteriors (each row sums to 1) and total log-likelihood."""
    logb = emission_log_probs(hmm, X)
    gamma, loglik, _, _ = _forward_backward_from_logb(hmm, logb)
    return gamma, loglik


def _forward_backward_from_logb(hmm, logb):
    T, K = logb.shape
    if T == 0:
        raise ValueError("empty sequence")
    log_pi = _log_clip(hmm.pi)
    log_A = _log_clip(hmm.A)
    la = np.empty((T, K))
    la[0] = log_pi + logb[0]
    for t in range(1, T):
        la[t] = logb[t] + logsumexp(la[t - 1][:, None] + log_A, axis=0)
    loglik = float(logsumexp(la[T - 1]))
    lb = np.empty((T, K))
    lb[T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        lb[t] = logsumexp(log_A + (logb[t + 1] + lb[t + 1])[None, :], axis=1)
    lg = la + lb - loglik
    gamma = np.exp(lg)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, loglik, la, lb


def hmm_viterbi(hmm: GaussianHmm, X) -> tuple[np.ndarray, float]:
    """Most probable state path and its joint log-probability."""
    logb = emission_log_probs(hmm, X)
    return _viterbi_from_logb(_log_clip(hmm.pi), _log_clip(hmm.A), logb)


def _viterbi_from_logb(log_pi, log_A, logb):
    T, K = logb.shape
    delta = log_pi + logb[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(K)] + logb[t]
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = int(np.argmax(delta))
    best = float(delta[path[T - 1]])
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1][path[t + 1]]
    return path, best


# ---------------------------------------------------------------------------
# fitting


def kmeans_plus_plus(X, K, rng, lloyd_iterations: int = 10) -> np.ndarray:
    """k-means++ seeding followed by a few Lloyd refinements."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = closest.sum()
        if total <= 0:
            centers[k] = X[int(rng.integers(n))]
        else:
            centers[k] = X[int(rng.choice(n, p=closest / total))]
        closest = np.minimum(closest, np.sum((X - centers[k]) ** 2, axis=1))
    for _ in range(lloyd_iterations):
        d2 = (
            np.sum(X**2, axis=1, keepdims=True)
            - 2.0 * X @ centers.T
            + np.sum(centers**2, axis=1)
        )
        assign = np.argmin(d2, axis=1)
        for k in range(K):
            members = X[assign == k]
            if members.shape[0]:
                centers[k] = members.mean(axis=0)
    return centers


def _regularize(cov, min_covar, diagonal):
    if diagonal:
        cov = np.diag(np.diag(cov))
    return cov + min_covar * np.eye(cov.shape[0])


def init_gaussian_hmm(sequences, K, seed, min_covar=1e-4, diagonal=False) -> GaussianHmm:
    """k-means++ means, pooled covariance, uniform initial/transition terms."""
    pooled = np.vstack([np.atleast_2d(s) for s in sequences])
    if pooled.shape[0] < K:
        raise ValueError(f"need >= {K} frames to fit {K} states")
    rng = np.random.default_rng(seed)
    means = kmeans_plus_plus(pooled, K, rng)
    base = np.cov(pooled, rowvar=False, bias=True)
    base = np.atleast_2d(base)
    cov = _regularize(base, min_covar, diagonal)
    covs = np.repeat(cov[None, :, :], K, axis=0)
    return GaussianHmm(
        pi=np.full(K, 1.0 / K), A=np.full((K, K), 1.0 / K), means=means, covs=covs
    )


def hmm_em_fit(
    sequences,
    K: int,
    iterations: int,
    seed: int,
    min_covar: float = 1e-4,
    diagonal: bool = False,
    init: GaussianHmm | None = None,
) -> tuple[GaussianHmm, list[float]]:
    """Baum-Welch over a list of (T, d) sequences.

    Returns (model, trace) where trace[i] is the total log-likelihood under
    the parameters entering iteration i (length iterations + 1; the last
    entry is the final model's log-likelihood). The trace is non-decreasing
    up to the covariance floor.
    """
    seqs = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in sequences]
    if not seqs or sum(s.shape[0] for s in seqs) == 0:
        raise ValueError("no training frames")
    hmm = init if init is not None else init_gaussian_hmm(seqs, K, seed, min_covar, diagonal)
    K = hmm.n_states
    d = hmm.dim
    trace = []
    for _ in range(int(iterations)):
        loglik = 0.0
        occ = np.zeros(K)
        first = np.zeros(K)
        xi = np.zeros((K, K))
        mean_acc = np.zeros((K, d))
        cov_acc = np.zeros((K, d, d))
        log_A = _log_clip(hmm.A)
        frames = []
        gammas = []
        for X in seqs:
            logb = emission_log_probs(hmm, X)
            gamma, ll, la, lb = _forward_backward_from_logb(hmm, logb)
            loglik += ll
            occ += gamma.sum(axis=0)
            first += gamma[0]
            for t in range(X.shape[0] - 1):
                log_xi = la[t][:, None] + log_A + (logb[t + 1] + lb[t + 1])[None, :] - ll
                xi += np.exp(log_xi)
            mean_acc += gamma.T @ X
            frames.append(X)
            gammas.append(gamma)
        trace.append(loglik)
        means = mean_acc / np.maximum(occ, 1e-300)[:, None]
        for X, gamma in zip(frames, gammas):
            diff = X[:, None, :] - means[None, :, :]
            cov_acc += np.einsum("tk,tki,tkj->kij", gamma, diff, diff)
        covs = cov_acc / np.maximum(occ, 1e-300)[:, None, None]
        covs = np.stack([_regularize(covs[k], min_covar, diagonal) for k in range(K)])
        pi = first / first.sum()
        row = xi.sum(axis=1)
        A = np.where(row[:, None] > 0, xi / np.maximum(row, 1e-300)[:, None], 1.0 / K)
        A /= A.sum(axis=1, keepdims=True)
        hmm = GaussianHmm(pi=pi, A=A, means=means, covs=covs)
    trace.append(sum(hmm_forward_backward(hmm, X)[1] for X in seqs))
    return hmm, trace
