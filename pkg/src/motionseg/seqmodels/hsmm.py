"""Explicit-duration hidden semi-Markov model.

States carry truncated-Poisson duration distributions over 1..d_max and
self-transitions are removed. Inference sums (or maximizes) over segment
decompositions: a path of segments [s, s+d-1] scores
initial/transition + duration + emissions, all in log space. The final
segment must end exactly at the last frame (no right-censoring), which is
also what the brute-force enumeration oracle computes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ModelInvalidError, ShapeError
from .hmm import _log_clip, _regularize, init_gaussian_hmm, logsumexp


@dataclass
class Hsmm:
    pi: np.ndarray  # (K,)
    A: np.ndarray  # (K, K), zero diagonal, rows sum to 1 (K > 1)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    lambdas: np.ndarray  # (K,) truncated-Poisson rates
    d_max: int = 60

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covs = np.asarray(self.covs, dtype=np.float64)
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        K = self.pi.shape[0]
        if self.A.shape != (K, K) or self.lambdas.shape != (K,):
            raise ShapeError("hsmm parameter shapes disagree")
        if np.max(np.abs(np.diag(self.A))) > 0:
            raise ModelInvalidError("hsmm transitions must have a zero diagonal")
        if K > 1 and np.max(np.abs(self.A.sum(axis=1) - 1.0)) > 1e-10:
            raise ModelInvalidError("transition rows must sum to 1 within 1e-10")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]


def duration_log_pmf(lambdas, d_max: int) -> np.ndarray:
    """(K, d_max) log pmf of Poisson(lambda) restricted to 1..d_max."""
    lam = np.maximum(np.asarray(lambdas, dtype=np.float64), 1e-9)
    d = np.arange(1, d_max + 1)
    log_fact = np.cumsum(np.log(d))
    logits = d[None, :] * np.log(lam)[:, None] - log_fact[None, :]
    return logits - logsumexp(logits, axis=1)[:, None]


def _trunc_poisson_mean(lam: float, d_max: int) -> float:
    logp = duration_log_pmf(np.asarray([lam]), d_max)[0]
    return float(np.exp(logp) @ np.arange(1, d_max + 1))


def fit_truncated_poisson(target_mean: float, d_max: int) -> float:
    """Rate whose truncated-Poisson mean matches target_mean (monotone bisection)."""
    if d_max == 1 or target_mean <= 1.0 + 1e-9:
        return 1e-3
    if target_mean >= d_max - 1e-9:
        return float(10 * d_max)
    lo, hi = np.log(1e-3), np.log(50.0 * d_max)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _trunc_poisson_mean(np.exp(mid), d_max) < target_mean:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def _emissions(hsmm: Hsmm, X) -> np.ndarray:
    from .hmm import gaussian_logpdf

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack(
        [gaussian_logpdf(X, hsmm.means[k], hsmm.covs[k]) for k in range(hsmm.n_states)],
        axis=1,
    )


def _forward(log_pi, log_A, log_dur, cumb):
    """Segment-end scores ls (T, K) and inflow table trans_in (T+1, K)."""
    T, K = cumb.shape[0] - 1, cumb.shape[1]
    D = log_dur.shape[1]
    ls = np.empty((T, K))
    trans_in = np.empty((T + 1, K))
    trans_in[0] = log_pi
    for t in range(T):
        dmax = min(D, t + 1)
        ds = np.arange(1, dmax + 1)
        starts = t - ds + 1
        vals = trans_in[starts] + log_dur[:, ds - 1].T + (cumb[t + 1][None, :] - cumb[starts])
        ls[t] = logsumexp(vals, axis=0)
        if t + 1 <= T - 1:
            trans_in[t + 1] = logsumexp(ls[t][:, None] + log_A, axis=0)
    return ls, trans_in


def hsmm_loglik(hsmm: Hsmm, X) -> float:
    """Total log-likelihood of a sequence (sum over all segmentations)."""
    logb = _emissions(hsmm, X)
    T, K = logb.shape
    cumb = np.vstack([np.zeros(K), np.cumsum(logb, axis=0)])
    log_dur = duration_log_pmf(hsmm.lambdas, hsmm.d_max)
    ls, _ = _forward(_log_clip(hsmm.pi), _log_clip(hsmm.A), log_dur, cumb)
    return float(logsumexp(ls[T - 1]))


def hsmm_viterbi(hsmm: Hsmm, X) -> tuple[np.ndarray, float]:
    """Most probable segmentation; returns (per-frame state path, log score)."""
    logb = _emissions(hsmm, X)
    T, K = logb.shape
    cumb = np.vstack([np.zeros(K), np.cumsum(logb, axis=0)])
    log_dur = duration_log_pmf(hsmm.lambdas, hsmm.d_max)
    log_pi = _log_clip(hsmm.pi)
    log_A = _log_clip(hsmm.A)
    D = log_dur.shape[1]

    vs = np.empty((T, K))
    best_in = np.empty((T + 1, K))
    prev_state = np.zeros((T + 1, K), dtype=np.int64)
    best_dur = np.zeros((T, K), dtype=np.int64)
    best_in[0] = log_pi
    for t in range(T):
        dmax = min(D, t + 1)
        ds = np.arange(1, dmax + 1)
        starts = t - ds + 1
        vals = best_in[starts] + log_dur[:, ds - 1].T + (cumb[t + 1][None, :] - cumb[starts])
        pick = np.argmax(vals, axis=0)
        vs[t] = vals[pick, np.arange(K)]
        best_dur[t] = ds[pick]
        if t + 1 <= T - 1:
            scores = vs[t][:, None] + log_A
            prev_state[t + 1] = np.argmax(scores, axis=0)
            best_in[t + 1] = scores[prev_state[t + 1], np.arange(K)]

    path = np.empty(T, dtype=np.int64)
    k = int(np.argmax(vs[T - 1]))
    score = float(vs[T - 1, k])
    t = T - 1
    while t >= 0:
        d = int(best_dur[t, k])
        path[t - d + 1 : t + 1] = k
        s = t - d + 1
        if s > 0:
            k = int(prev_state[s, k])
        t = s - 1
    return path, score


def hsmm_posteriors(hsmm: Hsmm, X):
    """E-step quantities for one sequence.

    Returns (loglik, gamma (T,K), xi (K,K), rho (K,), dur_counts (K,D)).
    """
    logb = _emissions(hsmm, X)
    T, K = logb.shape
    D = min(hsmm.d_max, T)
    cumb = np.vstack([np.zeros(K), np.cumsum(logb, axis=0)])
    log_dur = duration_log_pmf(hsmm.lambdas, hsmm.d_max)
    log_pi = _log_clip(hsmm.pi)
    log_A = _log_clip(hsmm.A)

    ls, trans_in = _forward(log_pi, log_A, log_dur, cumb)
    loglik = float(logsumexp(ls[T - 1]))

    # backward: re[t, k] covers the rest of the sequence given state k starts at t
    re = np.empty((T, K))
    bstar = np.empty((T, K))  # segment ends at t in state k
    bstar[T - 1] = 0.0
    for t in range(T - 1, -1, -1):
        dmax = min(D, T - t)
        ds = np.arange(1, dmax + 1)
        ends = t + ds - 1
        vals = log_dur[:, ds - 1].T + (cumb[t + ds] - cumb[t][None, :]) + bstar[ends]
        re[t] = logsumexp(vals, axis=0)
        if t - 1 >= 0:
            bstar[t - 1] = logsumexp(log_A + re[t][None, :], axis=1)

    rho = np.exp(log_pi + re[0] - loglik)

    dur_counts = np.zeros((K, hsmm.d_max))
    cover = np.zeros((T + 1, K))
    for d in range(1, D + 1):
        starts = np.arange(0, T - d + 1)
        ends = starts + d - 1
        log_w = (
            trans_in[starts]
            + log_dur[:, d - 1][None, :]
            + (cumb[ends + 1] - cumb[starts])
            + bstar[ends]
            - loglik
        )
        w = np.exp(np.maximum(log_w, -745.0))
        dur_counts[:, d - 1] = w.sum(axis=0)
        np.add.at(cover, starts, w)
        np.add.at(cover, ends + 1, -w)
    gamma = np.maximum(np.cumsum(cover[:T], axis=0), 0.0)

    xi = np.zeros((K, K))
    for s in range(1, T):
        xi += np.exp(ls[s - 1][:, None] + log_A + re[s][None, :] - loglik)
    return loglik, gamma, xi, rho, dur_counts


def hsmm_em_fit(
    sequences,
    K: int,
    iterations: int,
    seed: int,
    d_max: int = 60,
    min_covar: float = 1e-4,
    diagonal: bool = False,
    init: Hsmm | None = None,
) -> tuple[Hsmm, list[float]]:
    """EM for the explicit-duration model; mirrors hmm_em_fit's trace contract."""
    seqs = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in sequences]
    if not seqs:
        raise ValueError("no training sequences")
    if init is not None:
        hsmm = init
        K = hsmm.n_states
    else:
        base = init_gaussian_hmm(seqs, K, seed, min_covar, diagonal)
        avg_t = np.mean([s.shape[0] for s in seqs])
        lam0 = float(np.clip(avg_t / (2.0 * K), 1.5, max(d_max / 2.0, 1.5)))
        A = np.full((K, K), 1.0 / (K - 1)) if K > 1 else np.zeros((1, 1))
        np.fill_diagonal(A, 0.0)
        hsmm = Hsmm(
            pi=base.pi, A=A, means=base.means, covs=base.covs,
            lambdas=np.full(K, lam0), d_max=d_max,
        )
    d = hsmm.means.shape[1]
    trace = []
    for _ in range(int(iterations)):
        total_ll = 0.0
        occ = np.zeros(K)
        rho_acc = np.zeros(K)
        xi_acc = np.zeros((K, K))
        dur_acc = np.zeros((K, hsmm.d_max))
        mean_acc = np.zeros((K, d))
        gammas = []
        for X in seqs:
            ll, gamma, xi, rho, dur = hsmm_posteriors(hsmm, X)
            total_ll += ll
            occ += gamma.sum(axis=0)
            rho_acc += rho
            xi_acc += xi
            dur_acc += dur
            mean_acc += gamma.T @ X
            gammas.append(gamma)
        trace.append(total_ll)

        means = mean_acc / np.maximum(occ, 1e-300)[:, None]
        cov_acc = np.zeros((K, d, d))
        for X, gamma in zip(seqs, gammas):
            diff = X[:, None, :] - means[None, :, :]
            cov_acc += np.einsum("tk,tki,tkj->kij", gamma, diff, diff)
        covs = cov_acc / np.maximum(occ, 1e-300)[:, None, None]
        covs = np.stack([_regularize(covs[k], min_covar, diagonal) for k in range(K)])

        pi = rho_acc / rho_acc.sum()
        np.fill_diagonal(xi_acc, 0.0)
        rows = xi_acc.sum(axis=1)
        if K > 1:
            uniform = np.full((K, K), 1.0 / (K - 1))
            np.fill_diagonal(uniform, 0.0)
            A = np.where(rows[:, None] > 1e-12, xi_acc / np.maximum(rows, 1e-300)[:, None], uniform)
            A /= A.sum(axis=1, keepdims=True)
            np.fill_diagonal(A, 0.0)
            A /= A.sum(axis=1, keepdims=True)
        else:
            A = np.zeros((1, 1))

        lambdas = np.empty(K)
        dur_values = np.arange(1, hsmm.d_max + 1)
        for k in range(K):
            mass = dur_acc[k].sum()
            if mass <= 1e-12:
                lambdas[k] = hsmm.lambdas[k]
            else:
                lambdas[k] = fit_truncated_poisson(float(dur_acc[k] @ dur_values / mass), hsmm.d_max)
        hsmm = Hsmm(pi=pi, A=A, means=means, covs=covs, lambdas=lambdas, d_max=hsmm.d_max)
    trace.append(sum(hsmm_loglik(hsmm, X) for X in seqs))
    return hsmm, trace
