"""Linear-chain CRF over embedded sequences.

Frame features are a fixed seeded random projection of the embedding
through tanh (E basis functions); learnable parameters are per-label
weights over that basis plus a label-transition matrix. Training maximizes
the mean conditional log-likelihood by gradient ascent with a backtracking
line search, so the objective never decreases across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .hmm import logsumexp


@dataclass
class LinearChainCrf:
    projection: np.ndarray  # (E, d), fixed
    unary: np.ndarray  # (C, E), learned
    transitions: np.ndarray  # (C, C), learned
    trained: bool = False

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        self.unary = np.asarray(self.unary, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        C, E = self.unary.shape
        if self.projection.shape[0] != E or self.transitions.shape != (C, C):
            raise ShapeError("crf parameter shapes disagree")
        for arr in (self.projection, self.unary, self.transitions):
            if not np.all(np.isfinite(arr)):
                raise ValueError("crf weights must be finite")

    @property
    def num_labels(self) -> int:
        return self.unary.shape[0]


def new_crf(num_labels: int, embed_dim: int, num_basis: int = 32, seed: int = 0) -> LinearChainCrf:
    rng = np.random.default_rng(seed)
    projection = rng.normal(0.0, 1.0, size=(num_basis, embed_dim))
    return LinearChainCrf(
        projection=projection,
        unary=np.zeros((num_labels, num_basis)),
        transitions=np.zeros((num_labels, num_labels)),
    )


def crf_features(crf: LinearChainCrf, X) -> np.ndarray:
    """(T, E) potential-function basis: tanh of the fixed projection."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.tanh(X @ crf.projection.T)


def _scores(crf, X):
    return crf_features(crf, X) @ crf.unary.T  # (T, C)


def crf_log_partition(crf: LinearChainCrf, X) -> float:
    """Log normalizer over all label paths, by the forward recursion."""
    scores = _scores(crf, X)
    return _log_partition_from_scores(scores, crf.transitions)


def _log_partition_from_scores(scores, transitions) -> float:
    T = scores.shape[0]
    if T == 0:
        raise ValueError("empty sequence")
    alpha = scores[0].copy()
    for t in range(1, T):
        alpha = scores[t] + logsumexp(alpha[:, None] + transitions, axis=0)
    return float(logsumexp(alpha))


def crf_viterbi(crf: LinearChainCrf, X) -> np.ndarray:
    """Most probable label path (labels 1..C)."""
    scores = _scores(crf, X)
    T, C = scores.shape
    if T == 0:
        raise ValueError("empty sequence")
    delta = scores[0].copy()
    back = np.zeros((T, C), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + crf.transitions
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(C)] + scores[t]
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = int(np.argmax(delta))
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1][path[t + 1]]
    return path + 1


def crf_marginals(crf: LinearChainCrf, X) -> np.ndarray:
    """(T, C) per-frame label marginals (each row sums to 1)."""
    scores = _scores(crf, X)
    T, C = scores.shape
    alpha = np.empty((T, C))
    alpha[0] = scores[0]
    for t in range(1, T):
        alpha[t] = scores[t] + logsumexp(alpha[t - 1][:, None] + crf.transitions, axis=0)
    beta = np.empty((T, C))
    beta[T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(crf.transitions + (scores[t + 1] + beta[t + 1])[None, :], axis=1)
    logz = logsumexp(alpha[T - 1])
    marg = np.exp(alpha + beta - logz)
    return marg / marg.sum(axis=1, keepdims=True)


def crf_loglik_and_grad(crf: LinearChainCrf, sequences):
    """Mean conditional log-likelihood and gradients over (X, labels) pairs.

    labels use 1..C. Returns (loglik, grad_unary, grad_transitions).
    """
    C = crf.num_labels
    total = 0.0
    g_unary = np.zeros_like(crf.unary)
    g_trans = np.zeros_like(crf.transitions)
    n_seq = len(sequences)
    for X, labels in sequences:
        feats = crf_features(crf, X)
        scores = feats @ crf.unary.T
        y = np.asarray(labels, dtype=np.int64) - 1
        T = scores.shape[0]
        if T == 0:
            raise ValueError("empty sequence")
        # forward/backward for expectations
        alpha = np.empty((T, C))
        alpha[0] = scores[0]
        for t in range(1, T):
            alpha[t] = scores[t] + logsumexp(alpha[t - 1][:, None] + crf.transitions, axis=0)
        beta = np.empty((T, C))
        beta[T - 1] = 0.0
        for t in range(T - 2, -1, -1):
            beta[t] = logsumexp(crf.transitions + (scores[t + 1] + beta[t + 1])[None, :], axis=1)
        logz = float(logsumexp(alpha[T - 1]))
        marg = np.exp(alpha + beta - logz)
        marg /= marg.sum(axis=1, keepdims=True)

        gold = float(scores[np.arange(T), y].sum() + crf.transitions[y[:-1], y[1:]].sum())
        total += gold - logz

        onehot = np.zeros((T, C))
        onehot[np.arange(T), y] = 1.0
        g_unary += (onehot - marg).T @ feats
        for t in range(T - 1):
            pair = np.exp(
                alpha[t][:, None] + crf.transitions + (scores[t + 1] + beta[t + 1])[None, :] - logz
            )
            pair /= pair.sum()
            g_trans -= pair
        np.add.at(g_trans, (y[:-1], y[1:]), 1.0)
    return total / n_seq, g_unary / n_seq, g_trans / n_seq


def crf_train(
    sequences,
    num_labels: int,
    iterations: int = 100,
    num_basis: int = 32,
    seed: int = 0,
    step0: float = 1.0,
    crf: LinearChainCrf | None = None,
) -> tuple[LinearChainCrf, list[float]]:
    """Gradient ascent with backtracking; returns (model, objective trace).

    sequences is a list of (X, labels) with labels in 1..C. The trace holds
    the mean conditional log-likelihood before each accepted step and is
    non-decreasing by construction.
    """
    if not sequences:
        raise ValueError("no training sequences")
    if crf is None:
        d = np.atleast_2d(sequences[0][0]).shape[1]
        crf = new_crf(num_labels, d, num_basis=num_basis, seed=seed)
    step = step0
    obj, g_u, g_t = crf_loglik_and_grad(crf, sequences)
    trace = [obj]
    for _ in range(int(iterations)):
        while True:
            trial = LinearChainCrf(
                projection=crf.projection,
                unary=crf.unary + step * g_u,
                transitions=crf.transitions + step * g_t,
            )
            new_obj, new_gu, new_gt = crf_loglik_and_grad(trial, sequences)
            if new_obj >= obj or step < 1e-12:
                break
            step *= 0.5
        if new_obj < obj:
            break  # no ascent direction left at minimal step
        crf, obj, g_u, g_t = trial, new_obj, new_gu, new_gt
        trace.append(obj)
        step *= 1.3  # cautiously re-grow after an accepted step
    crf.trained = True
    return crf, trace
