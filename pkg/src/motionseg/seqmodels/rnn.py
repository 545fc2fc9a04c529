"""Bidirectional LSTM frame classifier trained with backpropagation through time.

Sequences are chunked into stride-length windows; batches pad windows to a
common length and mask the padding out of the loss. The backward-direction
cell consumes each window reversed within its own true length, so padding
never corrupts valid hidden states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmCell:
    w: np.ndarray  # (4H, in), gate order i, f, g, o
    u: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.shape[0] != self.u.shape[0] or self.w.shape[0] != 4 * self.u.shape[1]:
            raise ShapeError("lstm cell wants w (4H, in), u (4H, H)")

    @property
    def hidden(self) -> int:
        return self.u.shape[1]


def new_cell(input_dim: int, hidden: int, rng) -> LstmCell:
    limit_w = np.sqrt(6.0 / (input_dim + hidden))
    limit_u = np.sqrt(6.0 / (2 * hidden))
    w = rng.uniform(-limit_w, limit_w, size=(4 * hidden, input_dim))
    u = rng.uniform(-limit_u, limit_u, size=(4 * hidden, hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias
    return LstmCell(w, u, b)


def lstm_forward(cell: LstmCell, X) -> tuple[np.ndarray, list]:
    """Run the cell over (B, T, in); returns hidden states (B, T, H) and caches."""
    B, T, _ = X.shape
    H = cell.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.empty((B, T, H))
    caches = []
    for t in range(T):
        x = X[:, t, :]
        z = x @ cell.w.T + h @ cell.u.T + cell.b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        caches.append((x, h, c, i, f, g, o, tanh_c))
        h, c = h_new, c_new
        out[:, t, :] = h
    return out, caches


def lstm_backward(cell: LstmCell, caches, grad_h_seq):
    """BPTT through a cached forward run; grad_h_seq is (B, T, H).

    Returns ((dw, du, db), grad_input (B, T, in)).
    """
    B, T, H = grad_h_seq.shape
    dw = np.zeros_like(cell.w)
    du = np.zeros_like(cell.u)
    db = np.zeros_like(cell.b)
    dX = np.empty((B, T, cell.w.shape[1]))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        x, h_prev, c_prev, i, f, g, o, tanh_c = caches[t]
        dh = grad_h_seq[:, t, :] + dh_next
        do = dh * tanh_c
        dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dw += dz.T @ x
        du += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t, :] = dz @ cell.w
        dh_next = dz @ cell.u
    return (dw, du, db), dX


@dataclass
class RnnConfig:
    hidden: int = 256
    stride: int = 64  # window length in frames
    batch_size: int = 8
    lr: float = 1e-2


@dataclass
class BiRnn:
    fwd: LstmCell
    bwd: LstmCell
    w_out: np.ndarray  # (C, 2H)
    b_out: np.ndarray  # (C,)
    stride: int = 64

    def __post_init__(self):
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = np.asarray(self.b_out, dtype=np.float64)
        if self.w_out.shape[1] != self.fwd.hidden + self.bwd.hidden:
            raise ShapeError("output projection width must be 2H")

    @property
    def num_labels(self) -> int:
        return self.w_out.shape[0]

    def param_arrays(self) -> list[np.ndarray]:
        return [
            self.fwd.w, self.fwd.u, self.fwd.b,
            self.bwd.w, self.bwd.u, self.bwd.b,
            self.w_out, self.b_out,
        ]


def new_birnn(input_dim: int, num_labels: int, hidden: int, stride: int, seed: int) -> BiRnn:
    rng = np.random.default_rng(seed)
    fwd = new_cell(input_dim, hidden, rng)
    bwd = new_cell(input_dim, hidden, rng)
    limit = np.sqrt(6.0 / (2 * hidden + num_labels))
    w_out = rng.uniform(-limit, limit, size=(num_labels, 2 * hidden))
    return BiRnn(fwd=fwd, bwd=bwd, w_out=w_out, b_out=np.zeros(num_labels), stride=stride)


def _reverse_within_lengths(X, lengths):
    """Xr[b, t] = X[b, len_b - 1 - t] for t < len_b, zero on padding."""
    B, T = X.shape[0], X.shape[1]
    ar = np.arange(T)
    idx = np.maximum(lengths[:, None] - 1 - ar[None, :], 0)
    mask = ar[None, :] < lengths[:, None]
    out = X[np.arange(B)[:, None], idx]
    return out * mask[..., None], idx, mask


def birnn_forward(rnn: BiRnn, X, lengths):
    """Logits (B, T, C) plus caches for backward; padding rows are garbage."""
    X = np.asarray(X, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    Xr, idx, mask = _reverse_within_lengths(X, lengths)
    hf, cache_f = lstm_forward(rnn.fwd, X)
    hr, cache_r = lstm_forward(rnn.bwd, Xr)
    hb = hr[np.arange(X.shape[0])[:, None], idx] * mask[..., None]
    concat = np.concatenate([hf, hb], axis=2)
    logits = concat @ rnn.w_out.T + rnn.b_out
    return logits, (X, lengths, idx, mask, cache_f, cache_r, concat)


def birnn_backward(rnn: BiRnn, cache, grad_logits):
    """Gradients for all parameter arrays given d loss / d logits."""
    X, lengths, idx, mask, cache_f, cache_r, concat = cache
    B, T, _ = X.shape
    H = rnn.fwd.hidden
    g = grad_logits * mask[..., None]
    flat_g = g.reshape(-1, g.shape[2])
    dw_out = flat_g.T @ concat.reshape(-1, concat.shape[2])
    db_out = flat_g.sum(axis=0)
    dconcat = g @ rnn.w_out
    dhf = dconcat[:, :, :H]
    dhb = dconcat[:, :, H:]
    # mirror the gather: grad w.r.t. reversed-run outputs
    dhr = dhb[np.arange(B)[:, None], idx] * mask[..., None]
    (dwf, duf, dbf), _ = lstm_backward(rnn.fwd, cache_f, dhf)
    (dwr, dur, dbr), _ = lstm_backward(rnn.bwd, cache_r, dhr)
    return [dwf, duf, dbf, dwr, dur, dbr, dw_out, db_out]


def _softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_and_grad(logits, labels, mask):
    """Mean CE over valid frames; labels are 1..C, mask flags valid frames."""
    probs = _softmax(logits)
    y = np.asarray(labels, dtype=np.int64) - 1
    B, T, C = logits.shape
    n_valid = int(mask.sum())
    picked = probs[np.arange(B)[:, None], np.arange(T)[None, :], y]
    picked = np.maximum(picked, 1e-300)
    loss = float(-(np.log(picked) * mask).sum() / n_valid)
    grad = probs.copy()
    grad[np.arange(B)[:, None], np.arange(T)[None, :], y] -= 1.0
    grad *= mask[..., None] / n_valid
    return loss, grad


def make_windows(sequences, labels, stride: int):
    """Chunk (T, d) sequences into windows of at most `stride` frames."""
    wins, wlabs = [], []
    for X, y in zip(sequences, labels):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.int64)
        for s in range(0, X.shape[0], stride):
            wins.append(X[s : s + stride])
            wlabs.append(y[s : s + stride])
    return wins, wlabs


def _pad_batch(wins, wlabs):
    B = len(wins)
    T = max(w.shape[0] for w in wins)
    d = wins[0].shape[1]
    X = np.zeros((B, T, d))
    y = np.ones((B, T), dtype=np.int64)
    lengths = np.empty(B, dtype=np.int64)
    for i, (w, lab) in enumerate(zip(wins, wlabs)):
        X[i, : w.shape[0]] = w
        y[i, : lab.shape[0]] = lab
        lengths[i] = w.shape[0]
    mask = np.arange(T)[None, :] < lengths[:, None]
    return X, y, lengths, mask


def rnn_train(
    sequences,
    labels,
    num_labels: int,
    config: RnnConfig,
    epochs: int,
    seed: int,
    rnn: BiRnn | None = None,
) -> tuple[BiRnn, list[float]]:
    """Train on labeled embedded sequences; returns (model, per-batch loss trace)."""
    from .. import numerics

    wins, wlabs = make_windows(sequences, labels, config.stride)
    if not wins:
        raise ValueError("no training windows")
    for lab in wlabs:
        if lab.size and (lab.min() < 1 or lab.max() > num_labels):
            raise ValueError(f"labels must lie in 1..{num_labels}")
    rng = np.random.default_rng(seed)
    if rnn is None:
        rnn = new_birnn(
            wins[0].shape[1], num_labels, config.hidden, config.stride, seed=rng.integers(2**32)
        )
    params = rnn.param_arrays()
    opt = numerics.make_optimizer(params, "adam", lr=config.lr)
    trace = []
    for _ in range(int(epochs)):
        order = rng.permutation(len(wins))
        for s in range(0, len(order), config.batch_size):
            chunk = order[s : s + config.batch_size]
            X, y, lengths, mask = _pad_batch([wins[i] for i in chunk], [wlabs[i] for i in chunk])
            logits, cache = birnn_forward(rnn, X, lengths)
            loss, dlogits = cross_entropy_and_grad(logits, y, mask)
            grads = birnn_backward(rnn, cache, dlogits)
            numerics.optimizer_step(params, grads, opt)
            trace.append(loss)
    return rnn, trace


def rnn_predict(rnn: BiRnn, window) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Labels (1..C), max-softmax confidences, and full (T, C) probabilities."""
    X = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty window")
    logits, _ = birnn_forward(rnn, X[None, :, :], np.asarray([X.shape[0]]))
    probs = _softmax(logits[0])
    labels = np.argmax(probs, axis=1) + 1
    conf = probs[np.arange(probs.shape[0]), labels - 1]
    return labels, conf, probs


def rnn_predict_sequence(rnn: BiRnn, X) -> tuple[np.ndarray, np.ndarray]:
    """Chunk a long sequence into stride windows and concatenate predictions."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels, confs = [], []
    for s in range(0, X.shape[0], rnn.stride):
        lab, conf, _ = rnn_predict(rnn, X[s : s + rnn.stride])
        labels.append(lab)
        confs.append(conf)
    return np.concatenate(labels), np.concatenate(confs)
