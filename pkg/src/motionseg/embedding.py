"""Siamese encoder over frame features with metric-learning losses.

The encoder maps a frame's feature vector to a unit-norm embedding.
Training minimizes a hinge triplet loss (squared Euclidean distances, as
on the unit sphere), an n-pairs softmax loss, a time-contrastive triplet
loss over temporal windows, or a 50/50 blend of supervised triplet and
time-contrastive terms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DegenerateBatchError, DegenerateDatasetError, ShapeError
from .numerics import (
    MlpParams,
    init_mlp,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    mlp_backward,
    mlp_forward,
)

SAMPLING_MODES = ("supervised_segment", "time_contrastive")
LOSS_MODES = ("triplet", "npairs", "svtcn", "triplet_tcn")


@dataclass
class FrameFeatures:
    values: np.ndarray
    demo_id: str = ""
    frame_index: int = 0
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class Embedding:
    values: np.ndarray
    demo_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = np.linalg.norm(self.values)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"embedding norm {n} not within 1e-9 of 1")


@dataclass
class TripletConfig:
    margin: float = 0.2
    batch_size: int = 128
    sampling: str = "supervised_segment"
    pos_window: int = 6
    neg_window: int = 12
    semi_hard: bool = False  # mine hardest valid negatives instead of uniform

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not (0 < self.pos_window < self.neg_window):
            raise ValueError("need neg_window > pos_window > 0")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.sampling!r}")


@dataclass
class Encoder:
    mlp: MlpParams
    trained: bool = False

    @property
    def input_width(self) -> int:
        return self.mlp.in_dim

    @property
    def dim(self) -> int:
        return self.mlp.out_dim


def new_encoder(feature_width: int, dim: int = 32, hidden=(256, 64), seed=0) -> Encoder:
    sizes = [feature_width, *hidden, dim]
    return Encoder(mlp=init_mlp(sizes, rng=np.random.default_rng(seed)))


def encode_array(encoder: Encoder, features) -> np.ndarray:
    """Encode (T, F) features into (T, d) unit-norm rows."""
    out, _ = mlp_forward(encoder.mlp, np.atleast_2d(features))
    return l2_normalize_rows(out)


def encode(encoder: Encoder, frame: FrameFeatures) -> Embedding:
    """Encode one frame; pure function of (encoder parameters, frame values)."""
    values = encode_array(encoder, frame.values[None, :])[0]
    return Embedding(values=values, demo_id=frame.demo_id, frame_index=frame.frame_index)


# ---------------------------------------------------------------------------
# losses


def triplet_loss(anchor, positive, negative, margin: float):
    """Hinge loss max(0, ||a-p||^2 - ||a-n||^2 + margin) with gradients.

    Returns (loss, (grad_anchor, grad_positive, grad_negative)); gradients
    are zero whenever the hinge is inactive.
    """
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.asarray(negative, dtype=np.float64)
    if not (a.shape == p.shape == n.shape):
        raise ShapeError("triplet members must share one dimension")
    dp = a - p
    dn = a - n
    pre = float(dp @ dp - dn @ dn + margin)
    if pre <= 0.0:
        z = np.zeros_like(a)
        return 0.0, (z, z.copy(), z.copy())
    return pre, (2.0 * (n - p), -2.0 * dp, 2.0 * dn)


def triplet_loss_batch(embeddings, triplets, margin: float):
    """Mean triplet loss over index triples into an embedding matrix.

    embeddings: (U, d); triplets: (M, 3) int indices (anchor, pos, neg).
    Returns (mean_loss, grad wrt embeddings of shape (U, d)).
    """
    E = np.asarray(embeddings, dtype=np.float64)
    tri = np.asarray(triplets, dtype=np.int64)
    if tri.size == 0:
        raise DegenerateBatchError("no triplets in batch")
    a, p, n = E[tri[:, 0]], E[tri[:, 1]], E[tri[:, 2]]
    dp = a - p
    dn = a - n
    pre = np.sum(dp * dp, axis=1) - np.sum(dn * dn, axis=1) + margin
    active = pre > 0.0
    loss = float(np.sum(pre[active])) / tri.shape[0]
    grad = np.zeros_like(E)
    if np.any(active):
        w = 2.0 / tri.shape[0]
        ai, pi, ni = tri[active, 0], tri[active, 1], tri[active, 2]
        np.add.at(grad, ai, w * (n[active] - p[active]))
        np.add.at(grad, pi, -w * dp[active])
        np.add.at(grad, ni, w * dn[active])
    return loss, grad


def npairs_loss(anchors, positives, labels):
    """N-pairs softmax loss over a batch of (anchor, positive) pairs.

    Each anchor treats every same-label positive as its target against all
    other pairs' positives (dot-product similarities). Returns
    (mean_loss, (grad_anchors, grad_positives)).
    """
    A = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    P = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    y = np.asarray(labels)
    if A.shape != P.shape or A.shape[0] != y.shape[0]:
        raise ShapeError("anchors, positives and labels must align")
    B = A.shape[0]
    if B < 2:
        raise DegenerateBatchError("n-pairs needs at least 2 pairs")
    if np.unique(y).size < 2:
        raise DegenerateBatchError("n-pairs batch has a single label")
    S = A @ P.T  # (B, B) similarities
    same = y[:, None] == y[None, :]
    m = S.max(axis=1, keepdims=True)
    exps = np.exp(S - m)
    full = exps.sum(axis=1)
    hit = np.where(same, exps, 0.0).sum(axis=1)
    loss = float(np.mean(np.log(full) - np.log(hit)))
    q = exps / full[:, None]
    r = np.where(same, exps, 0.0) / hit[:, None]
    dS = (q - r) / B
    return loss, (dS @ P, dS.T @ A)


# ---------------------------------------------------------------------------
# triplet samplers


def sample_triplets_supervised(
    labels, rng, embeddings=None, semi_hard: bool = False
) -> list[tuple[int, int, int]]:
    """Index triples (anchor, positive, negative) within one labeled batch.

    Every frame with at least one same-label partner anchors one triplet;
    positives share the anchor's label, negatives never do. With semi_hard
    (needs embeddings) the negative is the closest one still farther than
    the positive, falling back to uniform when none qualifies.
    """
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise DegenerateBatchError("triplet sampling needs >= 2 distinct labels")
    if semi_hard and embeddings is None:
        raise ValueError("semi-hard mining needs the batch embeddings")
    triplets = []
    idx = np.arange(labels.shape[0])
    for i in idx:
        pos = idx[(labels == labels[i]) & (idx != i)]
        if pos.size == 0:
            continue
        neg = idx[labels != labels[i]]
        p = int(rng.choice(pos))
        if semi_hard:
            d_pos = float(np.sum((embeddings[i] - embeddings[p]) ** 2))
            d_neg = np.sum((embeddings[i] - embeddings[neg]) ** 2, axis=1)
            valid = neg[d_neg > d_pos]
            if valid.size:
                n = int(valid[np.argmin(d_neg[d_neg > d_pos])])
            else:
                n = int(rng.choice(neg))
        else:
            n = int(rng.choice(neg))
        triplets.append((int(i), p, n))
    if not triplets:
        warnings.warn("no valid triplets: every label occurs once", stacklevel=2)
    return triplets


def sample_triplets_time_contrastive(
    length: int, pos_window: int, neg_window: int, rng, n_triplets: int
) -> list[tuple[int, int, int]]:
    """Window-based triples within one demonstration of the given length.

    Positives land within +-pos_window of the anchor, negatives strictly
    outside +-neg_window; anchors that admit no negative are excluded.
    """
    if length <= 2 * neg_window:
        raise DegenerateBatchError(
            f"sequence length {length} too short for neg_window {neg_window}"
        )
    anchors = [t for t in range(length) if t > neg_window or t < length - 1 - neg_window]
    anchors = np.asarray(anchors)
    triplets = []
    for _ in range(n_triplets):
        t = int(rng.choice(anchors))
        lo, hi = max(0, t - pos_window), min(length - 1, t + pos_window)
        pos_candidates = [s for s in range(lo, hi + 1) if s != t]
        left = list(range(0, t - neg_window))
        right = list(range(t + neg_window + 1, length))
        neg_candidates = left + right
        triplets.append((t, int(rng.choice(pos_candidates)), int(rng.choice(neg_candidates))))
    return triplets


def sample_npairs(labels, rng):
    """One (anchor_idx, positive_idx) pair per label that has >= 2 frames."""
    labels = np.asarray(labels)
    anchors, positives, pair_labels = [], [], []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        if members.size < 2:
            continue
        pick = rng.choice(members, size=2, replace=False)
        anchors.append(int(pick[0]))
        positives.append(int(pick[1]))
        pair_labels.append(lab)
    return anchors, positives, np.asarray(pair_labels)


# ---------------------------------------------------------------------------
# training


def _labeled_pool(dataset, extra_labels):
    """(demo_index, frame, label) rows from visible labels plus extra pseudo-labels."""
    rows = []
    for di, demo in enumerate(dataset.demos):
        if demo.labels is not None:
            for t in range(demo.num_frames):
                rows.append((di, t, int(demo.labels[t])))
        elif extra_labels:
            for t, lab in sorted(extra_labels.get(demo.demo_id, {}).items()):
                rows.append((di, t, int(lab)))
    return rows


def train_embedding(
    dataset,
    config: TripletConfig,
    epochs: int,
    seed: int,
    loss_mode: str = "triplet",
    dim: int = 32,
    hidden=(256, 64),
    lr: float = 1e-3,
    extra_labels: dict | None = None,
    encoder: Encoder | None = None,
):
    """Train an encoder on a dataset; returns (Encoder, per-step loss trace).

    loss_mode selects the objective: "triplet" (supervised), "npairs",
    "svtcn" (unsupervised time-contrastive), or "triplet_tcn" (equal-weight sum
    of supervised triplet and time-contrastive terms). extra_labels maps
    demo_id -> {frame -> label} and is merged with visible labels.
    """
    if loss_mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {loss_mode!r}")
    if not dataset.demos:
        raise DegenerateDatasetError("empty dataset")
    rng = np.random.default_rng(seed)
    if encoder is None:
        encoder = new_encoder(
            dataset.feature_width, dim=dim, hidden=hidden, seed=rng.integers(2**32)
        )
    params = encoder.mlp.param_arrays()
    opt = numerics.make_optimizer(params, "adam", lr=lr)

    supervised = loss_mode in ("triplet", "npairs", "triplet_tcn")
    contrastive = loss_mode in ("svtcn", "triplet_tcn")
    pool = _labeled_pool(dataset, extra_labels) if supervised else []
    if supervised:
        if not pool:
            raise DegenerateDatasetError("no labeled frames available")
        if len({lab for _, _, lab in pool}) < 2:
            raise DegenerateDatasetError("labeled pool has a single class")
    tcn_demos = [d for d in dataset.demos if d.num_frames > 2 * config.neg_window]
    if contrastive and not tcn_demos:
        raise DegenerateDatasetError("no demo long enough for time-contrastive sampling")

    trace = []
    steps_per_epoch = (
        max(1, (len(pool) + config.batch_size - 1) // config.batch_size)
        if supervised
        else max(1, (dataset.num_frames + config.batch_size - 1) // config.batch_size)
    )
    for _ in range(int(epochs)):
        order = rng.permutation(len(pool)) if supervised else None
        for step in range(steps_per_epoch):
            total_loss = 0.0
            grads = None
            n_terms = 0
            if supervised:
                chunk = order[step * config.batch_size : (step + 1) * config.batch_size]
                if chunk.size:
                    part = _supervised_step(dataset, pool, chunk, config, loss_mode, rng, encoder)
                    if part is not None:
                        loss, g = part
                        weight = 0.5 if loss_mode == "triplet_tcn" else 1.0
                        total_loss += weight * loss
                        grads = numerics.accumulate_grads(grads, g, weight)
                        n_terms += 1
            if contrastive:
                loss, g = _tcn_step(tcn_demos, config, rng, encoder)
                weight = 0.5 if loss_mode == "triplet_tcn" else 1.0
                total_loss += weight * loss
                grads = numerics.accumulate_grads(grads, g, weight)
                n_terms += 1
            if n_terms == 0:
                continue
            numerics.optimizer_step(params, numerics.grads_to_arrays(grads), opt)
            trace.append(total_loss)
    encoder.trained = encoder.trained or epochs > 0
    return encoder, trace


def _forward_loss_backward(encoder, X, loss_on_embeddings):
    """Shared plumbing: encode X, apply a loss on unit embeddings, backprop."""
    H, cache = mlp_forward(encoder.mlp, X)
    E = l2_normalize_rows(H)
    loss, grad_E = loss_on_embeddings(E)
    grad_H = l2_normalize_rows_backward(H, grad_E)
    grads, _ = mlp_backward(encoder.mlp, cache, grad_H)
    return loss, grads


def _supervised_step(dataset, pool, chunk, config, loss_mode, rng, encoder):
    rows = [pool[i] for i in chunk]
    labels = np.asarray([lab for _, _, lab in rows])
    uniq, counts = np.unique(labels, return_counts=True)
    if uniq.size < 2 or counts.max() < 2:
        return None  # chunk cannot form triplets or pairs
    X = np.stack([dataset.demos[di].features[t] for di, t, _ in rows])
    if loss_mode == "npairs":
        ai, pi, pair_labels = sample_npairs(labels, rng)
        if len(ai) < 2:
            return None
        def npairs_on(E):
            loss, (gA, gP) = npairs_loss(E[ai], E[pi], pair_labels)
            grad = np.zeros_like(E)
            np.add.at(grad, ai, gA)
            np.add.at(grad, pi, gP)
            return loss, grad
        return _forward_loss_backward(encoder, X, npairs_on)
    def triplet_on(E):
        triplets = sample_triplets_supervised(
            labels, rng, embeddings=E, semi_hard=config.semi_hard
        )
        return triplet_loss_batch(E, triplets, config.margin)

    return _forward_loss_backward(encoder, X, triplet_on)


def _tcn_step(tcn_demos, config, rng, encoder):
    weights = np.asarray([d.num_frames for d in tcn_demos], dtype=np.float64)
    demo = tcn_demos[int(rng.choice(len(tcn_demos), p=weights / weights.sum()))]
    triplets = sample_triplets_time_contrastive(
        demo.num_frames, config.pos_window, config.neg_window, rng, config.batch_size
    )
    used = sorted({i for tri in triplets for i in tri})
    remap = {orig: k for k, orig in enumerate(used)}
    tri_local = [(remap[a], remap[p], remap[n]) for a, p, n in triplets]
    X = demo.features[used]
    return _forward_loss_backward(
        encoder, X, lambda E: triplet_loss_batch(E, tri_local, config.margin)
    )


# ---------------------------------------------------------------------------
# incremental PCA baseline


class IncrementalPca:
    """Streaming PCA onto the top n_components directions.

    partial_fit merges each batch into a running SVD of the centered data;
    components stay orthonormal because they are rows of V^T.
    """

    def __init__(self, n_components: int):
        if n_components < 1:
            raise ValueError("n_components must be >= 1")
        self.n_components = n_components
        self.mean_ = None
        self.components_ = None
        self.singular_values_ = None
        self.n_seen_ = 0
        self._col_ssd = None  # per-column sum of squared deviations from the mean

    @property
    def explained_variance_ratio_(self):
        if self.components_ is None:
            raise self._unfitted()
        total = float(np.sum(self._col_ssd))
        if total <= 0:
            return np.zeros(len(self.singular_values_))
        return self.singular_values_**2 / total

    def _unfitted(self):
        from .errors import UnfittedModelError

        return UnfittedModelError("transform called before any partial_fit")

    def partial_fit(self, X) -> "IncrementalPca":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n_new = X.shape[0]
        if self.n_seen_ == 0:
            if n_new < self.n_components:
                raise DegenerateBatchError(
                    f"first batch needs >= {self.n_components} rows, got {n_new}"
                )
            self.mean_ = X.mean(axis=0)
            centered = X - self.mean_
            self._col_ssd = np.sum(centered**2, axis=0)
            stack = centered
            self.n_seen_ = n_new
        else:
            if X.shape[1] != self.mean_.shape[0]:
                raise ShapeError("batch width changed between partial_fit calls")
            n_total = self.n_seen_ + n_new
            batch_mean = X.mean(axis=0)
            centered = X - batch_mean
            self._col_ssd = (
                self._col_ssd
                + np.sum(centered**2, axis=0)
                + (self.n_seen_ * n_new / n_total) * (self.mean_ - batch_mean) ** 2
            )
            correction = np.sqrt(self.n_seen_ * n_new / n_total) * (self.mean_ - batch_mean)
            stack = np.vstack(
                [self.singular_values_[:, None] * self.components_, centered, correction[None, :]]
            )
            self.mean_ = (self.n_seen_ * self.mean_ + n_new * batch_mean) / n_total
            self.n_seen_ = n_total
        _, s, vt = np.linalg.svd(stack, full_matrices=False)
        k = min(self.n_components, vt.shape[0])
        comps = vt[:k]
        # fix component signs for reproducible dumps
        signs = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
        signs[signs == 0] = 1.0
        self.components_ = comps * signs[:, None]
        self.singular_values_ = s[:k]
        return self

    def transform(self, X) -> np.ndarray:
        if self.components_ is None:
            raise self._unfitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (X - self.mean_) @ self.components_.T


def ipca_fit_partial(state: IncrementalPca, batch) -> IncrementalPca:
    return state.partial_fit(batch)


def ipca_transform(state: IncrementalPca, frame) -> np.ndarray:
    out = state.transform(np.atleast_2d(frame))
    return out[0] if np.asarray(frame).ndim == 1 else out


# ---------------------------------------------------------------------------
# 2-D projection dump


def pca2d(points) -> np.ndarray:
    """Project (N, d) points onto their top-2 principal directions."""
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if X.shape[0] < 2:
        raise DegenerateBatchError("need at least 2 points for a 2-D projection")
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:  # 1-D input space
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    signs = np.sign(comps[np.arange(2), np.argmax(np.abs(comps), axis=1)])
    signs[signs == 0] = 1.0
    return centered @ (comps * signs[:, None]).T


def pca2d_dump(embeddings, labels=None) -> list[tuple]:
    """Rows (demo_id, frame_index, label_or_-1, x, y) for a set of Embeddings."""
    X = np.stack([e.values for e in embeddings])
    coords = pca2d(X)
    rows = []
    for i, e in enumerate(embeddings):
        lab = -1 if labels is None else int(labels[i])
        rows.append((e.demo_id, e.frame_index, lab, float(coords[i, 0]), float(coords[i, 1])))
    return rows
