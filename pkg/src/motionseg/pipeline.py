"""Semi-supervised alternation: embed, segment, pseudo-label, re-embed.

Round 1 pretrains the encoder on true labels and fits the chosen sequence
model. Every later round infers pseudo-labels on the unlabeled training
demos, keeps the top-k most confident frames per class, and retrains both
models from scratch with true plus pseudo labels. Pseudo-labels are
rebuilt each round, never accumulated, and never overwrite true labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, mask_labels, split_leave_one_out
from .embedding import Encoder, TripletConfig, encode_array, train_embedding
from .errors import DegenerateDatasetError, UnfittedModelError
from .seqmodels import (
    KnnModel,
    RnnConfig,
    crf_marginals,
    crf_train,
    crf_viterbi,
    greedy_state_label_map,
    hmm_em_fit,
    hmm_forward_backward,
    hmm_viterbi,
    hsmm_em_fit,
    hsmm_viterbi,
    knn_predict_batch,
    rnn_predict_sequence,
    rnn_train,
)
from .seqmodels.hsmm import hsmm_posteriors
from .seqmodels.state_map import apply_state_map

SEQ_MODELS = ("knn", "hmm", "hsmm", "crf", "rnn")
LOSS_MODES = ("triplet", "npairs", "triplet_tcn", "svtcn")


@dataclass
class PseudoLabel:
    demo_id: str
    frame_index: int
    label: int
    confidence: float


@dataclass
class PipelineConfig:
    rounds: int = 3
    top_k: int = 100  # frames kept per class per round
    stride: int = 64
    loss_mode: str = "triplet"
    seq_model: str = "rnn"
    labeled_fraction: float = 1.0
    seed: int = 0
    val_index: int = 0
    early_stop_tol: float = 0.002
    # embedding
    margin: float = 0.2
    batch_size: int = 128
    pos_window: int = 6
    neg_window: int = 12
    embed_dim: int = 32
    encoder_hidden: tuple = (256, 64)
    embed_epochs: int = 20
    embed_lr: float = 1e-3
    # sequence models
    rnn_hidden: int = 256
    rnn_epochs: int = 30
    rnn_lr: float = 1e-2
    rnn_batch: int = 8
    hmm_states: int = 30
    em_iterations: int = 10
    d_max: int = 60
    crf_basis: int = 32
    crf_iterations: int = 50
    knn_k: int = 5

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.seq_model not in SEQ_MODELS:
            raise ValueError(f"unknown sequence model {self.seq_model!r}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")

    def triplet_config(self) -> TripletConfig:
        sampling = "time_contrastive" if self.loss_mode == "svtcn" else "supervised_segment"
        return TripletConfig(
            margin=self.margin,
            batch_size=self.batch_size,
            sampling=sampling,
            pos_window=self.pos_window,
            neg_window=self.neg_window,
        )


@dataclass
class SegmenterBundle:
    """A trained sequence model plus whatever it needs to emit labels."""

    kind: str
    model: object
    state_map: dict | None = None
    use_viterbi: bool = True


# ---------------------------------------------------------------------------
# encoder pretraining and sequence-model fitting


def pretrain_encoder(dataset: Dataset, config: PipelineConfig, seed: int | None = None):
    """Train the encoder on true labels only; returns (Encoder, loss trace)."""
    labeled = dataset.labeled_demos()
    if config.loss_mode != "svtcn":
        if not labeled:
            raise DegenerateDatasetError("pretraining needs at least one labeled demo")
        distinct = set()
        for demo in labeled:
            distinct.update(np.unique(demo.labels).tolist())
        if len(distinct) < 2:
            raise DegenerateDatasetError("pretraining needs >= 2 distinct labels")
    return train_embedding(
        dataset,
        config.triplet_config(),
        epochs=config.embed_epochs,
        seed=config.seed if seed is None else seed,
        loss_mode=config.loss_mode,
        dim=config.embed_dim,
        hidden=config.encoder_hidden,
        lr=config.embed_lr,
    )


def train_sequence_model(embed_fn, dataset: Dataset, config: PipelineConfig, seed: int,
                         kind: str | None = None) -> SegmenterBundle:
    """Fit the chosen segment model on embedded training demos.

    Supervised kinds (knn, crf, rnn) use the labeled demos; hmm/hsmm fit
    unsupervised on every training demo and get a greedy state-label map
    from the labeled subset.
    """
    kind = kind or config.seq_model
    labeled = dataset.labeled_demos()
    if kind in ("knn", "crf", "rnn") and not labeled:
        raise DegenerateDatasetError(f"{kind} needs labeled demos")
    if kind == "knn":
        X = np.vstack([embed_fn(d.features) for d in labeled])
        y = np.concatenate([d.labels for d in labeled])
        return SegmenterBundle("knn", KnnModel(X, y, k=min(config.knn_k, X.shape[0])))
    if kind == "rnn":
        seqs = [embed_fn(d.features) for d in labeled]
        labs = [d.labels for d in labeled]
        rnn_config = RnnConfig(
            hidden=config.rnn_hidden, stride=config.stride,
            batch_size=config.rnn_batch, lr=config.rnn_lr,
        )
        rnn, _ = rnn_train(
            seqs, labs, dataset.num_classes, rnn_config, epochs=config.rnn_epochs, seed=seed
        )
        return SegmenterBundle("rnn", rnn)
    if kind == "crf":
        seqs = [(embed_fn(d.features), d.labels) for d in labeled]
        crf, _ = crf_train(
            seqs, dataset.num_classes, iterations=config.crf_iterations,
            num_basis=config.crf_basis, seed=seed,
        )
        return SegmenterBundle("crf", crf)
    if kind in ("hmm", "hsmm"):
        all_embedded = [embed_fn(d.features) for d in dataset.demos]
        total = sum(e.shape[0] for e in all_embedded)
        K = min(config.hmm_states, total)
        if kind == "hmm":
            model, _ = hmm_em_fit(all_embedded, K=K, iterations=config.em_iterations, seed=seed)
            decode = lambda E: hmm_viterbi(model, E)[0]
        else:
            model, _ = hsmm_em_fit(
                all_embedded, K=K, iterations=config.em_iterations, seed=seed, d_max=config.d_max
            )
            decode = lambda E: hsmm_viterbi(model, E)[0]
        paths, labels = [], []
        for demo in labeled:
            paths.append(decode(embed_fn(demo.features)))
            labels.append(demo.labels)
        mapping = greedy_state_label_map(paths, labels)
        return SegmenterBundle(kind, model, state_map=mapping)
    raise ValueError(f"unknown sequence model {kind!r}")


def predict_frames(bundle: SegmenterBundle, embedded) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (labels 1..C, confidences in (0, 1]) for one embedded demo."""
    E = np.atleast_2d(embedded)
    if bundle.kind == "knn":
        return knn_predict_batch(bundle.model, E)
    if bundle.kind == "rnn":
        return rnn_predict_sequence(bundle.model, E)
    if bundle.kind == "crf":
        labels = crf_viterbi(bundle.model, E)
        marg = crf_marginals(bundle.model, E)
        conf = marg[np.arange(E.shape[0]), labels - 1]
        return labels, conf
    if bundle.kind in ("hmm", "hsmm"):
        if bundle.kind == "hmm":
            gamma, _ = hmm_forward_backward(bundle.model, E)
            path, _ = hmm_viterbi(bundle.model, E)
        else:
            _, gamma, _, _, _ = hsmm_posteriors(bundle.model, E)
            path, _ = hsmm_viterbi(bundle.model, E)
        mapping = bundle.state_map
        classes = sorted(set(mapping.values()))
        label_post = np.zeros((E.shape[0], max(classes) + 1))
        for state, lab in mapping.items():
            label_post[:, lab] += gamma[:, state]
        if bundle.use_viterbi:
            labels = apply_state_map(mapping, path)
        else:
            labels = np.argmax(label_post[:, 1:], axis=1) + 1
        conf = label_post[np.arange(E.shape[0]), labels]
        conf = np.clip(conf, 1e-12, 1.0)
        return labels, conf
    raise ValueError(f"unknown bundle kind {bundle.kind!r}")


def evaluate_segmentation(embed_fn, bundle: SegmenterBundle, demos) -> float:
    """Frame accuracy against true (or hidden) labels, pooled over demos."""
    hits = total = 0
    for demo in demos:
        truth = demo.true_labels()
        if truth is None:
            continue
        pred, _ = predict_frames(bundle, embed_fn(demo.features))
        hits += int((pred == truth).sum())
        total += demo.num_frames
    if total == 0:
        raise DegenerateDatasetError("no ground-truth labels to evaluate against")
    return hits / total


# ---------------------------------------------------------------------------
# pseudo-labels


def infer_pseudo_labels(encoder: Encoder, bundle: SegmenterBundle, unlabeled_demos):
    """One PseudoLabel per unlabeled frame."""
    if not encoder.trained:
        raise UnfittedModelError("encoder has not been trained")
    if bundle is None:
        raise UnfittedModelError("sequence model has not been trained")
    out = []
    for demo in unlabeled_demos:
        labels, conf = predict_frames(bundle, encode_array(encoder, demo.features))
        for t in range(demo.num_frames):
            out.append(
                PseudoLabel(
                    demo_id=demo.demo_id,
                    frame_index=t,
                    label=int(labels[t]),
                    confidence=float(conf[t]),
                )
            )
    return out


def select_top_k(pseudo_labels, k: int):
    """Keep the k most confident frames per class; ties break on (demo, frame)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    by_class: dict[int, list[PseudoLabel]] = {}
    for p in pseudo_labels:
        by_class.setdefault(p.label, []).append(p)
    kept = []
    for label in sorted(by_class):
        ranked = sorted(
            by_class[label], key=lambda p: (-p.confidence, p.demo_id, p.frame_index)
        )
        kept.extend(ranked[:k])
    return kept


def _pseudo_to_extra_labels(pseudo_labels) -> dict:
    extra: dict[str, dict[int, int]] = {}
    for p in pseudo_labels:
        extra.setdefault(p.demo_id, {})[p.frame_index] = p.label
    return extra


# ---------------------------------------------------------------------------
# the alternation loop


@dataclass
class RoundMetrics:
    round: int
    embed_loss: float
    train_acc: float
    val_acc: float
    n_pseudo: int = 0


def run_alternation(dataset: Dataset, config: PipelineConfig):
    """Full semi-supervised loop; returns (encoder, bundle, [RoundMetrics...]).

    The dataset is masked to config.labeled_fraction (whole demos) when the
    fraction is below 1, then split leave-one-out for validation. Stops
    early once validation accuracy improves by less than early_stop_tol.
    """
    if config.labeled_fraction < 1.0:
        dataset = mask_labels(dataset, config.labeled_fraction, config.seed)
    train, val = split_leave_one_out(dataset, config.val_index)
    rng = np.random.default_rng(config.seed)

    def embed_fn_for(encoder):
        return lambda F: encode_array(encoder, F)

    trace: list[RoundMetrics] = []
    encoder = bundle = None
    pseudo_kept: list[PseudoLabel] = []
    for round_idx in range(1, config.rounds + 1):
        embed_seed = int(rng.integers(2**32))
        seq_seed = int(rng.integers(2**32))
        if round_idx == 1:
            encoder, embed_trace = pretrain_encoder(train, config, seed=embed_seed)
        else:
            pseudo = infer_pseudo_labels(encoder, bundle, train.unlabeled_demos())
            pseudo_kept = select_top_k(pseudo, config.top_k)
            encoder, embed_trace = train_embedding(
                train,
                config.triplet_config(),
                epochs=config.embed_epochs,
                seed=embed_seed,
                loss_mode=config.loss_mode,
                dim=config.embed_dim,
                hidden=config.encoder_hidden,
                lr=config.embed_lr,
                extra_labels=_pseudo_to_extra_labels(pseudo_kept),
            )
        embed_fn = embed_fn_for(encoder)
        bundle = train_sequence_model(embed_fn, train, config, seed=seq_seed)
        train_acc = evaluate_segmentation(embed_fn, bundle, train.labeled_demos())
        val_acc = evaluate_segmentation(embed_fn, bundle, val.demos)
        trace.append(
            RoundMetrics(
                round=round_idx,
                embed_loss=float(np.mean(embed_trace)) if embed_trace else 0.0,
                train_acc=train_acc,
                val_acc=val_acc,
                n_pseudo=len(pseudo_kept),
            )
        )
        if not train.unlabeled_demos():
            break  # nothing to pseudo-label, later rounds would be identical
        if round_idx >= 2 and trace[-1].val_acc - trace[-2].val_acc < config.early_stop_tol:
            break
    return encoder, bundle, trace
