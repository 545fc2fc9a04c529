"""Behavior-cloned pose decoding from frozen embeddings.

The decoder regresses a 16-dim two-arm target per frame: position (3),
quaternion (4) and jaw angle (1) for the left then right arm. The loss
blends a squared-error term over positions and jaws (normalized by the
full 16-dim width) with a quaternion cosine term 1 - |<q, q_hat>|, which
makes it exactly invariant to quaternion sign flips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .data import POSE_DIM
from .embedding import Encoder, encode_array
from .errors import ShapeError
from .numerics import MlpParams, init_mlp, mlp_backward, mlp_forward

QUAT_SLICES = (slice(3, 7), slice(11, 15))
MSE_DIMS = np.asarray([0, 1, 2, 7, 8, 9, 10, 15])
SCOPES = ("pooled", "per_demonstrator")


@dataclass
class EndEffectorPose:
    left_position: np.ndarray
    left_quaternion: np.ndarray
    left_jaw: float
    right_position: np.ndarray
    right_quaternion: np.ndarray
    right_jaw: float

    def __post_init__(self):
        self.left_position = np.asarray(self.left_position, dtype=np.float64)
        self.right_position = np.asarray(self.right_position, dtype=np.float64)
        self.left_quaternion = np.asarray(self.left_quaternion, dtype=np.float64)
        self.right_quaternion = np.asarray(self.right_quaternion, dtype=np.float64)
        for q in (self.left_quaternion, self.right_quaternion):
            if abs(np.linalg.norm(q) - 1.0) > 1e-9:
                raise ValueError("pose quaternions must be unit norm within 1e-9")

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.left_position, self.left_quaternion, [self.left_jaw],
                self.right_position, self.right_quaternion, [self.right_jaw],
            ]
        )

    @staticmethod
    def from_vector(vec) -> "EndEffectorPose":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (POSE_DIM,):
            raise ShapeError(f"pose vector must have {POSE_DIM} entries")
        return EndEffectorPose(
            left_position=vec[0:3], left_quaternion=vec[3:7], left_jaw=float(vec[7]),
            right_position=vec[8:11], right_quaternion=vec[11:15], right_jaw=float(vec[15]),
        )


def pose_loss_batch(pred, truth, w_pos: float):
    """Mean pose loss over (B, 16) raw predictions; returns (loss, grad_pred).

    Predicted quaternions are renormalized before the cosine term (a zero
    quaternion falls back to the fixed basis vector, gradient zero there).
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape or pred.shape[1] != POSE_DIM:
        raise ShapeError("pose arrays must both be (B, 16)")
    B = pred.shape[0]
    grad = np.zeros_like(pred)

    resid = pred[:, MSE_DIMS] - truth[:, MSE_DIMS]
    mse = float(np.sum(resid**2)) / (POSE_DIM * B)
    grad[:, MSE_DIMS] = w_pos * 2.0 * resid / (POSE_DIM * B)

    orient = 0.0
    for sl in QUAT_SLICES:
        raw = pred[:, sl]
        q = truth[:, sl]
        qhat = numerics.l2_normalize_rows(raw)
        dots = np.sum(qhat * q, axis=1)
        orient += float(np.mean(1.0 - np.abs(dots))) / 2.0
        g_qhat = -np.sign(dots)[:, None] * q / (2.0 * B)
        grad[:, sl] += (1.0 - w_pos) * numerics.l2_normalize_rows_backward(raw, g_qhat)

    loss = w_pos * mse + (1.0 - w_pos) * orient
    return loss, grad


def pose_loss(pred: EndEffectorPose, truth: EndEffectorPose, w_pos: float = 0.5):
    """Loss between two poses; returns (loss, gradient w.r.t. the 16-dim pred vector)."""
    loss, grad = pose_loss_batch(pred.to_vector()[None, :], truth.to_vector()[None, :], w_pos)
    return loss, grad[0]


@dataclass
class PoseDecoder:
    mlp: MlpParams
    w_pos: float = 0.5
    scope: str = "pooled"

    def __post_init__(self):
        if self.mlp.out_dim != POSE_DIM:
            raise ShapeError(f"pose decoder must emit {POSE_DIM} values")
        if not (0.0 <= self.w_pos <= 1.0):
            raise ValueError("w_pos must lie in [0, 1]")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")


def new_pose_decoder(
    embed_dim: int, hidden=(512, 256, 128, 64, 32, 16), w_pos=0.5, scope="pooled", seed=0
) -> PoseDecoder:
    mlp = init_mlp([embed_dim, *hidden, POSE_DIM], rng=np.random.default_rng(seed))
    return PoseDecoder(mlp=mlp, w_pos=w_pos, scope=scope)


def decode_pose(decoder: PoseDecoder, embedding_rows) -> np.ndarray:
    """(T, 16) raw decoder outputs with quaternions renormalized."""
    out, _ = mlp_forward(decoder.mlp, np.atleast_2d(embedding_rows))
    out = out.copy()
    for sl in QUAT_SLICES:
        out[:, sl] = numerics.l2_normalize_rows(out[:, sl])
    return out


def train_pose_decoder(
    encoder: Encoder,
    demos,
    scope: str = "pooled",
    epochs: int = 200,
    seed: int = 0,
    hidden=(512, 256, 128, 64, 32, 16),
    w_pos: float = 0.5,
    lr: float = 1e-3,
    batch_size: int = 64,
):
    """Train decoder(s) on frozen embeddings.

    Returns a PoseDecoder for scope "pooled" or {demonstrator_id: PoseDecoder}
    for scope "per_demonstrator". The encoder is only read, never written.
    """
    demos = list(demos)
    if any(d.poses is None for d in demos):
        raise ValueError("every training demo needs pose ground truth")
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    rng = np.random.default_rng(seed)
    if scope == "pooled":
        return _train_one(encoder, demos, epochs, rng, hidden, w_pos, lr, batch_size, scope)
    decoders = {}
    groups: dict[str, list] = {}
    for demo in demos:
        groups.setdefault(demo.demonstrator_id, []).append(demo)
    for demonstrator in sorted(groups):
        decoders[demonstrator] = _train_one(
            encoder, groups[demonstrator], epochs, rng, hidden, w_pos, lr, batch_size, scope
        )
    return decoders


def _train_one(encoder, demos, epochs, rng, hidden, w_pos, lr, batch_size, scope):
    X = np.vstack([encode_array(encoder, d.features) for d in demos])
    Y = np.vstack([d.poses for d in demos])
    decoder = new_pose_decoder(
        X.shape[1], hidden=hidden, w_pos=w_pos, scope=scope, seed=int(rng.integers(2**32))
    )
    params = decoder.mlp.param_arrays()
    opt = numerics.make_optimizer(params, "adam", lr=lr)
    n = X.shape[0]
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            out, cache = mlp_forward(decoder.mlp, X[idx])
            _, grad_out = pose_loss_batch(out, Y[idx], w_pos)
            grads, _ = mlp_backward(decoder.mlp, cache, grad_out)
            numerics.optimizer_step(params, numerics.grads_to_arrays(grads), opt)
    return decoder


def eval_pose(decoders, encoder: Encoder, test_demos, noise_sigma: float = 0.0, seed: int = 0):
    """Position RMSE (cm, pooled over arms and axes) and median per-frame quaternion loss.

    noise_sigma > 0 adds i.i.d. Gaussian noise to the frame features before
    encoding; zero noise evaluates the features bit-exactly as stored.
    decoders is a single pooled PoseDecoder or {demonstrator_id: PoseDecoder}.
    """
    test_demos = list(test_demos)
    if not test_demos:
        raise ValueError("empty test set")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    sq_sum = 0.0
    n_pos = 0
    quat_losses = []
    for demo in test_demos:
        if demo.poses is None:
            raise ValueError(f"demo {demo.demo_id} lacks poses")
        feats = demo.features
        if noise_sigma > 0:
            feats = feats + rng.normal(0.0, noise_sigma, size=feats.shape)
        E = encode_array(encoder, feats)
        decoder = decoders[demo.demonstrator_id] if isinstance(decoders, dict) else decoders
        pred = decode_pose(decoder, E)
        for pos_sl in (slice(0, 3), slice(8, 11)):
            resid = pred[:, pos_sl] - demo.poses[:, pos_sl]
            sq_sum += float(np.sum(resid**2))
            n_pos += resid.size
        frame_losses = np.zeros(demo.num_frames)
        for sl in QUAT_SLICES:
            dots = np.abs(np.sum(pred[:, sl] * demo.poses[:, sl], axis=1))
            frame_losses += (1.0 - dots) / 2.0
        quat_losses.append(frame_losses)
    return {
        "rmse_position_cm": float(np.sqrt(sq_sum / n_pos)),
        "median_cosine_quat_loss": float(np.median(np.concatenate(quat_losses))),
    }


def trajectory_rows(decoders, encoder: Encoder, demos) -> list[tuple]:
    """Plot-ready rows (demo_id, frame, 16 predicted pose values)."""
    rows = []
    for demo in demos:
        E = encode_array(encoder, demo.features)
        decoder = decoders[demo.demonstrator_id] if isinstance(decoders, dict) else decoders
        pred = decode_pose(decoder, E)
        for t in range(demo.num_frames):
            rows.append((demo.demo_id, t, *pred[t].tolist()))
    return rows
