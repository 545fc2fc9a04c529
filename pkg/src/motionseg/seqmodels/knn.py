"""k-nearest-neighbour labeling in the embedding space, fully deterministic.

Neighbours are ranked by (Euclidean distance, training index); vote ties
break by smallest summed distance, then smallest label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class KnnModel:
    train_points: np.ndarray  # (N, d)
    train_labels: np.ndarray  # (N,)
    k: int = 5

    def __post_init__(self):
        self.train_points = np.atleast_2d(np.asarray(self.train_points, dtype=np.float64))
        self.train_labels = np.asarray(self.train_labels, dtype=np.int64)
        if self.train_points.shape[0] == 0:
            raise ValueError("empty training set")
        if self.train_labels.shape != (self.train_points.shape[0],):
            raise ShapeError("labels must align with training points")
        if not (1 <= self.k <= self.train_points.shape[0]):
            raise ValueError(f"k={self.k} outside 1..{self.train_points.shape[0]}")


def _vote(distances, labels, k):
    order = np.lexsort((np.arange(distances.shape[0]), distances))[:k]
    near_labels = labels[order]
    near_dists = distances[order]
    best_label, best_votes, best_sum = -1, -1, np.inf
    for lab in np.unique(near_labels):
        mask = near_labels == lab
        votes = int(mask.sum())
        dist_sum = float(near_dists[mask].sum())
        if votes > best_votes or (
            votes == best_votes and (dist_sum < best_sum or (dist_sum == best_sum and lab < best_label))
        ):
            best_label, best_votes, best_sum = int(lab), votes, dist_sum
    return best_label, best_votes / k


def knn_predict(train_points, train_labels, query, k: int) -> int:
    """Majority label of the k nearest training points to one query vector."""
    model = KnnModel(train_points, train_labels, k)
    q = np.asarray(query, dtype=np.float64)
    distances = np.linalg.norm(model.train_points - q, axis=1)
    label, _ = _vote(distances, model.train_labels, model.k)
    return label


def knn_predict_batch(model: KnnModel, queries) -> tuple[np.ndarray, np.ndarray]:
    """Labels and vote-fraction confidences for (M, d) query rows."""
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d2 = (
        np.sum(Q**2, axis=1, keepdims=True)
        - 2.0 * Q @ model.train_points.T
        + np.sum(model.train_points**2, axis=1)
    )
    distances = np.sqrt(np.maximum(d2, 0.0))
    labels = np.empty(Q.shape[0], dtype=np.int64)
    conf = np.empty(Q.shape[0])
    for i in range(Q.shape[0]):
        labels[i], conf[i] = _vote(distances[i], model.train_labels, model.k)
    return labels, conf
