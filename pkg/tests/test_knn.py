from collections import Counter

import numpy as np
import pytest

from motionseg.seqmodels.knn import KnnModel, knn_predict, knn_predict_batch


def oracle_knn(train, labels, query, k):
    """Exhaustive scan with explicit (distance, index) sorting and tie rules."""
    dists = [(float(np.linalg.norm(t - query)), i) for i, t in enumerate(train)]
    dists.sort()
    near = dists[:k]
    votes = Counter(labels[i] for _, i in near)
    best = None
    for lab in sorted(votes):
        dist_sum = sum(d for d, i in near if labels[i] == lab)
        key = (-votes[lab], dist_sum, lab)
        if best is None or key < best[0]:
            best = (key, lab)
    return best[1]


def test_exact_training_point_with_k1():
    train = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    labels = np.array([3, 1, 2])
    assert knn_predict(train, labels, np.array([1.0, 1.0]), k=1) == 1


def test_global_majority_when_k_equals_train_size():
    train = np.array([[0.0], [1.0], [2.0], [10.0]])
    labels = np.array([5, 5, 5, 9])
    assert knn_predict(train, labels, np.array([4.0]), k=4) == 5


def test_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    train = rng.normal(size=(50, 3))
    labels = rng.integers(1, 5, size=50)
    for _ in range(40):
        q = rng.normal(size=3)
        assert knn_predict(train, labels, q, k=5) == oracle_knn(train, labels, q, 5)


def test_batch_agrees_with_single_and_reports_vote_fraction():
    rng = np.random.default_rng(1)
    train = rng.normal(size=(30, 2))
    labels = rng.integers(1, 4, size=30)
    model = KnnModel(train, labels, k=5)
    queries = rng.normal(size=(10, 2))
    batch_labels, conf = knn_predict_batch(model, queries)
    for i, q in enumerate(queries):
        assert batch_labels[i] == knn_predict(train, labels, q, k=5)
    assert ((conf > 0) & (conf <= 1)).all()
    assert np.all(conf >= 1 / 5 - 1e-12)


def test_vote_tie_breaks_by_summed_distance_then_label():
    # two votes each; label 2's neighbours are closer
    train = np.array([[0.0], [0.1], [5.0], [5.1]])
    labels = np.array([2, 2, 1, 1])
    assert knn_predict(train, labels, np.array([0.05]), k=4) == 2
    # perfectly symmetric: equal votes and sums, smaller label wins
    train = np.array([[-1.0], [1.0]])
    labels = np.array([4, 3])
    assert knn_predict(train, labels, np.array([0.0]), k=2) == 3


def test_k1_on_own_training_set_is_perfect():
    rng = np.random.default_rng(2)
    train = rng.normal(size=(40, 4))
    labels = rng.integers(1, 6, size=40)
    model = KnnModel(train, labels, k=1)
    pred, _ = knn_predict_batch(model, train)
    assert (pred == labels).all()


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        knn_predict(np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros(2), k=1)


def test_k_out_of_range_rejected():
    with pytest.raises(ValueError):
        knn_predict(np.zeros((3, 2)), np.array([1, 2, 3]), np.zeros(2), k=4)
