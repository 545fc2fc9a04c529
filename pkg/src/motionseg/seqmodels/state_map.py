"""Greedy assignment of hidden states to segment labels by co-occurrence."""

from __future__ import annotations

import numpy as np


def greedy_state_label_map(state_paths, label_seqs) -> dict[int, int]:
    """Map each state to its majority co-occurring true label.

    state_paths and label_seqs align elementwise; label entries may be None
    (unlabeled sequences contribute nothing). States never seen alongside a
    label map to the globally most frequent label. Ties break toward the
    smaller label for determinism.
    """
    counts: dict[int, dict[int, int]] = {}
    global_counts: dict[int, int] = {}
    states_seen = set()
    for path, labels in zip(state_paths, label_seqs):
        path = np.asarray(path, dtype=np.int64)
        states_seen.update(int(s) for s in np.unique(path))
        if labels is None:
            continue
        labels = np.asarray(labels, dtype=np.int64)
        for s, lab in zip(path, labels):
            counts.setdefault(int(s), {}).setdefault(int(lab), 0)
            counts[int(s)][int(lab)] += 1
            global_counts[int(lab)] = global_counts.get(int(lab), 0) + 1
    if not global_counts:
        raise ValueError("no labeled frames available for the state-label map")
    fallback = max(sorted(global_counts), key=lambda lab: global_counts[lab])
    mapping = {}
    for s in sorted(states_seen):
        if s in counts:
            per = counts[s]
            mapping[s] = max(sorted(per), key=lambda lab: per[lab])
        else:
            mapping[s] = fallback
    return mapping


def apply_state_map(mapping: dict[int, int], path) -> np.ndarray:
    path = np.asarray(path, dtype=np.int64)
    return np.asarray([mapping[int(s)] for s in path], dtype=np.int64)
