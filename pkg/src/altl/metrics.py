"""Ranking and set metrics for multi-label evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class MetricsRecord:
    iteration: int
    n_labeled: int
    lrap: float
    f1_micro: float
    f1_macro: float
    labels_discovered: int


def lrap(true_sets, score_vectors) -> float:
    """Label ranking average precision.

    For every true label j of a sample, the fraction of labels scored >= s_j
    that are themselves true, averaged over the sample's true labels and then
    over samples. Ties count on both sides of the ratio.
    """
    if len(true_sets) != len(score_vectors):
        raise MetricsError("true_sets and score_vectors differ in length")
    if not true_sets:
        raise MetricsError("no samples")
    total = 0.0
    for labels, raw in zip(true_sets, score_vectors):
        if not labels:
            raise MetricsError("empty true label set")
        s = np.asarray(raw, dtype=np.float64)
        idx = np.fromiter(labels, dtype=np.int64)
        ge = s[None, :] >= s[idx, None]  # ge[a, k]: s_k >= s_{j_a}
        among_true = ge[:, idx].sum(axis=1)
        among_all = ge.sum(axis=1)
        total += float((among_true / among_all).mean())
    return total / len(true_sets)


def f1(true_sets, predicted_sets, averaging: str = "micro") -> float:
    """Micro: pooled TP/FP/FN over all (sample, label) pairs. Macro: mean of
    per-label F1 over labels that occur in truth or prediction."""
    if len(true_sets) != len(predicted_sets):
        raise MetricsError("true_sets and predicted_sets differ in length")
    if averaging not in ("micro", "macro"):
        raise MetricsError(f"unknown averaging {averaging!r}")
    if averaging == "micro":
        tp = fp = fn = 0
        for t, p in zip(true_sets, predicted_sets):
            t, p = set(t), set(p)
            tp += len(t & p)
            fp += len(p - t)
            fn += len(t - p)
        return _f1_from_counts(tp, fp, fn)
    seen: set[int] = set()
    for t, p in zip(true_sets, predicted_sets):
        seen |= set(t) | set(p)
    if not seen:
        return 0.0
    per_label = []
    for j in sorted(seen):
        tp = fp = fn = 0
        for t, p in zip(true_sets, predicted_sets):
            hit_t, hit_p = j in t, j in p
            tp += hit_t and hit_p
            fp += hit_p and not hit_t
            fn += hit_t and not hit_p
        per_label.append(_f1_from_counts(tp, fp, fn))
    return float(np.mean(per_label))


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def labels_discovered(examples) -> int:
    """Distinct labels present across the (labeled) examples."""
    found: set[int] = set()
    for ex in examples:
        if ex.labels is None:
            raise MetricsError(f"example {ex.id!r} is unlabeled")
        found |= ex.labels
    return len(found)
