"""Batch selection strategies.

All strategies return exactly `batch_size` distinct ids from the unlabeled
pool, break score ties toward the lowest id, and see nothing but geometry,
scores or ids — never ground-truth labels. Distances are plain Euclidean.

The centroid-penalized strategy scores a candidate u as

    min distance to (labeled + already picked)  -  lambda * min distance to a centroid

and greedily takes the argmax, adding each pick to the distance pool before
the next. The plain farthest-point baseline is implemented independently (no
shared selection loop) so the two can be cross-checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

STRATEGIES = ("altl", "coreset", "maxentropy", "random")


class AcquisitionError(ValueError):
    pass


@dataclass
class AcquisitionConfig:
    strategy: str = "altl"
    lam: float = 0.1
    batch_size: int = 10
    seed: int = 0

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise AcquisitionError(f"unknown strategy {self.strategy!r}")
        if self.batch_size < 1:
            raise AcquisitionError("batch_size must be >= 1")
        if self.lam < 0:
            raise AcquisitionError("lambda must be >= 0")
        return self


def _euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances, rows of `a` against rows of `b`."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise AcquisitionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq = (a * a).sum(axis=1)[:, None] - 2.0 * (a @ b.T) + (b * b).sum(axis=1)[None, :]
    return np.sqrt(np.maximum(sq, 0.0))


def _by_id_order(ids, feats):
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    return [ids[i] for i in order], np.asarray(feats, dtype=np.float64)[order]


def select_batch_altl(
    features_labeled,
    unlabeled_ids,
    features_unlabeled,
    centroid_vectors,
    config: AcquisitionConfig,
) -> list[str]:
    config.validate()
    b = config.batch_size
    if len(unlabeled_ids) < b:
        raise AcquisitionError(f"need at least {b} unlabeled points, have {len(unlabeled_ids)}")
    cents = np.atleast_2d(np.asarray(centroid_vectors, dtype=np.float64))
    if cents.shape[0] == 0:
        raise AcquisitionError("empty centroid list")
    labeled = np.atleast_2d(np.asarray(features_labeled, dtype=np.float64))
    if labeled.shape[0] == 0:
        raise AcquisitionError("need at least one labeled point")

    ids, feats = _by_id_order(unlabeled_ids, features_unlabeled)
    min_labeled = _euclidean(feats, labeled).min(axis=1)
    min_centroid = _euclidean(feats, cents).min(axis=1)

    alive = np.ones(len(ids), dtype=bool)
    picked: list[str] = []
    for _ in range(b):
        score = min_labeled - config.lam * min_centroid
        score[~alive] = -np.inf
        u = int(np.argmax(score))  # first max = lowest id (ids sorted)
        picked.append(ids[u])
        alive[u] = False
        d_new = _euclidean(feats, feats[u : u + 1])[:, 0]
        min_labeled = np.minimum(min_labeled, d_new)
    return picked


def select_batch_coreset(
    features_labeled,
    unlabeled_ids,
    features_unlabeled,
    config: AcquisitionConfig,
) -> list[str]:
    """Greedy k-center: repeatedly take the point farthest from everything
    labeled or already picked."""
    config.validate()
    b = config.batch_size
    if len(unlabeled_ids) < b:
        raise AcquisitionError(f"need at least {b} unlabeled points, have {len(unlabeled_ids)}")
    labeled = np.atleast_2d(np.asarray(features_labeled, dtype=np.float64))
    if labeled.shape[0] == 0:
        raise AcquisitionError("need at least one labeled point")

    ids, feats = _by_id_order(unlabeled_ids, features_unlabeled)
    min_dist = _euclidean(feats, labeled).min(axis=1)
    taken = np.zeros(len(ids), dtype=bool)
    picked: list[str] = []
    for _ in range(b):
        candidate_dist = np.where(taken, -np.inf, min_dist)
        u = int(np.argmax(candidate_dist))
        picked.append(ids[u])
        taken[u] = True
        min_dist = np.minimum(min_dist, _euclidean(feats, feats[u : u + 1])[:, 0])
    return picked


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def select_batch_maxentropy(unlabeled_ids, score_vectors, config: AcquisitionConfig) -> list[str]:
    config.validate()
    b = config.batch_size
    if len(unlabeled_ids) < b:
        raise AcquisitionError(f"need at least {b} unlabeled points, have {len(unlabeled_ids)}")
    if len(unlabeled_ids) != len(score_vectors):
        raise AcquisitionError("ids and score vectors differ in length")
    entropies = []
    for ex_id, raw in zip(unlabeled_ids, score_vectors):
        p = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(p)) or p.min() < 0 or abs(p.sum() - 1.0) > 1e-6:
            raise AcquisitionError(f"invalid probability vector for id {ex_id!r}")
        entropies.append((ex_id, entropy(p)))
    ranked = sorted(entropies, key=lambda t: (-t[1], t[0]))
    return [ex_id for ex_id, _ in ranked[:b]]


def select_batch_random(unlabeled_ids, config: AcquisitionConfig) -> list[str]:
    config.validate()
    b = config.batch_size
    if len(unlabeled_ids) < b:
        raise AcquisitionError(f"need at least {b} unlabeled points, have {len(unlabeled_ids)}")
    ids = sorted(unlabeled_ids)
    rng = stream(config.seed, "strategy")
    picked = rng.choice(len(ids), size=b, replace=False)
    return [ids[i] for i in picked]
