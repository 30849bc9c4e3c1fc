"""Affinity propagation over latent features.

Exemplar clustering by responsibility/availability message passing with
damping. Similarity is negative squared Euclidean distance; the preference
(self-similarity) defaults to the median of the off-diagonal similarities.
No noise is ever added to the similarities and all argmax ties resolve to the
lowest index, so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class APConfig:
    damping: float = 0.5
    max_iterations: int = 200
    convergence_window: int = 15
    preference: float | None = None

    def validate(self):
        if not 0.5 <= self.damping < 1.0:
            raise ClusteringError(f"damping must be in [0.5, 1), got {self.damping}")
        if self.convergence_window < 1 or self.max_iterations < self.convergence_window:
            raise ClusteringError("need max_iterations >= convergence_window >= 1")
        return self


@dataclass
class ClusterResult:
    """Exemplars are point indices; assignment[i] is the exemplar index that
    point i belongs to (exemplars are assigned to themselves)."""

    exemplars: list[int]
    assignment: np.ndarray
    iterations_run: int
    converged: bool

    def n_clusters(self) -> int:
        return len(self.exemplars)

    def to_record(self) -> dict:
        return {
            "exemplars": [int(k) for k in self.exemplars],
            "assignment": [int(k) for k in self.assignment],
            "converged": bool(self.converged),
        }


def similarity_matrix(points: np.ndarray) -> np.ndarray:
    """Pairwise negative squared Euclidean distances (diagonal zeros)."""
    x = np.asarray(points, dtype=np.float64)
    sq = (x * x).sum(axis=1)
    s = 2.0 * (x @ x.T) - sq[:, None] - sq[None, :]
    np.fill_diagonal(s, 0.0)
    return s


def median_preference(s: np.ndarray) -> float:
    """Median of the off-diagonal similarities."""
    n = s.shape[0]
    off = s[~np.eye(n, dtype=bool)]
    return float(np.median(off))


def propagate(s: np.ndarray, config: APConfig) -> ClusterResult:
    """Run message passing on a prepared similarity matrix.

    The diagonal of `s` is overwritten with the preference, so whatever value
    it arrives with is irrelevant. Terminates once the exemplar set
    {k : r(k,k) + a(k,k) > 0} is unchanged for `convergence_window` iterations.
    """
    config.validate()
    s = np.array(s, dtype=np.float64)
    n = s.shape[0]
    if n == 1:
        return ClusterResult([0], np.zeros(1, dtype=np.int64), 0, True)

    pref = config.preference if config.preference is not None else median_preference(s)
    np.fill_diagonal(s, pref)

    damping = config.damping
    a = np.zeros((n, n))
    r = np.zeros((n, n))
    tmp = np.empty((n, n))
    ind = np.arange(n)
    step = n + 1  # flat stride that walks the diagonal

    window: list[tuple[int, ...]] = []
    converged = False
    iterations = 0
    for it in range(config.max_iterations):
        # responsibilities: r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
        np.add(a, s, out=tmp)
        top = np.argmax(tmp, axis=1)
        best = tmp[ind, top].copy()
        tmp[ind, top] = -np.inf
        second = tmp.max(axis=1)
        np.subtract(s, best[:, None], out=tmp)
        tmp[ind, top] = s[ind, top] - second
        r *= damping
        tmp *= 1.0 - damping
        r += tmp

        # availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
        np.maximum(r, 0.0, out=tmp)
        tmp.flat[::step] = r.flat[::step]
        col = tmp.sum(axis=0)
        np.subtract(col[None, :], tmp, out=tmp)
        diag_new = tmp.flat[::step].copy()  # col - r(k,k) = sum of clipped r over i' != k
        np.minimum(tmp, 0.0, out=tmp)
        tmp.flat[::step] = diag_new
        a *= damping
        tmp *= 1.0 - damping
        a += tmp

        iterations = it + 1
        exemplar_set = tuple(np.flatnonzero(a.flat[::step] + r.flat[::step] > 0))
        window.append(exemplar_set)
        if len(window) > config.convergence_window:
            window.pop(0)
        if (
            len(window) == config.convergence_window
            and len(set(window)) == 1
            and len(exemplar_set) > 0
        ):
            converged = True
            break

    exemplars = np.flatnonzero(np.diag(a) + np.diag(r) > 0)
    if exemplars.size == 0:
        # keep 1 <= p <= n even on non-convergence: strongest self-evidence wins
        exemplars = np.array([int(np.argmax(np.diag(a) + np.diag(r)))])
    c = np.argmax(s[:, exemplars], axis=1)
    c[exemplars] = np.arange(exemplars.size)
    assignment = exemplars[c]
    return ClusterResult([int(k) for k in exemplars], assignment, iterations, converged)


def affinity_propagation(points, config: APConfig | None = None) -> ClusterResult:
    """Cluster points; see `propagate` for the algorithm."""
    config = config or APConfig()
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ClusteringError("need a non-empty list of points")
    if not np.all(np.isfinite(x)):
        raise ClusteringError("points contain non-finite coordinates")
    return propagate(similarity_matrix(x), config)


def centroids(result: ClusterResult, points) -> np.ndarray:
    """The exemplar points themselves, as cluster representatives."""
    x = np.asarray(points, dtype=np.float64)
    for k in result.exemplars:
        if not 0 <= k < x.shape[0]:
            raise ClusteringError(f"exemplar index {k} out of range")
    return x[result.exemplars]
