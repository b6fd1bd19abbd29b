"""Per-object embedding aggregation, spherical k-means and medoid selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusterError(Exception):
    pass


class EmptyInput(ClusterError):
    pass


class DegenerateMean(ClusterError):
    pass


class TooFewPoints(ClusterError):
    pass


class EmptyCluster(ClusterError):
    pass


@dataclass(frozen=True)
class ObjectEmbedding:
    object_id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).reshape(-1)
        object.__setattr__(self, "vector", v)
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("embedding must be unit-norm")


@dataclass
class Clustering:
    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    seed: int
    objective_history: list[float] = field(default_factory=list)

    def members(self, index: int) -> list[str]:
        return sorted(o for o, c in self.assignments.items() if c == index)


def aggregate_embedding(frame_features) -> np.ndarray:
    """Normalize each frame feature, average, renormalize the mean."""
    feats = [np.asarray(f, dtype=float).reshape(-1) for f in frame_features]
    if not feats:
        raise EmptyInput("no frame features")
    dim = feats[0].size
    if any(f.size != dim for f in feats):
        raise ValueError("inconsistent feature dimensions")
    stacked = np.stack(feats)
    norms = np.linalg.norm(stacked, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("zero-norm frame feature")
    mean = (stacked / norms).mean(axis=0)
    mean_norm = np.linalg.norm(mean)
    if mean_norm < 1e-8:
        raise DegenerateMean("frame features cancel out")
    return mean / mean_norm


def _kmeans_pp_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding under cosine distance."""
    n = len(vectors)
    centroids = np.empty((k, vectors.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = vectors[first]
    dist = 1.0 - vectors @ centroids[0]
    for i in range(1, k):
        d = np.clip(dist, 0.0, None)
        total = d.sum()
        if total < 1e-15:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d / total))
        centroids[i] = vectors[idx]
        dist = np.minimum(dist, 1.0 - vectors @ centroids[i])
    return centroids


def kmeans_cosine(embeddings: list[ObjectEmbedding], k: int, seed: int,
                  max_iters: int = 100) -> Clustering:
    """Spherical k-means: cosine-similarity assignment, renormalized-mean
    centroids, deterministic for a given seed."""
    n = len(embeddings)
    if k > n:
        raise TooFewPoints(f"k={k} exceeds number of embeddings ({n})")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(n), key=lambda i: embeddings[i].object_id)
    ids = [embeddings[i].object_id for i in order]
    vectors = np.stack([embeddings[i].vector for i in order])

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(vectors, k, rng)

    labels = np.full(n, -1, dtype=int)
    history: list[float] = []
    for _ in range(max_iters):
        sims = vectors @ centroids.T
        new_labels = np.argmax(sims, axis=1)

        # Empty-cluster repair: reseed at the point farthest from the centroid.
        for c in range(k):
            if not np.any(new_labels == c):
                far = int(np.argmin(vectors @ centroids[c]))
                centroids[c] = vectors[far]
                new_labels[far] = c

        for c in range(k):
            members = vectors[new_labels == c]
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-12:
                centroids[c] = mean / norm

        sims = vectors @ centroids.T
        history.append(float(np.sum(1.0 - sims[np.arange(n), new_labels])))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    return Clustering(
        k=k,
        assignments={oid: int(c) for oid, c in zip(ids, labels)},
        centroids=centroids,
        seed=seed,
        objective_history=history,
    )


def medoid(cluster_embeddings: list[ObjectEmbedding]) -> str:
    """Member with smallest mean cosine distance to all other members;
    ties broken by lexicographically smallest object_id."""
    if not cluster_embeddings:
        raise EmptyCluster("empty cluster")
    ordered = sorted(cluster_embeddings, key=lambda e: e.object_id)
    if len(ordered) == 1:
        return ordered[0].object_id
    vectors = np.stack([e.vector for e in ordered])
    dist = 1.0 - vectors @ vectors.T
    np.fill_diagonal(dist, 0.0)
    means = dist.sum(axis=1) / (len(ordered) - 1)
    return ordered[int(np.argmin(means))].object_id
