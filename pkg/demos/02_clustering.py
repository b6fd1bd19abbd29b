"""Spherical k-means over object embeddings and medoid reference selection.

Plants three tight clusters of unit vectors, recovers them with cosine
k-means, and picks each cluster's most central member as its reference.
"""

import numpy as np

from canon9d.cluster import ObjectEmbedding, kmeans_cosine, medoid

rng = np.random.default_rng(1)
dim, sizes = 16, [12, 9, 7]

centers = np.linalg.qr(rng.normal(size=(dim, dim)))[0][: len(sizes)]
embeddings, truth = [], []
for label, size in enumerate(sizes):
    for i in range(size):
        v = centers[label] + rng.normal(scale=0.02, size=dim)
        embeddings.append(ObjectEmbedding(f"obj{len(embeddings):03d}",
                                          v / np.linalg.norm(v)))
        truth.append(label)

clustering = kmeans_cosine(embeddings, k=3, seed=0)
print("objective history:", [round(x, 4) for x in clustering.objective_history])

by_cluster = {}
for e in embeddings:
    by_cluster.setdefault(clustering.assignments[e.object_id], []).append(e)
for c, members in sorted(by_cluster.items()):
    labels = {truth[int(e.object_id[3:])] for e in members}
    print(f"cluster {c}: {len(members)} members, planted labels {labels}, "
          f"medoid {medoid(members)}")
