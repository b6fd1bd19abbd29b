import json

import numpy as np
import pytest

from canon9d import ingest
from canon9d.core import FeaturedSurface, SimilarityTransform, apply_transform


def random_rotation(rng):
    """Uniform random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def unit_rows(rng, n, dim):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_surface(rng, n=32, dim=8, feats_per_vertex=(1, 3), spread=1.0):
    """Random featured surface; float32 throughout so FPC round trips are
    bit-exact."""
    verts = rng.normal(scale=spread, size=(n, 3)).astype(np.float32)
    lo, hi = feats_per_vertex
    features = [
        unit_rows(rng, rng.integers(lo, hi + 1), dim).astype(np.float32)
        for _ in range(n)
    ]
    return FeaturedSurface(vertices=verts, features=features, feature_dim=dim)


def featured_blob(rng, n=256, dim=16, regions=8):
    """Surface whose features identify both a coarse region and the exact
    point: region one-hot plus a fixed random projection of position."""
    verts = rng.normal(size=(n, 3))
    proj = rng.normal(size=(3, dim - regions))
    region = ((verts[:, 0] > 0).astype(int) * 4
              + (verts[:, 1] > 0).astype(int) * 2
              + (verts[:, 2] > 0).astype(int)) % regions
    onehot = np.eye(regions)[region]
    raw = np.concatenate([onehot * 2.0, verts @ proj], axis=1)
    feats = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return FeaturedSurface(
        vertices=verts.astype(np.float32),
        features=[f.reshape(1, -1).astype(np.float32) for f in feats],
        feature_dim=dim,
    )


def cluster_surface(rng, cluster_index, n=96, dim=16, onehot_slots=4):
    """Featured surface whose embedding identifies its cluster and whose
    per-point features identify exact correspondences."""
    verts = rng.normal(size=(n, 3))
    proj = rng.normal(size=(3, dim - onehot_slots))
    onehot = np.zeros((n, onehot_slots))
    onehot[:, cluster_index % onehot_slots] = 2.0
    raw = np.concatenate([onehot, verts @ proj], axis=1)
    feats = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return FeaturedSurface(
        vertices=verts.astype(np.float32),
        features=[f.reshape(1, -1).astype(np.float32) for f in feats],
        feature_dim=dim)


def transformed_instance(surface, rng, scale_range=(0.7, 1.4), noise=0.0,
                         dropout=0.0):
    """Random Sim(3) copy of a surface, optionally noised and subsampled;
    returns (instance, transform applied to the base vertices)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    t = SimilarityTransform(q, rng.normal(size=3), rng.uniform(*scale_range))
    verts = apply_transform(t, surface.vertices)
    if noise > 0:
        extent = float(np.mean(np.ptp(surface.vertices, axis=0)))
        verts = verts + rng.normal(scale=noise * extent * t.scale,
                                   size=verts.shape)
    keep = np.arange(len(verts))
    if dropout > 0:
        keep = np.sort(rng.permutation(len(verts))[
            :int(round((1.0 - dropout) * len(verts)))])
    return FeaturedSurface(
        vertices=verts[keep].astype(np.float32),
        features=[surface.features[i] for i in keep],
        feature_dim=surface.feature_dim), t


def build_dataset(root, rng, clusters=2, per_cluster=5, odd_in_cluster=None,
                  n=96, noise=0.0, dropout_max=0.0, scale_range=(0.7, 1.4)):
    """Write fpc surfaces and a manifest under root.

    Returns (manifest_path, membership, transforms) where transforms maps
    object_id -> the planted base->instance SimilarityTransform (identity for
    each cluster's first object).
    """
    root.mkdir(parents=True, exist_ok=True)
    membership, transforms = {}, {}
    entries = []

    def add(oid, surface):
        ingest.write_fpc(surface, root / f"{oid}.fpc")
        entries.append({"object_id": oid, "surface": f"{oid}.fpc"})

    for c in range(clusters):
        base = cluster_surface(rng, c, n=n)
        for i in range(per_cluster):
            oid = f"c{c}_obj{i:02d}"
            if i == 0:
                add(oid, base)
                transforms[oid] = SimilarityTransform.identity()
            else:
                inst, t = transformed_instance(
                    base, rng, scale_range=scale_range, noise=noise,
                    dropout=rng.uniform(0.0, dropout_max) if dropout_max else 0.0)
                add(oid, inst)
                transforms[oid] = t
            membership[oid] = c
        if odd_in_cluster == c:
            oid = f"c{c}_odd"
            add(oid, cluster_surface(rng, c, n=n))  # unrelated geometry
            membership[oid] = c
            transforms[oid] = SimilarityTransform.identity()
    manifest = root / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    return manifest, membership, transforms


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
