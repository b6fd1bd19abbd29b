"""End-to-end canonicalization pipeline on a synthetic manifest.

Generates two families of objects (20 Sim(3) copies of two base shapes),
writes them as an FPC manifest, and runs cluster -> reference -> align ->
verify in unattended auto-verify mode.  The resulting state directory can be
served to the annotation UI with `canon9d serve --state <dir>`.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from canon9d.core import FeaturedSurface, SimilarityTransform, apply_transform
from canon9d.ingest import write_fpc
from canon9d.pipeline import Pipeline, PipelineConfig, PipelineState, summarize

rng = np.random.default_rng(4)
workdir = Path(tempfile.mkdtemp(prefix="canon9d_demo_"))
n, dim = 256, 16


def base_shape(signature):
    verts = rng.normal(size=(n, 3))
    proj = rng.normal(size=(3, dim - 2))
    onehot = np.zeros((n, 2))
    onehot[:, signature] = 2.0
    feats = np.concatenate([onehot, verts @ proj], axis=1)
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    return FeaturedSurface(
        vertices=verts.astype(np.float32),
        features=[f.reshape(1, -1).astype(np.float32) for f in feats],
        feature_dim=dim)


entries = []
for family in range(2):
    base = base_shape(family)
    for i in range(10):
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        t = SimilarityTransform(q, rng.normal(size=3), rng.uniform(0.6, 1.6))
        inst = FeaturedSurface(
            vertices=apply_transform(t, base.vertices).astype(np.float32),
            features=base.features, feature_dim=dim)
        oid = f"fam{family}_inst{i:02d}"
        write_fpc(inst, workdir / f"{oid}.fpc")
        entries.append({"object_id": oid, "surface": f"{oid}.fpc"})

manifest = workdir / "manifest.jsonl"
manifest.write_text("".join(json.dumps(e) + "\n" for e in entries))

state = PipelineState(str(manifest), str(workdir / "state"))
config = PipelineConfig(seed=0, k=2, auto_verify=True)
Pipeline(state, config).run()

summary = summarize(state)
print("state dir:", workdir / "state")
print("status counts:", summary["status_counts"])
for it, row in summary["iterations"].items():
    print(f"iteration {it}: accept {row['accept_pct']}% "
          f"skip {row['skip_pct']}% filter {row['filter_pct']}%")
print("canonical poses stored:", len(state.canonical))
