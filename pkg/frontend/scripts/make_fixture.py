"""Build a small synthetic manifest + pipeline state dir for the UI e2e test.

Usage: python3 make_fixture.py <workdir>
Writes <workdir>/data/manifest.jsonl and <workdir>/state/state.json, then
prints the state directory path.  Serve it with:
    canon9d serve --state <workdir>/state --port <port>
"""

import json
import sys
from pathlib import Path

import numpy as np

from canon9d.core import FeaturedSurface, SimilarityTransform, apply_transform
from canon9d.ingest import write_fpc
from canon9d.pipeline import PipelineState


def main() -> None:
    workdir = Path(sys.argv[1])
    data = workdir / "data"
    data.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(99)
    n, dim = 96, 16

    verts = rng.normal(size=(n, 3))
    proj = rng.normal(size=(3, dim))
    feats = verts @ proj
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    base = FeaturedSurface(
        vertices=verts.astype(np.float32),
        features=[f.reshape(1, -1).astype(np.float32) for f in feats],
        feature_dim=dim)

    entries = []

    def add(oid, surface):
        write_fpc(surface, data / f"{oid}.fpc")
        entries.append({"object_id": oid, "surface": f"{oid}.fpc"})

    add("ref00", base)
    for i in range(5):
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        t = SimilarityTransform(q, rng.normal(size=3), rng.uniform(0.7, 1.3))
        inst = FeaturedSurface(
            vertices=apply_transform(t, base.vertices).astype(np.float32),
            features=base.features, feature_dim=dim)
        add(f"mem{i:02d}", inst)

    manifest = data / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(e) + "\n" for e in entries))

    state = PipelineState(str(manifest), str(workdir / "state"))
    state.save()
    print(workdir / "state")


if __name__ == "__main__":
    main()
