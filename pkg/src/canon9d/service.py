"""HTTP/JSON service driving the annotation and verification UI."""

from __future__ import annotations

import threading
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from canon9d import ingest
from canon9d.canonical import CanonicalPose, make_canonical_pose
from canon9d.core import Pose9D, SimilarityTransform, apply_transform, is_rotation
from canon9d.ingest import PoseRecord, Status, Verdict
from canon9d.pipeline import Pipeline, PipelineConfig, PipelineState, summarize

MAX_SURFACE_POINTS = 50_000

# (horizontal, vertical) canonical axes per view
VIEW_AXES = {"front": (0, 2), "top": (0, 1), "right": (1, 2)}


class PoseBody(BaseModel):
    rotation: list[float]
    translation: list[float]
    extents: list[float]
    annotator_id: str = ""
    cross_verified: bool = False


class VerdictBody(BaseModel):
    verdict: str
    reviewer_id: str = ""


def create_app(state: PipelineState, config: PipelineConfig) -> FastAPI:
    app = FastAPI(title="canon9d annotation service")
    pipeline = Pipeline(state, config)
    write_lock = threading.Lock()

    def get_record(object_id: str):
        record = state.records.get(object_id)
        if record is None:
            raise HTTPException(404, f"unknown object {object_id!r}")
        return record

    def current_canonical(object_id: str) -> CanonicalPose | None:
        if object_id in state.canonical:
            return state.canonical[object_id]
        entry = state.transforms.get(object_id)
        if entry is None:
            return None
        ref_pose = state.reference_poses.get(entry["reference"])
        if ref_pose is None:
            return None
        return make_canonical_pose(
            state.surface(object_id),
            SimilarityTransform.from_dict(entry["transform"]),
            ref_pose.pose,
            config.robust_quantile,
        )

    @app.get("/clusters")
    def clusters():
        try:
            with write_lock:
                pipeline.ensure_clusters()
        except Exception:
            pass  # nothing pending; report whatever state we have
        return [
            {
                "index": c.index,
                "medoid": c.medoid,
                "aligned": c.aligned,
                "members": [
                    {"object_id": oid, "status": state.status[oid].value}
                    for oid in c.members
                ],
            }
            for c in state.clusters
        ]

    @app.get("/objects/{object_id}/surface")
    def surface(object_id: str):
        get_record(object_id)
        s = state.surface(object_id)
        verts = s.vertices
        if len(verts) > MAX_SURFACE_POINTS:
            step = int(np.ceil(len(verts) / MAX_SURFACE_POINTS))
            verts = verts[::step]
        canonical = current_canonical(object_id)
        return {
            "object_id": object_id,
            "status": state.status[object_id].value,
            "vertices": verts.tolist(),
            "pose": canonical.to_dict() if canonical else None,
        }

    @app.get("/objects/{object_id}/views")
    def views(object_id: str):
        get_record(object_id)
        canonical = current_canonical(object_id)
        if canonical is None:
            raise HTTPException(404, f"object {object_id!r} has no propagated pose")
        pts = apply_transform(canonical.world_to_canonical,
                              state.surface(object_id).vertices)
        if len(pts) > MAX_SURFACE_POINTS:
            step = int(np.ceil(len(pts) / MAX_SURFACE_POINTS))
            pts = pts[::step]
        half = canonical.box.extents / 2.0
        center = canonical.box.translation
        out = {}
        for name, (h, v) in VIEW_AXES.items():
            rect = [
                [center[h] - half[h], center[v] - half[v]],
                [center[h] + half[h], center[v] - half[v]],
                [center[h] + half[h], center[v] + half[v]],
                [center[h] - half[h], center[v] + half[v]],
            ]
            out[name] = {
                "points": pts[:, [h, v]].tolist(),
                "box_outline": rect,
            }
        return out

    @app.post("/objects/{object_id}/pose")
    def post_pose(object_id: str, body: PoseBody):
        get_record(object_id)
        rotation = np.asarray(body.rotation, dtype=float)
        if rotation.size != 9 or not is_rotation(rotation.reshape(3, 3)):
            raise HTTPException(400, "rotation must be orthonormal with det +1")
        if len(body.translation) != 3 or len(body.extents) != 3 \
                or any(e <= 0 for e in body.extents):
            raise HTTPException(400, "malformed translation or extents")
        if state.status[object_id] == Status.FILTERED:
            raise HTTPException(409, f"object {object_id!r} is filtered")
        record = PoseRecord(
            object_id=object_id,
            pose=Pose9D(rotation.reshape(3, 3), body.translation, body.extents),
            source="Manual",
            annotator_id=body.annotator_id,
            cross_verified=body.cross_verified,
        )
        with write_lock:
            state.reference_poses[object_id] = record
            state.save()
            if record.cross_verified:
                for cluster in state.clusters:
                    if cluster.medoid == object_id and not cluster.aligned:
                        pipeline.align_cluster(cluster)
        return {"ok": True, "cross_verified": record.cross_verified}

    @app.post("/objects/{object_id}/verdict")
    def post_verdict(object_id: str, body: VerdictBody):
        get_record(object_id)
        try:
            verdict = Verdict(body.verdict)
        except ValueError:
            raise HTTPException(400, f"unknown verdict {body.verdict!r}") from None
        timestamp = datetime.now(timezone.utc).isoformat()
        with write_lock:
            try:
                ingest.append_verdict(state.ledger_path, object_id, verdict,
                                      body.reviewer_id, timestamp,
                                      known_ids=set(state.records))
            except ingest.IllegalTransition as exc:
                raise HTTPException(409, str(exc)) from None
            pipeline.apply_verdict(object_id, verdict)
            state.save()
        return {"ok": True, "status": state.status[object_id].value}

    @app.get("/stats")
    def stats():
        return summarize(state)

    return app


def serve(state_dir: str, port: int, host: str = "127.0.0.1",
          config: PipelineConfig | None = None) -> None:
    import uvicorn

    state = PipelineState.load(state_dir)
    app = create_app(state, config or PipelineConfig())
    uvicorn.run(app, host=host, port=port, log_level="warning")
