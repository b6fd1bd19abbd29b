"""Stage orchestration: cluster -> reference -> annotate -> align -> verify,
iterated over skipped objects, with resumable on-disk state."""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from canon9d import align as align_mod
from canon9d import cluster as cluster_mod
from canon9d import ingest
from canon9d.align import AlignConfig
from canon9d.canonical import CanonicalPose, fit_box, make_canonical_pose
from canon9d.core import FeaturedSurface, SimilarityTransform
from canon9d.ingest import ObjectRecord, PoseRecord, Status, Verdict


class PipelineError(Exception):
    pass


class NoPendingObjects(PipelineError):
    pass


class NoVerifiedReference(PipelineError):
    """A cluster is stuck awaiting a cross-verified reference annotation."""


class AwaitingVerification(PipelineError):
    """Aligned members still lack a verdict in the ledger."""


@dataclass
class PipelineConfig:
    seed: int = 0
    k: int | None = None            # default ceil(n / 100)
    align: AlignConfig = field(default_factory=AlignConfig)
    robust_quantile: float = 0.01
    auto_verify: bool = False
    auto_verify_threshold: float = 0.1   # align score, fraction of reference radius
    max_iterations: int = 3

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["align"] = dict(self.align.__dict__)
        return d

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        d = dict(d)
        if "align" in d:
            d["align"] = AlignConfig(**d["align"])
        return PipelineConfig(**d)


@dataclass
class ClusterState:
    index: int
    members: list[str]
    medoid: str
    aligned: bool = False

    def to_dict(self) -> dict:
        return {"index": self.index, "members": self.members,
                "medoid": self.medoid, "aligned": self.aligned}


class PipelineState:
    """All mutable pipeline state; persisted as deterministic JSON so that a
    replay from the same manifest, ledger and seeds is byte-identical."""

    def __init__(self, manifest_path: str, state_dir: str):
        self.manifest_path = os.path.abspath(manifest_path)
        self.state_dir = os.path.abspath(state_dir)
        self.records: dict[str, ObjectRecord] = {
            r.object_id: r for r in ingest.load_manifest(manifest_path)
        }
        self.status: dict[str, Status] = {
            oid: r.status for oid, r in self.records.items()
        }
        self.iteration = 1
        self.ledger_cursor = 0   # ledger lines consumed before this iteration
        self.clusters: list[ClusterState] = []
        self.transforms: dict[str, dict] = {}      # id -> {transform, score, reference}
        self.reference_poses: dict[str, PoseRecord] = {}
        self.canonical: dict[str, CanonicalPose] = {}
        self.processed: dict[str, dict] = {}       # iteration -> verdict counts/ids
        self._surfaces: dict[str, FeaturedSurface] = {}

    # -- persistence ------------------------------------------------------

    @property
    def ledger_path(self) -> str:
        return os.path.join(self.state_dir, "ledger.txt")

    @property
    def state_path(self) -> str:
        return os.path.join(self.state_dir, "state.json")

    def save(self) -> None:
        os.makedirs(self.state_dir, exist_ok=True)
        payload = {
            "manifest_path": self.manifest_path,
            "iteration": self.iteration,
            "ledger_cursor": self.ledger_cursor,
            "status": {oid: s.value for oid, s in sorted(self.status.items())},
            "clusters": [c.to_dict() for c in self.clusters],
            "transforms": {k: self.transforms[k] for k in sorted(self.transforms)},
            "reference_poses": {
                k: self.reference_poses[k].to_dict()
                for k in sorted(self.reference_poses)
            },
            "canonical": {k: self.canonical[k].to_dict()
                          for k in sorted(self.canonical)},
            "processed": {k: self.processed[k] for k in sorted(self.processed)},
        }
        with open(self.state_path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)

    @staticmethod
    def load(state_dir: str) -> "PipelineState":
        with open(os.path.join(state_dir, "state.json")) as fh:
            payload = json.load(fh)
        state = PipelineState(payload["manifest_path"], state_dir)
        state.iteration = payload["iteration"]
        state.ledger_cursor = payload.get("ledger_cursor", 0)
        state.status = {oid: Status(s) for oid, s in payload["status"].items()}
        state.clusters = [ClusterState(**c) for c in payload["clusters"]]
        state.transforms = payload["transforms"]
        state.reference_poses = {
            k: PoseRecord.from_dict(v)
            for k, v in payload["reference_poses"].items()
        }
        state.canonical = {k: CanonicalPose.from_dict(v)
                           for k, v in payload["canonical"].items()}
        state.processed = payload["processed"]
        return state

    # -- accessors --------------------------------------------------------

    def surface(self, object_id: str) -> FeaturedSurface:
        if object_id not in self._surfaces:
            self._surfaces[object_id] = ingest.read_fpc(
                self.records[object_id].surface_path)
        return self._surfaces[object_id]

    def ids_with_status(self, status: Status) -> list[str]:
        return sorted(oid for oid, s in self.status.items() if s == status)


def object_embedding(surface: FeaturedSurface) -> np.ndarray:
    """Aggregate all per-vertex feature observations into one unit vector."""
    feats = [f for f in surface.features if len(f)]
    if not feats:
        raise cluster_mod.EmptyInput("surface has no features")
    return cluster_mod.aggregate_embedding(np.concatenate(feats))


def _align_seed(base_seed: int, object_id: str) -> int:
    return (base_seed + zlib.crc32(object_id.encode())) % (2**31)


class Pipeline:
    """Drives one pipeline state through clustering, alignment and verdict
    application.  Annotation and verification are asynchronous boundaries:
    without auto_verify the pipeline parks on "awaiting" markers that the
    HTTP service (or a human tool behind it) resolves."""

    def __init__(self, state: PipelineState, config: PipelineConfig):
        self.state = state
        self.config = config

    # -- stage 1+2: clustering and medoid selection -----------------------

    def ensure_clusters(self) -> list[ClusterState]:
        state = self.state
        if state.clusters:
            return state.clusters
        pending = state.ids_with_status(Status.PENDING)
        if not pending:
            raise NoPendingObjects("pending set is empty")
        embeddings = [
            cluster_mod.ObjectEmbedding(oid, object_embedding(state.surface(oid)))
            for oid in pending
        ]
        k = self.config.k or max(1, math.ceil(len(pending) / 100))
        k = min(k, len(pending))
        clustering = cluster_mod.kmeans_cosine(
            embeddings, k, seed=self.config.seed + state.iteration)
        by_cluster: dict[int, list] = {}
        for e in embeddings:
            by_cluster.setdefault(clustering.assignments[e.object_id], []).append(e)
        state.clusters = [
            ClusterState(index=c, members=sorted(e.object_id for e in members),
                         medoid=cluster_mod.medoid(members))
            for c, members in sorted(by_cluster.items())
        ]
        state.save()
        return state.clusters

    # -- stage 3: reference annotation ------------------------------------

    def reference_pose(self, cluster: ClusterState) -> PoseRecord | None:
        rec = self.state.reference_poses.get(cluster.medoid)
        if rec is not None and rec.cross_verified:
            return rec
        if self.config.auto_verify:
            rec = self._auto_annotate(cluster.medoid)
            self.state.reference_poses[cluster.medoid] = rec
            return rec
        return None

    def _auto_annotate(self, object_id: str) -> PoseRecord:
        """Unattended test mode: the reference's own frame becomes canonical
        (identity rotation, box-centered origin)."""
        box = fit_box(self.state.surface(object_id).vertices,
                      self.config.robust_quantile)
        return PoseRecord(object_id=object_id, pose=box, source="Manual",
                          annotator_id="auto-verify", cross_verified=True)

    # -- stage 4: alignment ------------------------------------------------

    def align_cluster(self, cluster: ClusterState) -> None:
        state = self.state
        reference = self.reference_pose(cluster)
        if reference is None:
            raise NoVerifiedReference(
                f"cluster {cluster.index} awaits annotation of {cluster.medoid}")
        ref_surface = state.surface(cluster.medoid)
        for oid in cluster.members:
            if oid in state.transforms and \
                    state.transforms[oid].get("reference") == cluster.medoid:
                continue
            if oid == cluster.medoid:
                transform = SimilarityTransform.identity()
                score = 0.0
            else:
                transform, score = align_mod.align(
                    state.surface(oid), ref_surface, self.config.align,
                    seed=_align_seed(self.config.seed, oid))
            state.transforms[oid] = {
                "transform": transform.to_dict(),
                "score": score,
                "reference": cluster.medoid,
            }
        cluster.aligned = True
        state.save()

    # -- stage 5: verification --------------------------------------------

    def _recent_verdicts(self) -> dict[str, Verdict]:
        """Verdicts appended since the current iteration started."""
        entries = ingest.read_ledger(self.state.ledger_path)
        recent: dict[str, Verdict] = {}
        for e in entries[self.state.ledger_cursor:]:
            if recent.get(e.object_id) != Verdict.FILTER:
                recent[e.object_id] = e.verdict
        return recent

    def _auto_verdicts(self, cluster: ClusterState) -> None:
        state = self.state
        ref_surface = state.surface(cluster.medoid)
        rho = ref_surface.bounding_sphere_radius()
        threshold = self.config.auto_verify_threshold * rho
        recent = self._recent_verdicts()
        stamp = f"iter{state.iteration}"
        for oid in cluster.members:
            if oid in recent:
                continue
            score = state.transforms[oid]["score"]
            verdict = Verdict.ACCEPT if score < threshold else Verdict.SKIP
            ingest.append_verdict(state.ledger_path, oid, verdict,
                                  "auto-verify", stamp,
                                  known_ids=set(state.records))

    def apply_verdict(self, object_id: str, verdict: Verdict) -> None:
        """Update status and persisted poses for one verdict (already in the
        ledger)."""
        state = self.state
        status = ingest.VERDICT_TO_STATUS[verdict]
        state.status[object_id] = status
        record = self._record_processed(object_id, verdict)
        if status == Status.ACCEPTED:
            entry = state.transforms.get(object_id)
            if entry is not None:
                ref_pose = state.reference_poses.get(entry["reference"])
                if ref_pose is not None:
                    state.canonical[object_id] = make_canonical_pose(
                        state.surface(object_id),
                        SimilarityTransform.from_dict(entry["transform"]),
                        ref_pose.pose,
                        self.config.robust_quantile,
                    )
        else:
            state.canonical.pop(object_id, None)
        if status == Status.FILTERED:
            # A filtered reference voids its cluster's propagated poses.
            for cluster in state.clusters:
                if cluster.medoid == object_id:
                    for member in cluster.members:
                        if member != object_id and \
                                state.status[member] == Status.ACCEPTED:
                            state.status[member] = Status.SKIPPED
                            state.canonical.pop(member, None)
        _ = record

    def _record_processed(self, object_id: str, verdict: Verdict) -> dict:
        key = str(self.state.iteration)
        rec = self.state.processed.setdefault(
            key, {"Accept": [], "Skip": [], "Filter": []})
        for ids in rec.values():
            if object_id in ids:
                ids.remove(object_id)
        rec[verdict.value].append(object_id)
        rec[verdict.value].sort()
        return rec

    def apply_ledger(self) -> None:
        """Fold verdicts appended during this iteration into the state."""
        recent = self._recent_verdicts()
        replayed = {oid: ingest.VERDICT_TO_STATUS[v] for oid, v in recent.items()}
        for cluster in self.state.clusters:
            if not cluster.aligned:
                continue
            for oid in cluster.members:
                if oid not in replayed:
                    continue
                target = replayed[oid]
                if self.state.status[oid] != target:
                    verdict = {Status.ACCEPTED: Verdict.ACCEPT,
                               Status.SKIPPED: Verdict.SKIP,
                               Status.FILTERED: Verdict.FILTER}[target]
                    self.apply_verdict(oid, verdict)
        self.state.save()

    # -- iteration driver --------------------------------------------------

    def run_iteration(self) -> None:
        state = self.state
        # Starting a fresh iteration: re-queue skipped objects and mark the
        # current ledger end so stale verdicts are not re-applied.
        if not state.clusters:
            for oid in state.ids_with_status(Status.SKIPPED):
                state.status[oid] = Status.PENDING
            state.ledger_cursor = len(ingest.read_ledger(state.ledger_path))
        if not state.ids_with_status(Status.PENDING):
            raise NoPendingObjects("pending set is empty")
        self.ensure_clusters()
        stuck = []
        for cluster in self.state.clusters:
            if cluster.aligned:
                continue
            try:
                self.align_cluster(cluster)
            except NoVerifiedReference:
                stuck.append(cluster.index)
                continue
            if self.config.auto_verify:
                self._auto_verdicts(cluster)
        self.apply_ledger()
        if stuck:
            state.save()
            raise NoVerifiedReference(
                f"clusters awaiting reference annotation: {stuck}")
        unverified = [oid for c in state.clusters if c.aligned
                      for oid in c.members
                      if state.status[oid] == Status.PENDING]
        if unverified:
            state.save()
            raise AwaitingVerification(
                f"{len(unverified)} aligned objects await a verdict")
        state.iteration += 1
        state.clusters = []
        state.save()

    def run(self) -> None:
        """Run iterations until nothing is pending or the cap is reached."""
        while self.state.iteration <= self.config.max_iterations:
            try:
                self.run_iteration()
            except NoPendingObjects:
                break
            if not self.state.ids_with_status(Status.SKIPPED) and \
                    not self.state.ids_with_status(Status.PENDING):
                break


def summarize(state: PipelineState) -> dict:
    """Per-iteration and total accept/skip/filter statistics."""
    iterations = {}
    for key in sorted(state.processed, key=int):
        rec = state.processed[key]
        counts = {v: len(ids) for v, ids in rec.items()}
        total = sum(counts.values())
        iterations[key] = {
            "accept_pct": round(counts["Accept"] * 100.0 / total, 1) if total else 0.0,
            "skip_pct": round(counts["Skip"] * 100.0 / total, 1) if total else 0.0,
            "filter_pct": round(counts["Filter"] * 100.0 / total, 1) if total else 0.0,
            "counts": counts,
        }
    status_counts = {s.value: 0 for s in Status}
    for s in state.status.values():
        status_counts[s.value] += 1
    n = len(state.status)
    final = {
        "accept_pct": round(status_counts["Accepted"] * 100.0 / n, 1) if n else 0.0,
        "skip_pct": round(status_counts["Skipped"] * 100.0 / n, 1) if n else 0.0,
        "filter_pct": round(status_counts["Filtered"] * 100.0 / n, 1) if n else 0.0,
    }
    return {
        "iterations": iterations,
        "status_counts": status_counts,
        "total_objects": n,
        "final": final,
    }
