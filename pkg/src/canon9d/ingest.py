"""File formats: featured point clouds, manifests, camera trajectories,
pose records and the append-only verdict ledger."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from canon9d.core import FeaturedSurface, Pose9D, SimilarityTransform

log = logging.getLogger(__name__)

FPC_MAGIC = b"FPC1"


class FormatError(Exception):
    pass


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DimensionMismatch(FormatError):
    pass


class DuplicateId(FormatError):
    pass


class UnknownStatus(FormatError):
    pass


class MissingFile(FormatError):
    pass


class UnknownObject(FormatError):
    pass


class IllegalTransition(FormatError):
    pass


class Status(str, Enum):
    PENDING = "Pending"
    ACCEPTED = "Accepted"
    SKIPPED = "Skipped"
    FILTERED = "Filtered"


class Verdict(str, Enum):
    ACCEPT = "Accept"
    SKIP = "Skip"
    FILTER = "Filter"


VERDICT_TO_STATUS = {
    Verdict.ACCEPT: Status.ACCEPTED,
    Verdict.SKIP: Status.SKIPPED,
    Verdict.FILTER: Status.FILTERED,
}


@dataclass
class ObjectRecord:
    object_id: str
    surface_path: str
    camera_path: str | None = None
    category_hint: str | None = None
    status: Status = Status.PENDING


@dataclass(frozen=True)
class CameraFrame:
    frame_id: int
    world_to_camera: SimilarityTransform


@dataclass
class PoseRecord:
    object_id: str
    pose: Pose9D
    source: str = "Manual"  # Manual | Propagated
    annotator_id: str = ""
    cross_verified: bool = False

    def to_dict(self) -> dict:
        d = self.pose.to_dict()
        d.update(
            object_id=self.object_id,
            source=self.source,
            annotator_id=self.annotator_id,
            cross_verified=self.cross_verified,
        )
        return d

    @staticmethod
    def from_dict(d: dict) -> "PoseRecord":
        return PoseRecord(
            object_id=d["object_id"],
            pose=Pose9D.from_dict(d),
            source=d.get("source", "Manual"),
            annotator_id=d.get("annotator_id", ""),
            cross_verified=bool(d.get("cross_verified", False)),
        )


# ---------------------------------------------------------------------------
# FPC binary format
#
# magic "FPC1" | u32 N | u32 D | N*3 float32 vertices |
# N u16 per-vertex feature counts | float32 feature block in vertex order.
# All integers little-endian.
# ---------------------------------------------------------------------------

def write_fpc(surface: FeaturedSurface, path) -> None:
    n = len(surface.vertices)
    counts = np.array([len(f) for f in surface.features], dtype="<u2")
    with open(path, "wb") as fh:
        fh.write(FPC_MAGIC)
        fh.write(struct.pack("<II", n, surface.feature_dim))
        fh.write(np.ascontiguousarray(surface.vertices, dtype="<f4").tobytes())
        fh.write(counts.tobytes())
        for f in surface.features:
            fh.write(np.ascontiguousarray(f, dtype="<f4").tobytes())


def read_fpc(path) -> FeaturedSurface:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != FPC_MAGIC:
        raise BadMagic(f"{path}: not an FPC file")
    if len(data) < 12:
        raise TruncatedFile(f"{path}: truncated header")
    n, dim = struct.unpack_from("<II", data, 4)
    off = 12
    vert_bytes = n * 3 * 4
    count_bytes = n * 2
    if len(data) < off + vert_bytes + count_bytes:
        raise TruncatedFile(f"{path}: truncated vertex/count block")
    vertices = np.frombuffer(data, dtype="<f4", count=n * 3, offset=off).reshape(n, 3)
    off += vert_bytes
    counts = np.frombuffer(data, dtype="<u2", count=n, offset=off).astype(np.int64)
    off += count_bytes
    total = int(counts.sum())
    feat_bytes = total * dim * 4
    if len(data) < off + feat_bytes:
        raise TruncatedFile(f"{path}: truncated feature block")
    if len(data) != off + feat_bytes:
        raise DimensionMismatch(
            f"{path}: feature block length inconsistent with counts x dim"
        )
    flat = np.frombuffer(data, dtype="<f4", count=total * dim, offset=off)
    flat = flat.reshape(total, dim) if dim else flat.reshape(total, 0)
    features = []
    start = 0
    for c in counts:
        features.append(np.array(flat[start:start + c]))
        start += c
    features = _renormalize_features(features, path)
    return FeaturedSurface(vertices=np.array(vertices), features=features,
                           feature_dim=dim)


def _renormalize_features(features, path):
    """Enforce unit norm at load; float32 storage drift stays untouched so
    write/read round trips are bit-exact."""
    out = []
    for f in features:
        if f.size == 0:
            out.append(f)
            continue
        norms = np.linalg.norm(f.astype(np.float64), axis=1)
        dev = np.abs(norms - 1.0)
        if dev.max() > 1e-3:
            log.warning("%s: feature norms deviate up to %.2e; renormalizing",
                        path, dev.max())
        bad = dev > 1e-4
        if bad.any():
            f = f.copy()
            f[bad] = (f[bad].astype(np.float64) / norms[bad, None]).astype(np.float32)
        out.append(f)
    return out


# ---------------------------------------------------------------------------
# Manifest: one JSON object per line.
# ---------------------------------------------------------------------------

def load_manifest(path, check_files: bool = True) -> list[ObjectRecord]:
    records: list[ObjectRecord] = []
    seen: set[str] = set()
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            oid = entry.get("object_id")
            if not oid:
                raise FormatError(f"{path}:{lineno}: missing object_id")
            if oid in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate object_id {oid!r}")
            seen.add(oid)
            status_str = entry.get("status", "Pending")
            try:
                status = Status(status_str)
            except ValueError:
                raise UnknownStatus(
                    f"{path}:{lineno}: unknown status {status_str!r}"
                ) from None
            surface = entry.get("surface")
            if not surface:
                raise MissingFile(f"{path}:{lineno}: missing surface path")
            surface_abs = surface if os.path.isabs(surface) else os.path.join(base, surface)
            if check_files and not os.path.exists(surface_abs):
                raise MissingFile(f"{path}:{lineno}: surface file not found: {surface}")
            cameras = entry.get("cameras")
            if cameras is not None:
                cameras_abs = cameras if os.path.isabs(cameras) else os.path.join(base, cameras)
                if check_files and not os.path.exists(cameras_abs):
                    raise MissingFile(f"{path}:{lineno}: camera file not found: {cameras}")
                cameras = cameras_abs
            records.append(ObjectRecord(
                object_id=oid,
                surface_path=surface_abs,
                camera_path=cameras,
                category_hint=entry.get("category"),
                status=status,
            ))
    return records


# ---------------------------------------------------------------------------
# Camera trajectories: JSON array of {frame_id, matrix: 12 floats (R | t)}.
# ---------------------------------------------------------------------------

def load_cameras(path) -> list[CameraFrame]:
    with open(path) as fh:
        entries = json.load(fh)
    frames: list[CameraFrame] = []
    last = None
    for entry in entries:
        fid = int(entry["frame_id"])
        if last is not None and fid <= last:
            raise FormatError(f"{path}: frame ids must be strictly increasing")
        last = fid
        m = np.asarray(entry["matrix"], dtype=float).reshape(3, 4)
        frames.append(CameraFrame(
            frame_id=fid,
            world_to_camera=SimilarityTransform(m[:, :3], m[:, 3], 1.0),
        ))
    return frames


def save_cameras(frames: list[CameraFrame], path) -> None:
    entries = []
    for f in frames:
        m = np.concatenate(
            [f.world_to_camera.rotation,
             f.world_to_camera.translation.reshape(3, 1)], axis=1)
        entries.append({"frame_id": f.frame_id, "matrix": m.reshape(-1).tolist()})
    with open(path, "w") as fh:
        json.dump(entries, fh)


# ---------------------------------------------------------------------------
# Verdict ledger: append-only text, one tab-separated verdict per line.
# ---------------------------------------------------------------------------

@dataclass
class LedgerEntry:
    timestamp: str
    reviewer_id: str
    object_id: str
    verdict: Verdict


def read_ledger(path) -> list[LedgerEntry]:
    if not os.path.exists(path):
        return []
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
            ts, reviewer, oid, verdict = parts
            try:
                entries.append(LedgerEntry(ts, reviewer, oid, Verdict(verdict)))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unknown verdict {verdict!r}") from None
    return entries


def replay_ledger(path) -> dict[str, Status]:
    """Pure replay: last verdict wins per object, Filter is terminal."""
    statuses: dict[str, Status] = {}
    for e in read_ledger(path):
        if statuses.get(e.object_id) == Status.FILTERED:
            continue  # terminal; later lines cannot resurrect
        statuses[e.object_id] = VERDICT_TO_STATUS[e.verdict]
    return statuses


def append_verdict(ledger_path, object_id: str, verdict, reviewer_id: str,
                   timestamp: str, known_ids=None) -> None:
    verdict = Verdict(verdict)
    if known_ids is not None and object_id not in known_ids:
        raise UnknownObject(f"object {object_id!r} not in manifest")
    if replay_ledger(ledger_path).get(object_id) == Status.FILTERED:
        raise IllegalTransition(f"object {object_id!r} is Filtered (terminal)")
    line = "\t".join([timestamp, reviewer_id, object_id, verdict.value])
    with open(ledger_path, "a") as fh:
        fh.write(line + "\n")


def ledger_summary(path) -> dict:
    """Final-status fractions after replay (accept/skip/filter)."""
    statuses = replay_ledger(path)
    n = len(statuses)
    counts = {s: 0 for s in (Status.ACCEPTED, Status.SKIPPED, Status.FILTERED)}
    for s in statuses.values():
        counts[s] += 1
    return {
        "total": n,
        "accepted": counts[Status.ACCEPTED],
        "skipped": counts[Status.SKIPPED],
        "filtered": counts[Status.FILTERED],
        "accept_fraction": counts[Status.ACCEPTED] / n if n else 0.0,
        "skip_fraction": counts[Status.SKIPPED] / n if n else 0.0,
        "filter_fraction": counts[Status.FILTERED] / n if n else 0.0,
    }
