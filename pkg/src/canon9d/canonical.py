"""Oriented-box fitting in the canonical frame, 9D pose construction and
per-frame propagation through camera trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from canon9d.core import (
    FeaturedSurface,
    Pose9D,
    SimilarityTransform,
    apply_transform,
    compose,
    orthonormalize,
)
from canon9d.ingest import CameraFrame


class DegenerateExtent(Exception):
    pass


@dataclass(frozen=True)
class CanonicalPose:
    """Canonicalization of one object: the transform from its reconstruction
    world frame into the shared canonical frame, plus the axis-aligned box
    fitted there (box rotation is identity by construction)."""

    world_to_canonical: SimilarityTransform
    box: Pose9D

    def to_dict(self) -> dict:
        return {"world_to_canonical": self.world_to_canonical.to_dict(),
                "box": self.box.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "CanonicalPose":
        return CanonicalPose(
            SimilarityTransform.from_dict(d["world_to_canonical"]),
            Pose9D.from_dict(d["box"]),
        )


def fit_box(points_canonical, robust_quantile: float = 0.0) -> Pose9D:
    """Axis-aligned box from per-axis quantiles; quantile 0 is exact min/max.

    Linear interpolation between order statistics keeps the fit deterministic.
    """
    pts = np.asarray(points_canonical, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise ValueError("need at least 4 points")
    if not 0.0 <= robust_quantile < 0.5:
        raise ValueError("robust_quantile must be in [0, 0.5)")
    lo = np.quantile(pts, robust_quantile, axis=0, method="linear")
    hi = np.quantile(pts, 1.0 - robust_quantile, axis=0, method="linear")
    extents = hi - lo
    if np.any(extents < 1e-9):
        raise DegenerateExtent(f"near-degenerate extents {extents}")
    return Pose9D(np.eye(3), (lo + hi) / 2.0, extents)


def make_canonical_pose(instance_surface: FeaturedSurface,
                        transform_to_reference: SimilarityTransform,
                        reference_annotation: Pose9D,
                        robust_quantile: float = 0.01) -> CanonicalPose:
    """Chain the instance->reference alignment with the reference annotation's
    canonicalizer, fit the box in canonical coordinates and re-center so the
    box center is the pose origin."""
    r_inv = reference_annotation.rotation.T
    canonicalizer = SimilarityTransform(
        r_inv, -(r_inv @ reference_annotation.translation), 1.0)
    world_to_canonical = compose(canonicalizer, transform_to_reference)
    box = fit_box(apply_transform(world_to_canonical, instance_surface.vertices),
                  robust_quantile)
    recentered = SimilarityTransform(
        world_to_canonical.rotation,
        world_to_canonical.translation - box.translation,
        world_to_canonical.scale,
    )
    box = Pose9D(box.rotation, np.zeros(3), box.extents)
    return CanonicalPose(world_to_canonical=recentered, box=box)


def placement(canonical: CanonicalPose) -> tuple[Pose9D, float]:
    """Object pose in its reconstruction world frame: the inverse of the
    canonicalizing transform, with extents expressed in world units."""
    inv = canonical.world_to_canonical.inverse()
    extents_world = canonical.box.extents * inv.scale
    return Pose9D(inv.rotation, inv.translation, extents_world), inv.scale


def propagate(canonical: CanonicalPose,
              trajectory: list[CameraFrame]) -> list[Pose9D]:
    """Per-frame 9D poses in camera coordinates; extents are constant."""
    if not trajectory:
        raise ValueError("trajectory is empty")
    world_pose, _ = placement(canonical)
    poses = []
    for frame in trajectory:
        cam = frame.world_to_camera
        if abs(cam.scale - 1.0) > 1e-9:
            raise ValueError("camera transforms must be rigid (scale 1)")
        rotation = orthonormalize(cam.rotation @ world_pose.rotation)
        translation = cam.rotation @ world_pose.translation + cam.translation
        poses.append(Pose9D(rotation, translation, world_pose.extents))
    return poses
