"""Canonical 9D box construction and propagation through camera frames.

Fits a robust axis-aligned box to a reference, chains an instance alignment
through the reference annotation, and expresses the resulting pose in two
camera frames of a rigid trajectory.
"""

import numpy as np

from canon9d.canonical import fit_box, make_canonical_pose, placement, propagate
from canon9d.core import FeaturedSurface, SimilarityTransform, apply_transform
from canon9d.ingest import CameraFrame

rng = np.random.default_rng(3)

# A box-shaped cloud with a couple of gross outliers.
pts = rng.uniform(-0.5, 0.5, size=(500, 3)) * np.array([2.0, 1.0, 0.5])
pts = np.vstack([pts, [[50.0, 0, 0], [0, -40.0, 0]]])
annotation = fit_box(pts, robust_quantile=0.01)
print("fitted extents (outliers ignored):", annotation.extents.round(3))

surface = FeaturedSurface(
    vertices=pts.astype(np.float32),
    features=[np.zeros((0, 1), dtype=np.float32)] * len(pts),
    feature_dim=1)

canonical = make_canonical_pose(surface, SimilarityTransform.identity(),
                                annotation)
world_pose, scale = placement(canonical)
print("world placement center:", world_pose.translation.round(3),
      "scale:", round(scale, 3))

trajectory = [
    CameraFrame(0, SimilarityTransform.identity()),
    CameraFrame(1, SimilarityTransform(
        np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 1]]),
        np.array([0.0, 0.0, 5.0]), 1.0)),
]
for frame, pose in zip(trajectory, propagate(canonical, trajectory)):
    print(f"frame {frame.frame_id}: center {pose.translation.round(3)}, "
          f"extents {pose.extents.round(3)}")
