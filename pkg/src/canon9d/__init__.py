"""canon9d: category-level 9D pose canonicalization and evaluation."""

from canon9d.core import (
    FeaturedSurface,
    Pose9D,
    SimilarityTransform,
    apply_transform,
    compose,
    geodesic_distance,
    orthonormalize,
    rotation_about_axis,
)

__all__ = [
    "FeaturedSurface",
    "Pose9D",
    "SimilarityTransform",
    "apply_transform",
    "compose",
    "geodesic_distance",
    "orthonormalize",
    "rotation_about_axis",
]
