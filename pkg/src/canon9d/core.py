"""Shared domain types and rotation / similarity-transform primitives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROT_TOL = 1e-6


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto the nearest rotation (polar decomposition).

    The determinant sign is fixed so the result is always a proper rotation.
    """
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def is_rotation(m: np.ndarray, tol: float = ROT_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    return (
        np.abs(m.T @ m - np.eye(3)).max() <= tol
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about an arbitrary (unnormalized) axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def axis_angle_to_matrix(omega) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        return np.eye(3)
    return rotation_about_axis(omega / theta, theta)


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation + translation + uniform scale: p -> scale * R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )
        object.__setattr__(self, "scale", float(self.scale))
        if not is_rotation(self.rotation):
            raise ValueError("rotation is not orthonormal with det +1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(np.eye(3), np.zeros(3), 1.0)

    def inverse(self) -> "SimilarityTransform":
        r_inv = self.rotation.T
        return SimilarityTransform(
            r_inv, -(r_inv @ self.translation) / self.scale, 1.0 / self.scale
        )

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "SimilarityTransform":
        return SimilarityTransform(
            np.asarray(d["rotation"], dtype=float).reshape(3, 3),
            np.asarray(d["translation"], dtype=float),
            float(d.get("scale", 1.0)),
        )


@dataclass(frozen=True)
class Pose9D:
    """Oriented bounding box: rotation, translation and full side extents."""

    rotation: np.ndarray
    translation: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )
        object.__setattr__(
            self, "extents", np.asarray(self.extents, dtype=float).reshape(3)
        )
        if not is_rotation(self.rotation):
            raise ValueError("rotation is not orthonormal with det +1")
        if not np.all(self.extents > 0):
            raise ValueError("extents must be positive")

    def corners(self) -> np.ndarray:
        """The 8 box corners in world coordinates, (8, 3)."""
        half = self.extents / 2.0
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        return (signs * half) @ self.rotation.T + self.translation

    def volume(self) -> float:
        return float(np.prod(self.extents))

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "extents": self.extents.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose9D":
        return Pose9D(
            np.asarray(d["rotation"], dtype=float).reshape(3, 3),
            np.asarray(d["translation"], dtype=float),
            np.asarray(d["extents"], dtype=float),
        )


@dataclass(frozen=True)
class FeaturedSurface:
    """Point cloud whose vertices carry sets of multi-view feature vectors.

    vertices: (N, 3) float32.  features: list of N arrays, each (m_i, D)
    float32 with unit-norm rows (m_i may be 0 for unobserved vertices).
    """

    vertices: np.ndarray
    features: list = field(default_factory=list)
    feature_dim: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float32).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        feats = [np.asarray(f, dtype=np.float32).reshape(-1, self.feature_dim)
                 for f in self.features]
        object.__setattr__(self, "features", feats)
        if len(feats) != len(v):
            raise ValueError("features must have one entry per vertex")
        for f in feats:
            if f.size:
                norms = np.linalg.norm(f.astype(np.float64), axis=1)
                if np.abs(norms - 1.0).max() > 1e-4:
                    raise ValueError("feature vectors must be unit-norm")

    def __len__(self) -> int:
        return len(self.vertices)

    def bounding_sphere_radius(self) -> float:
        """Radius of the centroid-centered bounding sphere."""
        v = self.vertices.astype(np.float64)
        c = v.mean(axis=0)
        return float(np.linalg.norm(v - c, axis=1).max())


def compose(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """Composition: applying the result equals applying b, then a."""
    rotation = orthonormalize(a.rotation @ b.rotation)
    translation = a.scale * a.rotation @ b.translation + a.translation
    return SimilarityTransform(rotation, translation, a.scale * b.scale)


def apply_transform(t: SimilarityTransform, points) -> np.ndarray:
    """Apply p -> scale * R @ p + t to an (N, 3) array of points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return t.scale * pts @ t.rotation.T + t.translation


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between two rotations, in [0, pi]."""
    trace = np.trace(np.asarray(r1).T @ np.asarray(r2))
    return float(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0)))
