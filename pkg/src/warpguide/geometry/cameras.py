"""Camera models, rigid poses, and the scalar pose distance.

Conventions, fixed once and used by every module:

* Images are row-major H x W (x C) arrays; row index r runs top to bottom,
  column index c runs left to right.
* The center of pixel (r, c) sits at continuous coordinates (u, v) =
  (c + 0.5, r + 0.5), with u horizontal and v vertical.
* The camera looks down +z of its own right-handed frame; x points right
  (increasing u), y points down (increasing v).
* A Pose maps camera coordinates to world coordinates (camera-to-world):
  world = rotation @ cam + translation.
* Depth is the camera-frame z coordinate of the observed surface point, in
  scene units; it is positive for points in front of the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = [
    "CameraIntrinsics",
    "CameraModel",
    "Pose",
    "look_at",
    "pose_distance",
]


def _readonly(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units.

    Attributes:
        fx, fy: Focal lengths in pixels, strictly positive.
        cx, cy: Principal point in pixels, inside the image rectangle.
        width, height: Image size in pixels, positive integers.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def pixel_centers(self) -> np.ndarray:
        """Grid of pixel-center coordinates, shape (H, W, 2), last axis (u, v)."""
        u = np.arange(self.width, dtype=np.float64) + 0.5
        v = np.arange(self.height, dtype=np.float64) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv], axis=-1)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform.

    Attributes:
        rotation: 3x3 orthonormal matrix with determinant +1.
        translation: 3-vector, scene units.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = _readonly(self.rotation)
        trans = _readonly(self.translation)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if trans.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {trans.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise ValueError("pose entries must be finite")
        gram_error = np.abs(rot.T @ rot - np.eye(3)).max()
        if gram_error > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {gram_error:.3e})")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """Transform applying ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics plus a camera-to-world pose."""

    intrinsics: CameraIntrinsics
    pose: Pose


def relative_pose(source: Pose, target: Pose) -> Pose:
    """Transform mapping source-camera coordinates into target-camera coordinates."""
    return target.inverse().compose(source)


def pose_distance(a: Pose, b: Pose, rotation_weight: float = 1.0) -> float:
    """Scalar magnitude of the relative rigid transform between two cameras.

    Computes ||[t_rel ; w_r * axis_angle(R_rel)]||_2 for the relative transform
    (R_rel, t_rel) from ``a`` to ``b``. The rotation contributes its axis-angle
    magnitude (radians in [0, pi]) scaled by ``rotation_weight``; the value is
    symmetric in its arguments.

    Args:
        a: First camera pose.
        b: Second camera pose.
        rotation_weight: Weight w_r applied to the rotation angle. Default 1.0.

    Returns:
        Nonnegative scalar distance.
    """
    rel = relative_pose(a, b)
    angle = Rotation.from_matrix(rel.rotation).magnitude()
    return float(np.sqrt(rel.translation @ rel.translation + (rotation_weight * angle) ** 2))


def look_at(eye: np.ndarray, center: np.ndarray, down: np.ndarray) -> Pose:
    """Pose of a camera at ``eye`` whose optical axis points at ``center``.

    ``down`` picks the in-plane orientation: the camera's +y axis (image-down)
    is the projection of ``down`` orthogonal to the optical axis. ``down`` must
    not be parallel to the viewing direction.
    """
    eye = np.asarray(eye, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    down = np.asarray(down, dtype=np.float64)
    z_axis = center - eye
    norm = np.linalg.norm(z_axis)
    if norm < 1e-12:
        raise ValueError("look_at target coincides with the eye point")
    z_axis = z_axis / norm
    y_axis = down - z_axis * (down @ z_axis)
    y_norm = np.linalg.norm(y_axis)
    if y_norm < 1e-12:
        raise ValueError("down direction is parallel to the viewing direction")
    y_axis = y_axis / y_norm
    x_axis = np.cross(y_axis, z_axis)
    rotation = np.stack([x_axis, y_axis, z_axis], axis=1)
    return Pose(rotation, eye)
