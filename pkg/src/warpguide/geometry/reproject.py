"""Depth-driven pixel reprojection and forward splatting with occlusion handling.

The warp of a source view into a target view proceeds in two operations:

1. ``reproject_pixels`` back-projects every source pixel with its depth into a
   3-D point, applies the relative rigid transform, and projects it with the
   same intrinsics, yielding continuous target coordinates plus the
   transformed depth (the z-order key for occlusion resolution).
2. ``forward_warp`` splats each source pixel onto its 2x2 bilinear footprint
   in the target frame. Conflicts are resolved nearest-depth-wins: a
   contribution whose depth exceeds the per-target-pixel minimum by more than
   a small relative tolerance is occluded and dropped; contributions within
   the tolerance belong to the same surface and blend bilinearly. Target
   pixels reached by no contribution are invalid (disocclusion holes).

The two passes use a fixed accumulation order, so outputs are deterministic
and independent of how the per-pixel work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import CameraIntrinsics, Pose
from .grids import ImageGrid, WarpResult

__all__ = ["ReprojectionResult", "reproject_pixels", "forward_warp"]

_MIN_Z = 1e-9
_MIN_WEIGHT = 1e-12
_MIN_VALID_WEIGHT = 1e-8


@dataclass(frozen=True)
class ReprojectionResult:
    """Continuous target coordinates for every source pixel.

    Attributes:
        coords: (H, W, 2) array, last axis (u, v) in the target image plane.
            Values may fall outside the frame; entries of invalid pixels are
            zero-filled and meaningless.
        depth: (H, W) transformed camera-frame z of each source pixel in the
            target frame; the z-order key for ``forward_warp``.
        valid: (H, W) booleans; false where source depth is undefined, the
            transformed point lies behind the camera, or its splat footprint
            cannot touch the target frame.
    """

    coords: np.ndarray
    depth: np.ndarray
    valid: np.ndarray


def reproject_pixels(src: CameraIntrinsics, depth, delta_pose: Pose) -> ReprojectionResult:
    """Map every source pixel center into the target image plane.

    Back-projects pixel (u, v) with depth z to the camera-frame point
    ((u - cx) z / fx, (v - cy) z / fy, z), applies ``delta_pose`` (the
    relative transform from source camera to target camera), and projects
    with the same intrinsics.

    Args:
        src: Pinhole intrinsics shared by source and target views.
        depth: DepthMap over the source grid.
        delta_pose: Rigid transform taking source-camera coordinates to
            target-camera coordinates.

    Returns:
        ReprojectionResult with continuous coordinates, transformed depth,
        and validity flags.
    """
    if depth.shape != (src.height, src.width):
        raise ValueError(
            f"depth shape {depth.shape} does not match intrinsics "
            f"{src.height}x{src.width}"
        )
    centers = src.pixel_centers()
    z = depth.values
    x = (centers[..., 0] - src.cx) / src.fx * z
    y = (centers[..., 1] - src.cy) / src.fy * z
    points = np.stack([x, y, z], axis=-1)
    moved = points @ delta_pose.rotation.T + delta_pose.translation

    z_new = moved[..., 2]
    valid = depth.valid & (z_new > _MIN_Z)
    safe_z = np.where(valid, z_new, 1.0)
    u_new = src.fx * moved[..., 0] / safe_z + src.cx
    v_new = src.fy * moved[..., 1] / safe_z + src.cy

    # A bilinear footprint centered at index coordinate q touches an existing
    # pixel only when q lies in (-1, extent); outside that the splat is lost.
    in_reach = (
        (u_new > -0.5)
        & (u_new < src.width + 0.5)
        & (v_new > -0.5)
        & (v_new < src.height + 0.5)
    )
    valid = valid & in_reach

    coords = np.stack([np.where(valid, u_new, 0.0), np.where(valid, v_new, 0.0)], axis=-1)
    z_out = np.where(valid, z_new, 0.0)
    return ReprojectionResult(coords=coords, depth=z_out, valid=valid)


def forward_warp(
    source: ImageGrid,
    coords: np.ndarray,
    target_depth_order: np.ndarray,
    source_valid: np.ndarray | None = None,
    depth_tolerance: float = 0.05,
) -> WarpResult:
    """Splat a source image onto target coordinates with z-buffered conflicts.

    Args:
        source: H x W x C source image.
        coords: (H, W, 2) continuous target coordinates from
            ``reproject_pixels``, last axis (u, v).
        target_depth_order: (H, W) per-source-pixel depth in the target
            frame; smaller values win contested target pixels.
        source_valid: Optional (H, W) mask of usable source pixels. Pixels
            with non-finite coordinates or non-positive depth are dropped
            regardless.
        depth_tolerance: Relative depth window around the per-target minimum
            within which contributions blend instead of being occluded.

    Returns:
        WarpResult; target pixels reached by no surviving contribution are
        invalid with a zero fill.
    """
    height, width, channels = source.shape
    coords = np.asarray(coords, dtype=np.float64)
    depth = np.asarray(target_depth_order, dtype=np.float64)
    if coords.shape != (height, width, 2):
        raise ValueError(f"coords shape {coords.shape} does not match image {source.shape}")
    if depth.shape != (height, width):
        raise ValueError(f"depth shape {depth.shape} does not match image {source.shape}")

    usable = np.isfinite(coords).all(axis=-1) & np.isfinite(depth) & (depth > 0)
    if source_valid is not None:
        source_valid = np.asarray(source_valid, dtype=bool)
        if source_valid.shape != (height, width):
            raise ValueError(
                f"source_valid shape {source_valid.shape} does not match image {source.shape}"
            )
        usable = usable & source_valid

    flat_idx = np.flatnonzero(usable.ravel())
    n_pixels = height * width
    accum_w = np.zeros(n_pixels)
    accum_v = np.zeros((n_pixels, channels))
    if flat_idx.size:
        u = coords[..., 0].ravel()[flat_idx] - 0.5
        v = coords[..., 1].ravel()[flat_idx] - 0.5
        z = depth.ravel()[flat_idx]
        values = source.data.reshape(n_pixels, channels)[flat_idx]

        j0 = np.floor(u).astype(np.int64)
        i0 = np.floor(v).astype(np.int64)
        fu = u - j0
        fv = v - i0

        corner_i = np.concatenate([i0, i0, i0 + 1, i0 + 1])
        corner_j = np.concatenate([j0, j0 + 1, j0, j0 + 1])
        weights = np.concatenate(
            [(1 - fv) * (1 - fu), (1 - fv) * fu, fv * (1 - fu), fv * fu]
        )
        contrib_z = np.tile(z, 4)
        contrib_v = np.tile(values, (4, 1))

        keep = (
            (corner_i >= 0)
            & (corner_i < height)
            & (corner_j >= 0)
            & (corner_j < width)
            & (weights > _MIN_WEIGHT)
        )
        corner_lin = corner_i[keep] * width + corner_j[keep]
        weights = weights[keep]
        contrib_z = contrib_z[keep]
        contrib_v = contrib_v[keep]

        z_min = np.full(n_pixels, np.inf)
        np.minimum.at(z_min, corner_lin, contrib_z)

        survive = contrib_z <= z_min[corner_lin] * (1.0 + depth_tolerance)
        corner_lin = corner_lin[survive]
        weights = weights[survive]
        contrib_v = contrib_v[survive]

        np.add.at(accum_w, corner_lin, weights)
        np.add.at(accum_v, corner_lin, weights[:, None] * contrib_v)

    validity = accum_w > _MIN_VALID_WEIGHT
    out = np.zeros((n_pixels, channels))
    out[validity] = accum_v[validity] / accum_w[validity, None]
    return WarpResult.from_mask(out.reshape(height, width, channels), validity.reshape(height, width))
