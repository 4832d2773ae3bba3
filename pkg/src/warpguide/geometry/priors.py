"""Warped scene priors: choosing a source view and warping it to a target pose."""

from __future__ import annotations

import enum
from collections.abc import Sequence

from .cameras import CameraIntrinsics, Pose, pose_distance, relative_pose
from .grids import DepthMap, ImageGrid, WarpResult
from .reproject import forward_warp, reproject_pixels

__all__ = ["WarpStrategy", "SourceView", "warp_prior", "select_source"]

SourceView = tuple[ImageGrid, DepthMap, Pose]


class WarpStrategy(enum.Enum):
    """How a source view is picked for each target pose."""

    SINGLE = "single"
    NEAREST_MULTI = "nearest_multi"
    PER_TIMESTAMP = "per_timestamp"


def select_source(
    sources: Sequence[SourceView],
    target: Pose,
    strategy: WarpStrategy,
    time_index: int | None = None,
) -> int:
    """Index of the source view that warps to ``target`` under ``strategy``.

    single requires exactly one source. nearest_multi picks the source with
    the smallest pose_distance to the target, ties resolved by lowest index.
    per_timestamp picks the time-matched source ``time_index``.
    """
    if not sources:
        raise ValueError("sources must be non-empty")
    strategy = WarpStrategy(strategy)
    if strategy is WarpStrategy.SINGLE:
        if len(sources) != 1:
            raise ValueError(f"single strategy requires exactly 1 source, got {len(sources)}")
        return 0
    if strategy is WarpStrategy.NEAREST_MULTI:
        best = 0
        best_dist = pose_distance(sources[0][2], target)
        for idx in range(1, len(sources)):
            dist = pose_distance(sources[idx][2], target)
            if dist < best_dist:
                best = idx
                best_dist = dist
        return best
    if time_index is None:
        raise ValueError("per_timestamp strategy requires a time index")
    if not 0 <= time_index < len(sources):
        raise ValueError(f"time index {time_index} outside {len(sources)} sources")
    return time_index


def warp_prior(
    sources: Sequence[SourceView],
    target: Pose,
    intrinsics: CameraIntrinsics,
    strategy: WarpStrategy,
    time_index: int | None = None,
) -> WarpResult:
    """Warp one source view to the target pose.

    Args:
        sources: (image, depth, pose) triples of the available input views.
        target: Camera-to-world pose of the target view.
        intrinsics: Shared pinhole intrinsics.
        strategy: Source-selection rule; see ``select_source``.
        time_index: Target timestamp, required for per_timestamp.

    Returns:
        WarpResult over the target grid; disocclusion holes are invalid.
    """
    idx = select_source(sources, target, strategy, time_index)
    image, depth, pose = sources[idx]
    delta = relative_pose(pose, target)
    reprojection = reproject_pixels(intrinsics, depth, delta)
    return forward_warp(
        image, reprojection.coords, reprojection.depth, source_valid=reprojection.valid
    )
