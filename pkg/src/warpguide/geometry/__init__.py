"""Camera geometry, depth warping, pose distances, and synthetic scenes."""

from .cameras import (
    CameraIntrinsics,
    CameraModel,
    Pose,
    look_at,
    pose_distance,
    relative_pose,
)
from .grids import DepthMap, ImageGrid, WarpResult
from .imageio import (
    load_depth,
    load_intrinsics,
    load_png,
    load_poses,
    load_scene_views,
    save_depth,
    save_intrinsics,
    save_png,
    save_poses,
    save_ppm,
    save_scene_views,
)
from .priors import SourceView, WarpStrategy, select_source, warp_prior
from .reproject import ReprojectionResult, forward_warp, reproject_pixels
from .scenes import canonical_camera, render_synthetic, scene_depth_at, scene_ids

__all__ = [
    "CameraIntrinsics",
    "CameraModel",
    "DepthMap",
    "ImageGrid",
    "Pose",
    "ReprojectionResult",
    "SourceView",
    "WarpResult",
    "WarpStrategy",
    "canonical_camera",
    "forward_warp",
    "load_depth",
    "load_intrinsics",
    "load_png",
    "load_poses",
    "load_scene_views",
    "look_at",
    "pose_distance",
    "relative_pose",
    "render_synthetic",
    "reproject_pixels",
    "save_depth",
    "save_intrinsics",
    "save_png",
    "save_poses",
    "save_ppm",
    "save_scene_views",
    "scene_depth_at",
    "scene_ids",
    "select_source",
    "warp_prior",
]
