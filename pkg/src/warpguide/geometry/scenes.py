"""Procedural synthetic scenes with analytic ground-truth images and depth.

Three registered scenes, all defined by closed-form geometry and smooth
procedural textures (no asset files, so tests are hermetic):

* ``plane``: an infinite fronto-parallel plane at world z = 2 with a
  softened checker texture. The canonical camera sees constant depth 2.0.
* ``box``: the interior of an axis-aligned box of half-size 2 centered at
  the origin, each face carrying a distinct base color and smooth pattern.
* ``spheres``: a checkered ground plane at world y = +1 (image-down is +y)
  with three matte spheres resting on it; the source of genuine occlusion
  for z-buffer tests. Rays that escape to the sky have undefined depth.

Textures are deliberately band-limited (tanh-softened checkers, low
frequency sinusoids): rendering evaluates them analytically at ray hits, so
a warp of one render compared against a direct render isolates resampling
error, which is what the warp accuracy bounds are stated against.

Rays are cast through pixel centers with camera-frame direction
((u - cx)/fx, (v - cy)/fy, 1); with that normalization the ray parameter at
a hit equals the camera-frame z, i.e. the depth convention used everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .cameras import CameraIntrinsics, CameraModel, Pose
from .grids import DepthMap, ImageGrid

__all__ = ["render_synthetic", "scene_ids", "canonical_camera", "scene_depth_at"]

_PLANE_Z = 2.0
_BOX_HALF = 2.0
_GROUND_Y = 1.0

_SPHERES = (
    (np.array([-0.45, 0.62, 2.2]), 0.38, np.array([0.80, 0.30, 0.30])),
    (np.array([0.50, 0.70, 3.0]), 0.30, np.array([0.30, 0.45, 0.80])),
    (np.array([0.05, 0.75, 1.55]), 0.25, np.array([0.85, 0.70, 0.30])),
)
_LIGHT = np.array([-0.30, -0.80, -0.52]) / np.linalg.norm([-0.30, -0.80, -0.52])

_BOX_FACES = (
    # (axis, bound, base color) for the interior faces of the box.
    (0, +_BOX_HALF, np.array([0.75, 0.35, 0.35])),
    (0, -_BOX_HALF, np.array([0.35, 0.65, 0.75])),
    (1, +_BOX_HALF, np.array([0.40, 0.70, 0.40])),
    (1, -_BOX_HALF, np.array([0.80, 0.80, 0.50])),
    (2, +_BOX_HALF, np.array([0.60, 0.50, 0.75])),
    (2, -_BOX_HALF, np.array([0.70, 0.60, 0.40])),
)
_SKY = np.array([0.06, 0.07, 0.09])


def _soft_checker(x: np.ndarray, y: np.ndarray, period: float, sharpness: float = 2.5) -> np.ndarray:
    wave = np.sin(2 * np.pi * x / period) * np.sin(2 * np.pi * y / period)
    return 0.5 + 0.35 * np.tanh(sharpness * wave)


def _plane_texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = _soft_checker(x, y, 0.8)
    g = 0.5 + 0.30 * np.sin(2 * np.pi * (x + y) / 1.7)
    b = 0.55 + 0.30 * np.cos(2 * np.pi * (x - y) / 1.3)
    return np.stack([r, g, b], axis=-1)


def _rays(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray directions (camera-frame z component 1) and origin."""
    intr = camera.intrinsics
    centers = intr.pixel_centers()
    dirs_cam = np.stack(
        [
            (centers[..., 0] - intr.cx) / intr.fx,
            (centers[..., 1] - intr.cy) / intr.fy,
            np.ones((intr.height, intr.width)),
        ],
        axis=-1,
    )
    dirs_world = dirs_cam @ camera.pose.rotation.T
    return dirs_world, camera.pose.translation


def _render_plane(camera: CameraModel) -> tuple[ImageGrid, DepthMap]:
    dirs, origin = _rays(camera)
    dz = dirs[..., 2]
    hit = dz > 1e-9
    safe_dz = np.where(hit, dz, 1.0)
    s = (_PLANE_Z - origin[2]) / safe_dz
    hit = hit & (s > 1e-9)
    px = origin[0] + s * dirs[..., 0]
    py = origin[1] + s * dirs[..., 1]
    color = _plane_texture(px, py)
    color[~hit] = 0.0
    depth = np.where(hit, s, 0.0)
    return ImageGrid(color), DepthMap(depth, hit)


def _render_box(camera: CameraModel) -> tuple[ImageGrid, DepthMap]:
    dirs, origin = _rays(camera)
    height, width = dirs.shape[:2]
    best_s = np.full((height, width), np.inf)
    color = np.zeros((height, width, 3))
    for axis, bound, base in _BOX_FACES:
        d_axis = dirs[..., axis]
        usable = np.abs(d_axis) > 1e-12
        s = np.where(usable, (bound - origin[axis]) / np.where(usable, d_axis, 1.0), np.inf)
        hit_point = origin + s[..., None] * dirs
        others = [a for a in range(3) if a != axis]
        inside = (
            usable
            & (s > 1e-9)
            & (np.abs(hit_point[..., others[0]]) <= _BOX_HALF + 1e-9)
            & (np.abs(hit_point[..., others[1]]) <= _BOX_HALF + 1e-9)
        )
        closer = inside & (s < best_s)
        if not np.any(closer):
            continue
        a = hit_point[..., others[0]][closer]
        b = hit_point[..., others[1]][closer]
        pattern = 0.75 + 0.20 * np.sin(2 * np.pi * a / 1.5) * np.sin(2 * np.pi * b / 1.5)
        color[closer] = base * pattern[:, None] + 0.08
        best_s[closer] = s[closer]
    hit = np.isfinite(best_s)
    color[~hit] = 0.0
    depth = np.where(hit, best_s, 0.0)
    return ImageGrid(color), DepthMap(depth, hit)


def _render_spheres(camera: CameraModel) -> tuple[ImageGrid, DepthMap]:
    dirs, origin = _rays(camera)
    height, width = dirs.shape[:2]
    best_s = np.full((height, width), np.inf)
    color = np.tile(_SKY, (height, width, 1))

    dy = dirs[..., 1]
    usable = dy > 1e-9 if origin[1] < _GROUND_Y else dy < -1e-9
    s_ground = np.where(usable, (_GROUND_Y - origin[1]) / np.where(usable, dy, 1.0), np.inf)
    ground_hit = usable & (s_ground > 1e-9)
    # Texture coordinates only matter where the ground is hit; zero out the
    # infinite miss distances so inf * 0 ray components cannot produce NaN.
    s_tex = np.where(ground_hit, s_ground, 0.0)
    gx = origin[0] + s_tex * dirs[..., 0]
    gz = origin[2] + s_tex * dirs[..., 2]
    shade = _soft_checker(gx, gz, 0.9)
    ground_color = np.stack([0.52 * shade + 0.18, 0.52 * shade + 0.18, 0.50 * shade + 0.17], axis=-1)
    take = ground_hit & (s_ground < best_s)
    color[take] = ground_color[take]
    best_s = np.where(take, s_ground, best_s)

    for center, radius, base in _SPHERES:
        oc = origin - center
        # Quadratic in the ray parameter s: |oc + s*d|^2 = r^2.
        a = np.einsum("hwc,hwc->hw", dirs, dirs)
        b = 2.0 * (dirs @ oc)
        c = oc @ oc - radius * radius
        disc = b * b - 4 * a * c
        hit = disc > 0
        sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
        s_near = (-b - sqrt_disc) / (2 * a)
        s_far = (-b + sqrt_disc) / (2 * a)
        s_hit = np.where(s_near > 1e-9, s_near, s_far)
        hit = hit & (s_hit > 1e-9)
        point = origin + s_hit[..., None] * dirs
        normal = (point - center) / radius
        lambert = np.clip(-(normal @ _LIGHT), 0.0, 1.0)
        sphere_color = base * (0.45 + 0.5 * lambert[..., None])
        take = hit & (s_hit < best_s)
        color[take] = sphere_color[take]
        best_s = np.where(take, s_hit, best_s)

    hit = np.isfinite(best_s)
    depth = np.where(hit, best_s, 0.0)
    return ImageGrid(np.clip(color, 0.0, 1.0)), DepthMap(depth, hit)


_SCENES = {
    "plane": _render_plane,
    "box": _render_box,
    "spheres": _render_spheres,
}


def scene_ids() -> tuple[str, ...]:
    return tuple(sorted(_SCENES))


def render_synthetic(scene_id: str, camera: CameraModel) -> tuple[ImageGrid, DepthMap]:
    """Render a registered procedural scene.

    Deterministic: identical inputs produce bit-identical outputs.

    Args:
        scene_id: One of ``scene_ids()``.
        camera: Intrinsics and camera-to-world pose to render from.

    Returns:
        (image, depth): colors in [0, 1], exact camera-frame z depth with
        validity false where no surface is hit.
    """
    try:
        renderer = _SCENES[scene_id]
    except KeyError:
        raise ValueError(
            f"unknown scene {scene_id!r}; registered scenes: {', '.join(scene_ids())}"
        ) from None
    return renderer(camera)


def scene_depth_at(scene_id: str, camera: CameraModel) -> DepthMap:
    """Exact depth of a scene at an arbitrary camera (renders and discards color)."""
    return render_synthetic(scene_id, camera)[1]


def canonical_camera(scene_id: str, width: int = 64, height: int = 64) -> CameraModel:
    """Reference camera used by tests and the command line for a scene.

    Focal length equals the image width (about 53 degrees horizontal field of
    view), principal point at the image center. The plane and box scenes look
    straight down +z from the origin; the spheres scene pitches down so the
    ground fills most of the frame.
    """
    if scene_id not in _SCENES:
        raise ValueError(
            f"unknown scene {scene_id!r}; registered scenes: {', '.join(scene_ids())}"
        )
    intr = CameraIntrinsics(
        fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )
    if scene_id == "spheres":
        pose = Pose(Rotation.from_euler("x", -0.4).as_matrix(), np.zeros(3))
    else:
        pose = Pose.identity()
    return CameraModel(intr, pose)
