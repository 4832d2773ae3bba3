"""File formats for images, depth maps, poses, and scene directories.

Formats are deliberately minimal and hermetic:

* Images: 8-bit PNG (via Pillow) and ASCII PPM (P3), both clamping values
  from [0, 1] to [0, 255].
* Depth: raw 32-bit little-endian floats (row-major) next to a JSON header
  ``{"width", "height", "units"}``. Invalid pixels are stored as NaN in the
  raw stream and reconstructed as invalid on load.
* Poses: a JSON list of ``{"rotation": [9 floats, row-major], "translation":
  [3 floats]}``.
* Scene directory: ``intrinsics.json``, ``poses.json``, and per view
  ``view_NNN.png`` + ``view_NNN.raw``/``view_NNN.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import CameraIntrinsics, Pose
from .grids import DepthMap, ImageGrid

__all__ = [
    "save_png",
    "load_png",
    "save_ppm",
    "save_depth",
    "load_depth",
    "save_poses",
    "load_poses",
    "save_intrinsics",
    "load_intrinsics",
    "save_scene_views",
    "load_scene_views",
]

_PNG_MODES = {1: "L", 3: "RGB", 4: "RGBA"}


def _to_bytes(image: ImageGrid) -> np.ndarray:
    clamped = np.clip(image.data, 0.0, 1.0)
    return np.round(clamped * 255.0).astype(np.uint8)


def save_png(path: str | Path, image: ImageGrid) -> None:
    mode = _PNG_MODES.get(image.channels)
    if mode is None:
        raise ValueError(f"PNG export supports 1, 3, or 4 channels, got {image.channels}")
    data = _to_bytes(image)
    if mode == "L":
        data = data[..., 0]
    Image.fromarray(data, mode=mode).save(Path(path), format="PNG")


def load_png(path: str | Path) -> ImageGrid:
    with Image.open(Path(path)) as img:
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return ImageGrid(arr)


def save_ppm(path: str | Path, image: ImageGrid) -> None:
    """ASCII PPM (P3). Single-channel images are replicated to gray RGB."""
    if image.channels == 1:
        data = np.repeat(_to_bytes(image), 3, axis=2)
    elif image.channels == 3:
        data = _to_bytes(image)
    else:
        raise ValueError(f"PPM export supports 1 or 3 channels, got {image.channels}")
    height, width = data.shape[:2]
    lines = [f"P3", f"{width} {height}", "255"]
    for row in data.reshape(height, width * 3):
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def save_depth(path_base: str | Path, depth: DepthMap, units: str = "scene") -> None:
    """Write ``<base>.raw`` (f32 LE, NaN marks invalid) and ``<base>.json``."""
    base = Path(path_base)
    values = np.where(depth.valid, depth.values, np.nan).astype("<f4")
    base.with_suffix(".raw").write_bytes(values.tobytes())
    header = {"width": depth.shape[1], "height": depth.shape[0], "units": units}
    base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True), encoding="utf-8")


def load_depth(path_base: str | Path) -> DepthMap:
    base = Path(path_base)
    header = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    raw = np.frombuffer(base.with_suffix(".raw").read_bytes(), dtype="<f4")
    expected = header["width"] * header["height"]
    if raw.size != expected:
        raise ValueError(
            f"depth payload has {raw.size} values, header promises {expected}"
        )
    values = raw.reshape(header["height"], header["width"]).astype(np.float64)
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(np.where(valid, values, 0.0), valid)


def save_poses(path: str | Path, poses: list[Pose]) -> None:
    payload = [
        {
            "rotation": [float(v) for v in pose.rotation.reshape(-1)],
            "translation": [float(v) for v in pose.translation],
        }
        for pose in poses
    ]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_poses(path: str | Path) -> list[Pose]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        Pose(np.array(item["rotation"], dtype=np.float64).reshape(3, 3),
             np.array(item["translation"], dtype=np.float64))
        for item in payload
    ]


def save_intrinsics(path: str | Path, intrinsics: CameraIntrinsics) -> None:
    payload = {
        "fx": intrinsics.fx, "fy": intrinsics.fy,
        "cx": intrinsics.cx, "cy": intrinsics.cy,
        "width": intrinsics.width, "height": intrinsics.height,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_intrinsics(path: str | Path) -> CameraIntrinsics:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return CameraIntrinsics(
        fx=float(payload["fx"]), fy=float(payload["fy"]),
        cx=float(payload["cx"]), cy=float(payload["cy"]),
        width=int(payload["width"]), height=int(payload["height"]),
    )


def save_scene_views(
    directory: str | Path,
    intrinsics: CameraIntrinsics,
    views: list[tuple[ImageGrid, DepthMap, Pose]],
) -> None:
    """Persist views in the scene-directory layout consumed by the CLI."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_intrinsics(directory / "intrinsics.json", intrinsics)
    save_poses(directory / "poses.json", [pose for _, _, pose in views])
    for idx, (image, depth, _) in enumerate(views):
        save_png(directory / f"view_{idx:03d}.png", image)
        save_depth(directory / f"view_{idx:03d}", depth)


def load_scene_views(
    directory: str | Path,
) -> tuple[CameraIntrinsics, list[tuple[ImageGrid, DepthMap, Pose]]]:
    directory = Path(directory)
    intrinsics = load_intrinsics(directory / "intrinsics.json")
    poses = load_poses(directory / "poses.json")
    views = []
    for idx, pose in enumerate(poses):
        image = load_png(directory / f"view_{idx:03d}.png")
        depth = load_depth(directory / f"view_{idx:03d}")
        views.append((image, depth, pose))
    return intrinsics, views
