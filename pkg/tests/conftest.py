"""Shared fixtures: small rendered scenes and pose helpers."""

from __future__ import annotations

import numpy as np
import pytest

from warpguide import CameraModel, canonical_camera, render_synthetic
from warpguide.geometry import Pose


class SceneFixture:
    """Camera plus rendered image/depth for one synthetic scene."""

    def __init__(self, scene_id: str, size: int) -> None:
        self.scene_id = scene_id
        self.camera = canonical_camera(scene_id, size, size)
        self.image, self.depth = render_synthetic(scene_id, self.camera)

    def render_at(self, pose: Pose):
        return render_synthetic(self.scene_id, CameraModel(self.camera.intrinsics, pose))


@pytest.fixture(scope="session")
def plane32() -> SceneFixture:
    return SceneFixture("plane", 32)


@pytest.fixture(scope="session")
def plane64() -> SceneFixture:
    return SceneFixture("plane", 64)


@pytest.fixture(scope="session")
def box64() -> SceneFixture:
    return SceneFixture("box", 64)


def translate_pose(pose: Pose, offset_cam) -> Pose:
    """Pose moved by offset_cam expressed in its own camera frame."""
    offset = np.asarray(offset_cam, dtype=np.float64)
    return Pose(pose.rotation, pose.translation + pose.rotation @ offset)
