"""Camera algebra, reprojection, splatting, scenes, and scene files."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from warpguide import canonical_camera, render_synthetic
from warpguide.geometry import (
    CameraIntrinsics,
    DepthMap,
    ImageGrid,
    Pose,
    WarpResult,
    WarpStrategy,
    forward_warp,
    load_depth,
    load_intrinsics,
    load_png,
    load_poses,
    load_scene_views,
    look_at,
    pose_distance,
    relative_pose,
    reproject_pixels,
    save_depth,
    save_intrinsics,
    save_png,
    save_poses,
    save_scene_views,
    scene_ids,
    select_source,
    warp_prior,
)

from conftest import translate_pose
from oracles import brute_force_warp, rotation_angle


def random_pose(rng: np.random.Generator, rot_scale: float = 0.3, t_scale: float = 1.0) -> Pose:
    rotation = Rotation.from_rotvec(rng.normal(0.0, rot_scale, 3)).as_matrix()
    return Pose(rotation, rng.normal(0.0, t_scale, 3))


class TestPoseAlgebra:
    def test_compose_inverse_apply_are_consistent(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a, b = random_pose(rng), random_pose(rng)
            points = rng.normal(size=(7, 3))
            assert_allclose(a.compose(b).apply(points), a.apply(b.apply(points)), atol=1e-12)
            assert_allclose(a.inverse().apply(a.apply(points)), points, atol=1e-12)

    def test_matrix_matches_apply(self):
        rng = np.random.default_rng(12)
        pose = random_pose(rng)
        points = rng.normal(size=(5, 3))
        homo = np.concatenate([points, np.ones((5, 1))], axis=1)
        assert_allclose((pose.matrix() @ homo.T).T[:, :3], pose.apply(points), atol=1e-12)

    def test_identity(self):
        ident = Pose.identity()
        assert_array_equal(ident.rotation, np.eye(3))
        assert_array_equal(ident.translation, np.zeros(3))

    def test_relative_pose_maps_source_camera_to_target_camera(self):
        rng = np.random.default_rng(13)
        source, target = random_pose(rng), random_pose(rng)
        rel = relative_pose(source, target)
        points = rng.normal(size=(6, 3))
        expected = target.inverse().apply(source.apply(points))
        assert_allclose(rel.apply(points), expected, atol=1e-12)

    def test_rejects_non_rotation_matrix(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))


class TestPoseDistance:
    def test_pure_translation(self):
        a = Pose.identity()
        b = Pose(np.eye(3), np.array([3.0, 4.0, 0.0]))
        assert_allclose(pose_distance(a, b), 5.0, rtol=1e-12)

    def test_pure_rotation_matches_matrix_log(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            rotvec = rng.normal(0.0, 0.6, 3)
            a = Pose.identity()
            b = Pose(Rotation.from_rotvec(rotvec).as_matrix(), np.zeros(3))
            rel = relative_pose(a, b)
            assert_allclose(pose_distance(a, b), rotation_angle(rel.rotation), rtol=1e-9)

    def test_rotation_weight_scales_angle_term(self):
        a = Pose.identity()
        b = Pose(Rotation.from_euler("z", 0.5).as_matrix(), np.zeros(3))
        assert_allclose(pose_distance(a, b, rotation_weight=2.0), 1.0, rtol=1e-12)

    def test_symmetric_and_zero_at_identity(self):
        rng = np.random.default_rng(22)
        a, b = random_pose(rng), random_pose(rng)
        assert_allclose(pose_distance(a, b), pose_distance(b, a), rtol=1e-12)
        assert pose_distance(a, a) == 0.0

    def test_combined_terms(self):
        angle = 0.3
        a = Pose.identity()
        rel_rot = Rotation.from_euler("x", angle).as_matrix()
        b = Pose(rel_rot, np.array([0.4, 0.0, 0.0]))
        # Relative translation passes through the rotation but keeps norm 0.4.
        assert_allclose(pose_distance(a, b), np.hypot(0.4, angle), rtol=1e-9)


class TestLookAt:
    def test_camera_sits_at_eye_and_faces_center(self):
        eye = np.array([1.0, -2.0, 0.5])
        center = np.array([0.0, 0.0, 3.0])
        pose = look_at(eye, center, down=np.array([0.0, 1.0, 0.0]))
        assert_allclose(pose.translation, eye, atol=1e-12)
        forward = (center - eye) / np.linalg.norm(center - eye)
        assert_allclose(pose.rotation[:, 2], forward, atol=1e-12)

    def test_rotation_is_orthonormal_right_handed(self):
        pose = look_at(np.array([2.0, 1.0, -1.0]), np.zeros(3), down=np.array([0.1, 1.0, 0.0]))
        rot = pose.rotation
        assert_allclose(rot.T @ rot, np.eye(3), atol=1e-12)
        assert_allclose(np.linalg.det(rot), 1.0, rtol=1e-12)

    def test_center_projects_to_principal_point(self):
        intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
        eye = np.array([0.3, 0.7, -2.0])
        center = np.array([0.1, -0.2, 1.0])
        pose = look_at(eye, center, down=np.array([0.0, 1.0, 0.0]))
        cam_point = pose.inverse().apply(center[None])[0]
        u = intr.fx * cam_point[0] / cam_point[2] + intr.cx
        v = intr.fy * cam_point[1] / cam_point[2] + intr.cy
        assert_allclose([u, v], [intr.cx, intr.cy], atol=1e-9)

    def test_rejects_degenerate_axes(self):
        with pytest.raises(ValueError):
            look_at(np.zeros(3), np.zeros(3), down=np.array([0.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            look_at(np.zeros(3), np.array([0.0, 0.0, 1.0]), down=np.array([0.0, 0.0, 1.0]))


class TestReprojectPixels:
    def test_identity_delta_keeps_pixel_centers(self, plane32):
        result = reproject_pixels(plane32.camera.intrinsics, plane32.depth, Pose.identity())
        centers = plane32.camera.intrinsics.pixel_centers()
        assert_allclose(result.coords, centers, rtol=1e-12)
        assert_allclose(result.depth, plane32.depth.values, rtol=1e-12)
        assert_array_equal(result.valid, plane32.depth.valid)

    def test_lateral_translation_shifts_u_by_fx_b_over_z(self, plane32):
        intr = plane32.camera.intrinsics
        b = 0.17
        target = translate_pose(plane32.camera.pose, [b, 0.0, 0.0])
        delta = relative_pose(plane32.camera.pose, target)
        result = reproject_pixels(intr, plane32.depth, delta)
        centers = intr.pixel_centers()
        expected_u = centers[..., 0] - intr.fx * b / plane32.depth.values
        # Columns shifted beyond splat reach are invalid and zero-filled, so
        # compare coordinates on the valid region only.
        assert_array_equal(result.valid, expected_u > -0.5)
        valid = result.valid
        assert valid.any()
        assert_allclose(result.coords[..., 0][valid], expected_u[valid], rtol=1e-10)
        assert_allclose(result.coords[..., 1][valid], centers[..., 1][valid], rtol=1e-10)
        assert_allclose(result.depth[valid], plane32.depth.values[valid], rtol=1e-12)

    def test_points_behind_camera_are_invalid(self):
        intr = CameraIntrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8)
        depth = DepthMap.from_values(np.full((8, 8), 1.0))
        # Push everything 2 units along -z so transformed depth is negative.
        delta = Pose(np.eye(3), np.array([0.0, 0.0, -2.0]))
        result = reproject_pixels(intr, depth, delta)
        assert not result.valid.any()

    def test_coordinates_out_of_splat_reach_are_invalid(self):
        intr = CameraIntrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8)
        depth = DepthMap.from_values(np.full((8, 8), 1.0))
        delta = Pose(np.eye(3), np.array([3.0, 0.0, 0.0]))  # shift u by -24 pixels
        result = reproject_pixels(intr, depth, delta)
        assert not result.valid.any()

    def test_rejects_depth_shape_mismatch(self):
        intr = CameraIntrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8)
        with pytest.raises(ValueError):
            reproject_pixels(intr, DepthMap.from_values(np.ones((4, 8))), Pose.identity())


class TestForwardWarp:
    def two_pixel_source(self):
        image = ImageGrid(np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]]))
        return image

    def test_nearer_contribution_occludes(self):
        image = self.two_pixel_source()
        # Both source pixels land exactly on the center of target pixel (0, 0).
        coords = np.array([[[0.5, 0.5], [0.5, 0.5]]])
        depth = np.array([[1.0, 2.0]])
        result = forward_warp(image, coords, depth)
        assert result.validity[0, 0]
        assert_allclose(result.image.data[0, 0], [1.0, 0.0, 0.0], rtol=1e-12)
        assert not result.validity[0, 1]
        assert_array_equal(result.image.data[0, 1], np.zeros(3))

    def test_contributions_inside_depth_window_blend(self):
        image = self.two_pixel_source()
        coords = np.array([[[0.5, 0.5], [0.5, 0.5]]])
        depth = np.array([[1.0, 1.04]])  # within the 5 percent window
        result = forward_warp(image, coords, depth)
        assert_allclose(result.image.data[0, 0], [0.5, 0.5, 0.0], rtol=1e-12)

    def test_depth_tolerance_widens_the_window(self):
        image = self.two_pixel_source()
        coords = np.array([[[0.5, 0.5], [0.5, 0.5]]])
        depth = np.array([[1.0, 1.4]])
        occluded = forward_warp(image, coords, depth)
        blended = forward_warp(image, coords, depth, depth_tolerance=0.5)
        assert_allclose(occluded.image.data[0, 0], [1.0, 0.0, 0.0], rtol=1e-12)
        assert_allclose(blended.image.data[0, 0], [0.5, 0.5, 0.0], rtol=1e-12)

    def test_halfway_landing_splits_weight_across_two_pixels(self):
        image = ImageGrid(np.array([[[0.2, 0.4, 0.8]]]))
        coords = np.array([[[1.0, 0.5]]])  # on the vertical edge between pixels 0 and 1
        depth = np.array([[1.0]])
        result = forward_warp(
            ImageGrid(np.zeros((1, 2, 3))), np.zeros((1, 2, 2)), np.zeros((1, 2)),
        )
        assert not result.validity.any()
        wide = forward_warp(image, coords, depth)
        # Splat grid is 1x1 here, so only the left corner exists; color survives.
        assert wide.validity[0, 0]
        assert_allclose(wide.image.data[0, 0], [0.2, 0.4, 0.8], rtol=1e-12)

    def test_source_valid_mask_drops_contributions(self):
        image = self.two_pixel_source()
        coords = np.array([[[0.5, 0.5], [0.5, 0.5]]])
        depth = np.array([[1.0, 1.0]])
        result = forward_warp(image, coords, depth, source_valid=np.array([[False, True]]))
        assert_allclose(result.image.data[0, 0], [0.0, 1.0, 0.0], rtol=1e-12)

    def test_identity_coords_copy_the_image(self, plane32):
        intr = plane32.camera.intrinsics
        result = forward_warp(
            plane32.image, intr.pixel_centers(), plane32.depth.values,
            source_valid=plane32.depth.valid,
        )
        assert result.coverage == 1.0
        assert_allclose(result.image.data, plane32.image.data, rtol=1e-12)

    def test_matches_brute_force_reference_on_random_poses(self):
        rng = np.random.default_rng(31)
        intr = CameraIntrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8)
        image = ImageGrid(rng.uniform(0.0, 1.0, (8, 8, 3)))
        depth_values = 2.0 + 0.3 * rng.standard_normal((8, 8)).cumsum(axis=1) / 4.0
        depth = DepthMap.from_values(np.abs(depth_values) + 0.5)
        for _ in range(4):
            delta = Pose(
                Rotation.from_rotvec(rng.normal(0.0, 0.05, 3)).as_matrix(),
                rng.normal(0.0, 0.15, 3),
            )
            reproj = reproject_pixels(intr, depth, delta)
            got = forward_warp(image, reproj.coords, reproj.depth, source_valid=reproj.valid)
            expected, expected_valid = brute_force_warp(
                image.data, depth.values, depth.valid,
                intr.fx, intr.fy, intr.cx, intr.cy,
                delta.rotation, delta.translation,
            )
            assert_array_equal(got.validity, expected_valid)
            assert_allclose(got.image.data, expected, atol=1e-10)

    def test_rejects_mismatched_shapes(self):
        image = self.two_pixel_source()
        with pytest.raises(ValueError):
            forward_warp(image, np.zeros((2, 2, 2)), np.ones((1, 2)))
        with pytest.raises(ValueError):
            forward_warp(image, np.zeros((1, 2, 2)), np.ones((2, 2)))
        with pytest.raises(ValueError):
            forward_warp(image, np.zeros((1, 2, 2)), np.ones((1, 2)), source_valid=np.ones((2, 2), bool))


class TestSyntheticScenes:
    def test_registered_scene_ids(self):
        assert scene_ids() == ("box", "plane", "spheres")

    @pytest.mark.parametrize("scene_id", ["plane", "box", "spheres"])
    def test_render_is_deterministic(self, scene_id):
        camera = canonical_camera(scene_id, 24, 24)
        image_a, depth_a = render_synthetic(scene_id, camera)
        image_b, depth_b = render_synthetic(scene_id, camera)
        assert_array_equal(image_a.data, image_b.data)
        assert_array_equal(depth_a.values, depth_b.values)
        assert_array_equal(depth_a.valid, depth_b.valid)

    @pytest.mark.parametrize("scene_id", ["plane", "box", "spheres"])
    def test_colors_in_unit_range_and_depth_positive_where_valid(self, scene_id):
        camera = canonical_camera(scene_id, 24, 24)
        image, depth = render_synthetic(scene_id, camera)
        assert image.data.min() >= 0.0 and image.data.max() <= 1.0
        assert np.all(depth.values[depth.valid] > 0.0)

    def test_plane_and_box_fill_the_frame(self):
        for scene_id in ("plane", "box"):
            camera = canonical_camera(scene_id, 16, 16)
            _, depth = render_synthetic(scene_id, camera)
            assert depth.valid.all()

    def test_canonical_camera_intrinsics(self):
        camera = canonical_camera("plane", 48, 36)
        intr = camera.intrinsics
        assert (intr.fx, intr.fy) == (48.0, 48.0)
        assert (intr.cx, intr.cy) == (24.0, 18.0)
        assert (intr.width, intr.height) == (48, 36)

    def test_unknown_scene_rejected(self):
        with pytest.raises(ValueError):
            render_synthetic("tunnel", canonical_camera("plane", 8, 8))
        with pytest.raises(ValueError):
            canonical_camera("tunnel")


class TestSourceSelection:
    def make_view(self, pose: Pose, size: int = 4):
        image = ImageGrid(np.zeros((size, size, 3)))
        depth = DepthMap.from_values(np.ones((size, size)))
        return (image, depth, pose)

    def test_single_requires_exactly_one_source(self):
        views = [self.make_view(Pose.identity()), self.make_view(Pose.identity())]
        with pytest.raises(ValueError):
            select_source(views, Pose.identity(), WarpStrategy.SINGLE)
        assert select_source(views[:1], Pose.identity(), WarpStrategy.SINGLE) == 0

    def test_nearest_multi_picks_closest_pose_lowest_index_on_ties(self):
        far = self.make_view(Pose(np.eye(3), np.array([5.0, 0.0, 0.0])))
        near = self.make_view(Pose(np.eye(3), np.array([0.5, 0.0, 0.0])))
        target = Pose.identity()
        assert select_source([far, near], target, WarpStrategy.NEAREST_MULTI) == 1
        twin = self.make_view(Pose(np.eye(3), np.array([0.5, 0.0, 0.0])))
        assert select_source([near, twin], target, WarpStrategy.NEAREST_MULTI) == 0

    def test_per_timestamp_requires_index_in_range(self):
        views = [self.make_view(Pose.identity()) for _ in range(3)]
        assert select_source(views, Pose.identity(), WarpStrategy.PER_TIMESTAMP, time_index=2) == 2
        with pytest.raises(ValueError):
            select_source(views, Pose.identity(), WarpStrategy.PER_TIMESTAMP)
        with pytest.raises(ValueError):
            select_source(views, Pose.identity(), WarpStrategy.PER_TIMESTAMP, time_index=3)

    def test_empty_sources_rejected(self):
        with pytest.raises(ValueError):
            select_source([], Pose.identity(), WarpStrategy.SINGLE)

    def test_warp_prior_at_source_pose_reproduces_the_view(self, plane32):
        views = [(plane32.image, plane32.depth, plane32.camera.pose)]
        result = warp_prior(
            views, plane32.camera.pose, plane32.camera.intrinsics, WarpStrategy.SINGLE
        )
        assert result.coverage == 1.0
        assert_allclose(result.image.data, plane32.image.data, rtol=1e-12)

    def test_warp_prior_uses_the_nearest_source(self, plane32):
        offset = translate_pose(plane32.camera.pose, [0.2, 0.0, 0.0])
        offset_image, offset_depth = plane32.render_at(offset)
        views = [
            (plane32.image, plane32.depth, plane32.camera.pose),
            (offset_image, offset_depth, offset),
        ]
        result = warp_prior(views, offset, plane32.camera.intrinsics, WarpStrategy.NEAREST_MULTI)
        # Target equals the second source pose, so the warp is an exact copy.
        assert result.coverage == 1.0
        assert_allclose(result.image.data, offset_image.data, rtol=1e-12)


class TestGridContainers:
    def test_warp_result_coverage(self):
        validity = np.zeros((4, 4), dtype=bool)
        validity[:2] = True
        result = WarpResult.from_mask(np.zeros((4, 4, 3)), validity)
        assert result.coverage == 0.5

    def test_depth_map_from_values_marks_nonpositive_invalid(self):
        values = np.array([[1.0, 0.0], [-2.0, 3.0]])
        depth = DepthMap.from_values(values)
        assert_array_equal(depth.valid, [[True, False], [False, True]])

    def test_image_grid_requires_rank3(self):
        with pytest.raises(ValueError):
            ImageGrid(np.zeros((4, 4)))


class TestSceneFiles:
    def test_png_round_trip_is_exact_for_byte_colors(self, tmp_path):
        rng = np.random.default_rng(41)
        data = rng.integers(0, 256, (6, 5, 3)).astype(np.float64) / 255.0
        path = tmp_path / "img.png"
        save_png(path, ImageGrid(data))
        assert_allclose(load_png(path).data, data, atol=1e-12)

    def test_depth_round_trip_preserves_f32_values_and_validity(self, tmp_path):
        values = np.array([[0.5, 2.25], [0.0, 125.0]])
        depth = DepthMap.from_values(values)
        save_depth(tmp_path / "d", depth)
        restored = load_depth(tmp_path / "d")
        assert_array_equal(restored.valid, depth.valid)
        assert_array_equal(restored.values[restored.valid], values[depth.valid])

    def test_depth_header_mismatch_rejected(self, tmp_path):
        depth = DepthMap.from_values(np.ones((2, 2)))
        save_depth(tmp_path / "d", depth)
        (tmp_path / "d.raw").write_bytes(b"\x00" * 4)
        with pytest.raises(ValueError):
            load_depth(tmp_path / "d")

    def test_pose_and_intrinsics_round_trips(self, tmp_path):
        rng = np.random.default_rng(42)
        poses = [random_pose(rng) for _ in range(3)]
        save_poses(tmp_path / "poses.json", poses)
        restored = load_poses(tmp_path / "poses.json")
        for before, after in zip(poses, restored):
            assert_array_equal(after.rotation, before.rotation)
            assert_array_equal(after.translation, before.translation)
        intr = CameraIntrinsics(fx=10.0, fy=11.0, cx=3.5, cy=4.5, width=8, height=9)
        save_intrinsics(tmp_path / "intrinsics.json", intr)
        assert load_intrinsics(tmp_path / "intrinsics.json") == intr

    def test_scene_directory_round_trip(self, tmp_path, plane32):
        # Quantize colors to bytes first so the PNG leg is lossless.
        quantized = ImageGrid(np.round(plane32.image.data * 255.0) / 255.0)
        views = [(quantized, plane32.depth, plane32.camera.pose)]
        save_scene_views(tmp_path / "scene", plane32.camera.intrinsics, views)
        intr, restored = load_scene_views(tmp_path / "scene")
        assert intr == plane32.camera.intrinsics
        assert len(restored) == 1
        image, depth, pose = restored[0]
        assert_allclose(image.data, quantized.data, atol=1e-12)
        assert_array_equal(depth.valid, plane32.depth.valid)
        assert_allclose(depth.values, plane32.depth.values, rtol=1e-6)
        assert_array_equal(pose.rotation, plane32.camera.pose.rotation)
