import numpy as np
import pytest

from app.core.errors import DegenerateConfigurationError
from app.services.geometry import RigidPose, camera_pose_from_ego, invert, pixel_grid, warp_points
from app.services.numerics import bilinear_sample
from app.services.synthetic import (
    SCENE_PRESETS,
    Correspondence,
    Sphere,
    ego_motion_from,
    gt_correspondences,
    make_surround_rig,
    make_two_frame_sequence,
    plane_scene,
    pseudo_depth_from_matches,
    render,
    render_camera,
    sparse_pseudo_depth,
    strip_mask,
    strip_scene,
    triangulate,
    value_noise,
    wall_scene,
)


def project(camera, point):
    local = invert(camera.extrinsic).apply(np.asarray(point, dtype=np.float64))
    K = camera.intrinsics
    return np.array([K.fx * local[0] / local[2] + K.cx, K.fy * local[1] / local[2] + K.cy]), local[2]


@pytest.fixture(scope="module")
def small_wall(small_rig):
    return make_two_frame_sequence(wall_scene(seed=5), small_rig, ego_motion_from(0.0, (0.3, 0.0, 0.0)))


class TestRendering:
    def test_plane_depth_is_constant(self, origin_camera):
        _, depth = render_camera(plane_scene(10.0), origin_camera, RigidPose.identity())
        np.testing.assert_allclose(depth, 10.0, rtol=1e-12)

    def test_sphere_on_axis(self):
        sphere = Sphere([0.0, 0.0, 7.0], 2.0)
        t = sphere.intersect(np.zeros(3), np.array([[0.0, 0.0, 1.0]]))
        assert t[0] == pytest.approx(5.0)

    def test_forward_motion_toward_plane(self, origin_rig):
        sequence = make_two_frame_sequence(plane_scene(10.0), origin_rig, ego_motion_from(0.0, (1.0, 0.0, 0.0)))
        np.testing.assert_allclose(sequence.previous[0].depth_gt.depth, 10.0, rtol=1e-12)
        np.testing.assert_allclose(sequence.current[0].depth_gt.depth, 9.0, rtol=1e-12)

    def test_zero_motion_frames_identical(self, small_rig):
        sequence = make_two_frame_sequence(wall_scene(), small_rig, RigidPose.identity())
        for before, after in zip(sequence.previous, sequence.current):
            np.testing.assert_array_equal(before.image, after.image)

    def test_deterministic(self, small_rig):
        first = render(wall_scene(seed=2), small_rig, RigidPose.identity())
        second = render(wall_scene(seed=2), small_rig, RigidPose.identity())
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.depth_gt.depth, b.depth_gt.depth)

    def test_seed_changes_texture(self, small_rig):
        a = render(wall_scene(seed=1), small_rig, RigidPose.identity())[0].image
        b = render(wall_scene(seed=2), small_rig, RigidPose.identity())[0].image
        assert not np.array_equal(a, b)

    def test_images_in_unit_range(self, small_wall):
        for frame in small_wall.current:
            assert frame.image.shape == (16, 32, 3)
            assert frame.image.min() >= 0.0 and frame.image.max() <= 1.0

    def test_recorded_pose_is_consistent_with_depth(self, rig):
        motion = ego_motion_from(5.0, (0.5, 0.0, 0.0))
        sequence = make_two_frame_sequence(wall_scene(seed=4), rig, motion)
        np.testing.assert_allclose(sequence.ego_motion.matrix, motion.matrix)
        camera = rig.camera(0)
        rel = camera_pose_from_ego(sequence.ego_motion, camera.extrinsic)
        warp = warp_points(
            pixel_grid(camera.height, camera.width), sequence.current[0].depth_gt.depth,
            camera.intrinsics, camera.intrinsics, rel, (camera.width, camera.height),
        )
        previous, inside = bilinear_sample(sequence.previous[0].depth_gt.depth[..., None], warp.coords)
        seen = warp.valid & (inside > 0)
        assert seen.mean() > 0.8
        np.testing.assert_allclose(previous[..., 0][seen], warp.depth[seen], rtol=1e-2)

    def test_camera_outside_backdrop(self, rig):
        with pytest.raises(DegenerateConfigurationError):
            render(wall_scene(radius=1.0), rig, RigidPose.identity())

    def test_value_noise_range(self, rng):
        values = value_noise(rng.uniform(-20, 20, size=(500, 3)), 0.7, key=3)
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_presets(self, small_rig):
        for name, factory in SCENE_PRESETS.items():
            frames = render(factory(), small_rig, RigidPose.identity())
            assert len(frames) == 6, name


class TestTriangulation:
    def test_exact_projection(self, rig):
        point = np.array([5.0 * np.cos(np.deg2rad(30)), 5.0 * np.sin(np.deg2rad(30)), 1.2])
        cam_a, cam_b = rig.camera(0), rig.camera(1)
        p_a, z_a = project(cam_a, point)
        p_b, _ = project(cam_b, point)
        depth, residual = triangulate(p_a, p_b, cam_a, cam_b)
        assert depth == pytest.approx(z_a, abs=1e-9)
        assert residual < 1e-9

    def test_perturbed_correspondence(self, rig):
        point = np.array([5.0 * np.cos(np.deg2rad(30)), 5.0 * np.sin(np.deg2rad(30)), 1.2])
        cam_a, cam_b = rig.camera(0), rig.camera(1)
        p_a, z_a = project(cam_a, point)
        p_b, _ = project(cam_b, point)
        depth, residual = triangulate(p_a, p_b + [0.0, 0.5], cam_a, cam_b)
        assert residual > 0
        assert depth == pytest.approx(z_a, rel=0.05)

    def test_shared_center(self):
        rig = make_surround_rig(6, 32, 16, radius=0.0)
        with pytest.raises(DegenerateConfigurationError):
            triangulate([10.0, 8.0], [3.0, 8.0], rig.camera(0), rig.camera(1))

    def test_parallel_rays(self):
        rig = make_surround_rig(2, 32, 16)
        # both cameras' principal rays are collinear and point away from each other
        with pytest.raises(DegenerateConfigurationError):
            triangulate([15.5, 7.5], [15.5, 7.5], rig.camera(0), rig.camera(1))


class TestPseudoDepth:
    def test_gt_correspondences_recover_depth(self, small_wall, small_rig):
        pseudo = sparse_pseudo_depth(small_wall.current, small_rig, 0)
        mask = pseudo.depth.valid
        assert mask.any()
        gt = small_wall.current[0].depth_gt.depth
        np.testing.assert_allclose(pseudo.depth.depth[mask], gt[mask], rtol=1e-6)
        assert pseudo.rejected == 0

    def test_external_correspondences(self, small_wall, small_rig):
        neighbor, pairs = gt_correspondences(small_wall.current, small_rig, 0)[0]
        matches = [Correspondence(0, neighbor, *row) for row in pairs[:20]]
        matches.append(Correspondence(3, 4, 1.0, 1.0, 2.0, 2.0))
        pseudo = sparse_pseudo_depth(small_wall.current, small_rig, 0, matches)
        assert pseudo.depth.valid.sum() == 20

    def test_no_overlap_gives_empty_mask(self):
        rig = make_surround_rig(3, 32, 16, hfov_deg=60.0)
        frames = render(wall_scene(), rig, RigidPose.identity())
        assert not sparse_pseudo_depth(frames, rig, 0).depth.valid.any()

    def test_outliers_are_gated(self, small_wall, small_rig, rng):
        neighbor, pairs = gt_correspondences(small_wall.current, small_rig, 0)[0]
        pairs = pairs.copy()
        outliers = rng.choice(len(pairs), size=max(1, len(pairs) // 10), replace=False)
        pairs[outliers, 3] += 6.0
        pseudo = pseudo_depth_from_matches(small_rig, 0, [(neighbor, pairs)])
        assert pseudo.rejected >= 0.9 * len(outliers)


class TestStripMask:
    def test_band_is_seen_by_front_camera(self, small_rig):
        scene = strip_scene()
        frame = render(scene, small_rig, RigidPose.identity())[0]
        mask = strip_mask(small_rig, 0, scene, frame.depth_gt)
        assert mask.any() and not mask.all()
        # positive azimuth is to the left of the front camera
        assert mask[:, : small_rig.camera(0).width // 2].sum() > mask[:, small_rig.camera(0).width // 2:].sum()

    def test_scene_without_band(self, small_rig):
        frame = render(wall_scene(), small_rig, RigidPose.identity())[0]
        assert not strip_mask(small_rig, 0, wall_scene(), frame.depth_gt).any()

    def test_follows_ego_pose(self, small_rig):
        scene = strip_scene()
        motion = ego_motion_from(20.0)
        frame = render(scene, small_rig, motion)[0]
        moved = strip_mask(small_rig, 0, scene, frame.depth_gt, motion)
        still = strip_mask(small_rig, 0, scene, frame.depth_gt)
        assert moved.sum() != still.sum()
