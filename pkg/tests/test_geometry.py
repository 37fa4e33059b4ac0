import numpy as np
import pytest

from app.core.errors import ConfigError, ContractViolation
from app.services.geometry import (
    Camera,
    CameraIntrinsics,
    CameraRig,
    RigidPose,
    camera_pose_from_ego,
    compose,
    ego_pose_from_front,
    invert,
    pixel_grid,
    rotation_z,
    spatial_relative_pose,
    warp_depth_derivative,
    warp_pixel,
    warp_points,
)
from app.services.synthetic import make_surround_rig

UNIT_K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)


def random_pose(rng):
    return RigidPose.from_vector(np.concatenate([rng.normal(scale=0.5, size=3), rng.normal(size=3)]))


def assert_pose_close(a: RigidPose, b: RigidPose, atol=1e-9):
    np.testing.assert_allclose(a.matrix, b.matrix, atol=atol)


class TestRigidPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ContractViolation):
            RigidPose(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(ContractViolation):
            RigidPose(2.0 * np.eye(3))

    def test_matrix_round_trip(self, rng):
        p = random_pose(rng)
        assert_pose_close(RigidPose.from_matrix(p.matrix[:3].reshape(-1)), p, atol=1e-15)

    def test_vector_round_trip(self, rng):
        p = random_pose(rng)
        assert_pose_close(RigidPose.from_vector(p.as_vector()), p, atol=1e-12)


class TestCompose:
    def test_identity_is_neutral(self, rng):
        p = random_pose(rng)
        assert_pose_close(compose(RigidPose.identity(), p), p)

    def test_inverse(self, rng):
        p = random_pose(rng)
        assert compose(invert(p), p).is_identity(atol=1e-9)

    def test_order(self):
        rz = RigidPose(rotation_z(90.0))
        shift = RigidPose(translation=[1.0, 0.0, 0.0])
        origin = np.zeros(3)
        np.testing.assert_allclose(compose(shift, rz).apply(origin), [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(compose(rz, shift).apply(origin), [0.0, 1.0, 0.0], atol=1e-12)

    def test_matches_matrix_product(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(compose(a, b).matrix, a.matrix @ b.matrix, atol=1e-12)


class TestEgoPose:
    def test_identity_extrinsic(self, rng):
        p = random_pose(rng)
        assert_pose_close(ego_pose_from_front(p, RigidPose.identity()), p)

    def test_identity_motion(self, rng):
        assert ego_pose_from_front(RigidPose.identity(), random_pose(rng)).is_identity(atol=1e-9)

    def test_rotated_front_camera(self):
        # camera-frame x of a camera yawed by 90 degrees points along ego y
        ego = ego_pose_from_front(RigidPose(translation=[1.0, 0.0, 0.0]), RigidPose(rotation_z(90.0)))
        np.testing.assert_allclose(ego.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(ego.translation, [0.0, 1.0, 0.0], atol=1e-12)

    def test_written_form_takes_ego_to_camera_transform(self, rng):
        front = RigidPose(translation=[1.0, 0.0, 0.0])
        extrinsic = RigidPose(rotation_z(90.0))
        written = compose(compose(invert(extrinsic), front), extrinsic)
        np.testing.assert_allclose(written.translation, [0.0, -1.0, 0.0], atol=1e-12)
        assert_pose_close(ego_pose_from_front(front, invert(extrinsic)), written)

        front, extrinsic = random_pose(rng), random_pose(rng)
        written = compose(compose(invert(extrinsic), front), extrinsic)
        assert_pose_close(ego_pose_from_front(front, invert(extrinsic)), written)
        assert not np.allclose(camera_pose_from_ego(written, extrinsic).matrix, front.matrix, atol=1e-6)

    def test_conjugations_are_inverse(self, rng):
        front, extrinsic = random_pose(rng), random_pose(rng)
        assert_pose_close(camera_pose_from_ego(ego_pose_from_front(front, extrinsic), extrinsic), front)

    def test_camera_pose_identity_cases(self, rng):
        p = random_pose(rng)
        assert_pose_close(camera_pose_from_ego(p, RigidPose.identity()), p)
        assert camera_pose_from_ego(RigidPose.identity(), random_pose(rng)).is_identity(atol=1e-9)


class TestSpatialRelativePose:
    def test_self_is_identity(self, rig):
        assert spatial_relative_pose(rig, 2, 2).is_identity(atol=1e-12)

    def test_pure_yaw(self):
        rig = make_surround_rig(6, 32, 16, radius=0.0)
        rel = spatial_relative_pose(rig, 0, 1)
        assert np.linalg.norm(rel.axis_angle()) == pytest.approx(np.deg2rad(60.0), abs=1e-12)
        # yaw about ego z is a rotation about the camera's vertical axis
        axis = rel.axis_angle() / np.linalg.norm(rel.axis_angle())
        assert abs(axis[1]) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(rel.translation, 0.0, atol=1e-12)

    def test_round_trip(self, rig):
        forth = spatial_relative_pose(rig, 0, 1)
        back = spatial_relative_pose(rig, 1, 0)
        assert compose(back, forth).is_identity(atol=1e-9)


class TestCameraRig:
    def test_asymmetric_adjacency(self, small_rig):
        with pytest.raises(ConfigError):
            CameraRig(small_rig.cameras[:3], ((1, 2), (0, 0), (1, 1)))

    def test_out_of_range_neighbor(self, small_rig):
        with pytest.raises(ConfigError):
            CameraRig(small_rig.cameras[:2], ((1, 5), (0, 0)))

    def test_scaled_intrinsics_keep_pixel_centers(self):
        K = CameraIntrinsics(80.0, 80.0, 79.5, 47.5)
        assert K.scaled(4) == CameraIntrinsics(20.0, 20.0, 19.5, 11.5)

    def test_scaled_requires_divisible_size(self):
        camera = Camera(UNIT_K, RigidPose.identity(), 10, 8)
        with pytest.raises(ContractViolation):
            camera.scaled(4)


class TestWarp:
    @pytest.mark.parametrize("d", [0.5, 3.0, 1e4])
    def test_identity(self, d):
        p_hat, valid = warp_pixel((3.0, 7.0), d, UNIT_K, UNIT_K, RigidPose.identity())
        np.testing.assert_array_equal(p_hat, [3.0, 7.0])
        assert valid

    def test_translation(self):
        p_hat, valid = warp_pixel((0.0, 0.0), 2.0, UNIT_K, UNIT_K, RigidPose(translation=[1.0, 0.0, 0.0]))
        np.testing.assert_allclose(p_hat, [0.5, 0.0], atol=1e-15)
        assert valid

    def test_behind_camera(self):
        _, valid = warp_pixel((0.0, 0.0), 2.0, UNIT_K, UNIT_K, RigidPose(translation=[0.0, 0.0, -5.0]))
        assert not valid

    def test_nonpositive_depth(self):
        with pytest.raises(ContractViolation):
            warp_pixel((0.0, 0.0), 0.0, UNIT_K, UNIT_K, RigidPose.identity())

    def test_destination_bounds(self):
        K = CameraIntrinsics(10.0, 10.0, 4.5, 4.5)
        _, valid = warp_pixel((4.5, 4.5), 1.0, K, K, RigidPose(translation=[2.0, 0.0, 0.0]), dst_size=(10, 10))
        assert not valid

    def test_depth_derivative(self, rng):
        K = CameraIntrinsics(50.0, 48.0, 15.5, 11.5)
        rel = RigidPose.from_vector([0.02, -0.05, 0.01, 0.4, -0.1, 0.2])
        pixels = pixel_grid(4, 5)
        depth = rng.uniform(3.0, 9.0, size=(4, 5))
        h = 1e-6
        numeric = (
            warp_points(pixels, depth + h, K, K, rel).coords - warp_points(pixels, depth - h, K, K, rel).coords
        ) / (2 * h)
        np.testing.assert_allclose(warp_depth_derivative(pixels, depth, K, K, rel), numeric, rtol=1e-5, atol=1e-7)
