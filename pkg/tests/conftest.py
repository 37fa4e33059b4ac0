import numpy as np
import pytest

from app.services.geometry import Camera, CameraRig, RigidPose, camera_pose_from_ego
from app.services.pipeline import SurroundFrames
from app.services.synthetic import (
    CAMERA_TO_EGO_BASE,
    ego_motion_from,
    make_surround_rig,
    make_two_frame_sequence,
    plane_scene,
    wall_scene,
)

# lateral ego shift that moves the front camera's view of the plane by exactly 4 px
PLANE_DEPTH = 8.5
SHIFT_PX = 4.0


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture(scope="session")
def rig():
    return make_surround_rig(6, 160, 96)


@pytest.fixture(scope="session")
def small_rig():
    return make_surround_rig(6, 32, 16)


@pytest.fixture(scope="session")
def origin_camera():
    """Single forward-looking camera at the ego origin."""
    template = make_surround_rig(1, 64, 32).camera(0)
    return Camera(template.intrinsics, RigidPose(CAMERA_TO_EGO_BASE, np.zeros(3)), 64, 32)


@pytest.fixture(scope="session")
def origin_rig(origin_camera):
    return CameraRig((origin_camera,), ((0, 0),))


@pytest.fixture(scope="session")
def wall_frames(rig):
    """Backdrop-only scene, ego 0.5 m forward: smooth depth, no occlusions."""
    sequence = make_two_frame_sequence(wall_scene(seed=3), rig, ego_motion_from(0.0, (0.5, 0.0, 0.0)))
    return SurroundFrames.from_sequence(sequence, rig)


@pytest.fixture(scope="session")
def still_wall_frames(rig):
    sequence = make_two_frame_sequence(wall_scene(seed=3), rig, RigidPose.identity())
    return SurroundFrames.from_sequence(sequence, rig)


@pytest.fixture(scope="session")
def plane_shift(rig):
    """
    Plane scene with a lateral ego shift of exactly ``SHIFT_PX`` pixels for camera 0.

    Returns (frames, camera-0 relative pose t -> t-1).
    """
    fx = rig.camera(0).intrinsics.fx
    motion = ego_motion_from(0.0, (0.0, SHIFT_PX * PLANE_DEPTH / fx, 0.0))
    sequence = make_two_frame_sequence(plane_scene(10.0, seed=1, frequency=0.3), rig, motion)
    frames = SurroundFrames.from_sequence(sequence, rig)
    return frames, camera_pose_from_ego(motion, rig.camera(0).extrinsic)
