"""
Camera models, SE(3) pose algebra and the plane-sweep warp.

Conventions:
    - Camera frame: x right, y down, z forward (optical axis).
    - Ego frame: x forward, y left, z up.
    - A camera extrinsic T^c maps camera-frame points into the ego frame.
    - A relative pose ``rel`` maps points of the source camera frame into the
      destination camera frame: X_dst = R @ X_src + t.
    - Integer pixel coordinates are pixel centers; an image of size W x H spans
      [0, W-1] x [0, H-1].
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import cv2
import numpy as np

from app.core.errors import ConfigError, ContractViolation

logger = logging.getLogger(__name__)

# transformed points closer than this to the camera plane are invalid
Z_MIN = 1e-3

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractViolation(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics of the same camera after ``factor``x block downsampling (pixel-center convention)."""
        return CameraIntrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
        )


@dataclass(frozen=True, eq=False)
class RigidPose:
    """SE(3) transform with an orthonormal rotation and a translation in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise ContractViolation("Pose contains non-finite values")
        ortho_err = np.abs(rotation.T @ rotation - np.eye(3)).max()
        det = np.linalg.det(rotation)
        if ortho_err > _ORTHO_TOL or abs(det - 1.0) > _ORTHO_TOL:
            raise ContractViolation(f"Rotation is not a proper rotation (|RtR-I|={ortho_err:.2e}, det={det:.6f})")
        if ortho_err > 1e-12:
            # snap calibration round-off onto SO(3)
            u, _, vt = np.linalg.svd(rotation)
            rotation = u @ vt
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "RigidPose":
        """Build from a 4x4 or row-major 3x4 matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.size == 12:
            m = m.reshape(3, 4)
        elif m.size == 16:
            m = m.reshape(4, 4)
        else:
            raise ContractViolation(f"Pose matrix must have 12 or 16 entries, got {m.size}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, rvec, translation) -> "RigidPose":
        rotation, _ = cv2.Rodrigues(np.asarray(rvec, dtype=np.float64).reshape(3, 1))
        return cls(rotation, translation)

    @classmethod
    def from_vector(cls, params) -> "RigidPose":
        """Pose from the 6-vector (rx, ry, rz, tx, ty, tz): axis-angle then translation."""
        params = np.asarray(params, dtype=np.float64).reshape(6)
        return cls.from_axis_angle(params[:3], params[3:])

    def axis_angle(self) -> np.ndarray:
        rvec, _ = cv2.Rodrigues(np.ascontiguousarray(self.rotation))
        return rvec.reshape(3)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.axis_angle(), self.translation])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def is_identity(self, atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, np.eye(3), rtol=0.0, atol=atol)
            and np.allclose(self.translation, 0.0, rtol=0.0, atol=atol)
        )


def rotation_z(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """a ∘ b: apply ``b`` first, then ``a``."""
    return RigidPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: RigidPose) -> RigidPose:
    rt = p.rotation.T
    return RigidPose(rt, -rt @ p.translation)


def ego_pose_from_front(front_pose: RigidPose, front_extrinsic: RigidPose) -> RigidPose:
    """
    Ego motion from the front camera's motion.

    With T mapping camera to ego, the camera motion is P^0 = T^-1 P T, so the
    ego motion is P = T P^0 T^-1. This is the exact inverse of
    :func:`camera_pose_from_ego` for the same extrinsic.

    The front-camera relation is often written (T^0)^-1 P^0 T^0. That form
    holds when T^0 is the ego-to-camera transform; applied to the
    camera-to-ego extrinsic it is the opposite conjugation, which breaks the
    round trip and moves a front translation (1, 0, 0) under a 90 degree yaw to
    (0, -1, 0) instead of (0, 1, 0).
    """
    return compose(compose(front_extrinsic, front_pose), invert(front_extrinsic))


def camera_pose_from_ego(ego_pose: RigidPose, cam_extrinsic: RigidPose) -> RigidPose:
    """Camera motion P^c = (T^c)^-1 · P · T^c."""
    return compose(compose(invert(cam_extrinsic), ego_pose), cam_extrinsic)


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsic: RigidPose
    width: int
    height: int

    @property
    def center(self) -> np.ndarray:
        """Optical center in the ego frame."""
        return self.extrinsic.translation

    def scaled(self, factor: int) -> "Camera":
        if self.width % factor or self.height % factor:
            raise ContractViolation(f"Image {self.width}x{self.height} is not divisible by {factor}")
        return Camera(self.intrinsics.scaled(factor), self.extrinsic, self.width // factor, self.height // factor)


@dataclass(frozen=True)
class CameraRig:
    """
    Ordered cameras plus (left, right) neighbor indices per camera.

    Camera 0 is the front camera.
    """

    cameras: Tuple[Camera, ...]
    adjacency: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        cameras = tuple(self.cameras)
        adjacency = tuple((int(left), int(right)) for left, right in self.adjacency)
        n = len(cameras)
        if n == 0:
            raise ConfigError("Rig has no cameras")
        if len(adjacency) != n:
            raise ConfigError(f"Adjacency lists {len(adjacency)} entries for {n} cameras")
        for c, (left, right) in enumerate(adjacency):
            for nb in (left, right):
                if not 0 <= nb < n:
                    raise ConfigError(f"Camera {c} has neighbor index {nb} out of range")
                if nb != c and c not in adjacency[nb]:
                    raise ConfigError(f"Adjacency is not symmetric: {c} -> {nb} but not back")
        object.__setattr__(self, "cameras", cameras)
        object.__setattr__(self, "adjacency", adjacency)

    def __len__(self) -> int:
        return len(self.cameras)

    def camera(self, c: int) -> Camera:
        if not 0 <= c < len(self.cameras):
            raise ContractViolation(f"Camera index {c} out of range for {len(self.cameras)} cameras")
        return self.cameras[c]

    def neighbors(self, c: int) -> Tuple[int, int]:
        self.camera(c)
        return self.adjacency[c]

    def scaled(self, factor: int) -> "CameraRig":
        return CameraRig(tuple(cam.scaled(factor) for cam in self.cameras), self.adjacency)


def spatial_relative_pose(rig: CameraRig, c: int, c_prime: int) -> RigidPose:
    """Transform from camera ``c`` to camera ``c_prime``: (T^{c'})^-1 · T^c."""
    return compose(invert(rig.camera(c_prime).extrinsic), rig.camera(c).extrinsic)


class WarpResult(NamedTuple):
    coords: np.ndarray  # (..., 2) continuous destination pixel coordinates
    valid: np.ndarray  # (...) bool
    depth: np.ndarray  # (...) z of the transformed point in the destination camera


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of integer (x, y) pixel-center coordinates."""
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return np.stack([xs, ys], axis=-1)


def backproject(pixels: np.ndarray, depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points at z-depth ``depth`` through ``pixels``."""
    x = (pixels[..., 0] - K.cx) / K.fx
    y = (pixels[..., 1] - K.cy) / K.fy
    return np.stack([x * depth, y * depth, depth], axis=-1)


def project(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    z = points[..., 2]
    safe = np.where(np.abs(z) > 0, z, 1.0)
    return np.stack([K.fx * points[..., 0] / safe + K.cx, K.fy * points[..., 1] / safe + K.cy], axis=-1)


def warp_points(
    pixels: np.ndarray,
    depth,
    K_src: CameraIntrinsics,
    K_dst: CameraIntrinsics,
    rel: RigidPose,
    dst_size: Optional[Tuple[int, int]] = None,
) -> WarpResult:
    """
    Vectorized plane-sweep warp.

    Args:
        pixels: (..., 2) source pixel coordinates.
        depth: z-depth(s) in the source camera, broadcastable to pixels[..., 0].
        K_src, K_dst: source and destination intrinsics.
        rel: source-to-destination pose.
        dst_size: (width, height) of the destination image; bounds are not checked when None.

    Returns:
        WarpResult with destination coordinates, validity and transformed depth.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), pixels.shape[:-1])
    if np.any(depth <= 0):
        raise ContractViolation("Warp depth must be positive")
    if K_src == K_dst and rel.is_identity():
        coords = np.broadcast_to(pixels, depth.shape + (2,)).copy()
        z = depth.copy()
    else:
        points = rel.apply(backproject(pixels, depth, K_src))
        z = points[..., 2]
        coords = project(points, K_dst)
    valid = z > Z_MIN
    if dst_size is not None:
        width, height = dst_size
        valid &= (coords[..., 0] >= 0) & (coords[..., 0] <= width - 1)
        valid &= (coords[..., 1] >= 0) & (coords[..., 1] <= height - 1)
    return WarpResult(coords, valid, z)


def warp_pixel(
    p: Sequence[float],
    d: float,
    K_src: CameraIntrinsics,
    K_dst: CameraIntrinsics,
    rel: RigidPose,
    dst_size: Optional[Tuple[int, int]] = None,
) -> Tuple[np.ndarray, bool]:
    """Warp a single pixel ``p`` at depth ``d``; returns (p_hat, valid)."""
    if not d > 0:
        raise ContractViolation(f"Warp depth must be positive, got {d}")
    result = warp_points(np.asarray(p, dtype=np.float64).reshape(1, 2), np.array([d]), K_src, K_dst, rel, dst_size)
    return result.coords[0], bool(result.valid[0])


def warp_depth_derivative(
    pixels: np.ndarray, depth: np.ndarray, K_src: CameraIntrinsics, K_dst: CameraIntrinsics, rel: RigidPose
) -> np.ndarray:
    """d(coords)/d(depth) of :func:`warp_points`, shape (..., 2)."""
    rays = backproject(pixels, np.ones_like(depth), K_src)
    a = rays @ rel.rotation.T
    points = depth[..., None] * a + rel.translation
    z = np.where(np.abs(points[..., 2]) > Z_MIN, points[..., 2], Z_MIN)
    du = K_dst.fx * (a[..., 0] * z - points[..., 0] * a[..., 2]) / (z * z)
    dv = K_dst.fy * (a[..., 1] * z - points[..., 1] * a[..., 2]) / (z * z)
    return np.stack([du, dv], axis=-1)


def camera_rays(camera: Camera) -> np.ndarray:
    """Ego-frame ray directions (z_cam = 1) for every pixel, shape (H, W, 3)."""
    pixels = pixel_grid(camera.height, camera.width)
    rays = backproject(pixels, np.ones(pixels.shape[:-1]), camera.intrinsics)
    return rays @ camera.extrinsic.rotation.T
