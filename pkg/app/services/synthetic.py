"""
Procedural multi-camera scenes with exact ground truth.

World coordinates are the ego frame at the previous frame (t-1). Frame t is
rendered with the ego placed at ``ego_motion`` (the pose P_{t->t-1}). Surfaces
carry solid value-noise albedo, so a surface point has the same color in
every view and photometric consistency at true depth is exact.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DegenerateConfigurationError
from app.services.geometry import (
    Camera,
    CameraIntrinsics,
    CameraRig,
    RigidPose,
    camera_rays,
    compose,
    pixel_grid,
    rotation_z,
    spatial_relative_pose,
    warp_points,
)
from app.services.numerics import DepthMap, bilinear_sample

logger = logging.getLogger(__name__)

# camera axes (x right, y down, z forward) expressed in the ego frame (x forward, y left, z up)
CAMERA_TO_EGO_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def make_surround_rig(
    num_cameras: int = 6,
    width: int = 160,
    height: int = 96,
    hfov_deg: float = 90.0,
    radius: float = 1.5,
    mount_height: float = 1.5,
) -> CameraRig:
    """
    Ring of outward-looking cameras; camera c is yawed by c * 360 / C degrees.

    Camera 0 looks forward. The left neighbor of c is c + 1, the right one c - 1.
    """
    focal = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
    intrinsics = CameraIntrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0)
    cameras = []
    for c in range(num_cameras):
        yaw = 360.0 * c / num_cameras
        psi = np.deg2rad(yaw)
        center = [radius * np.cos(psi), radius * np.sin(psi), mount_height]
        extrinsic = RigidPose(rotation_z(yaw) @ CAMERA_TO_EGO_BASE, center)
        cameras.append(Camera(intrinsics, extrinsic, width, height))
    adjacency = [((c + 1) % num_cameras, (c - 1) % num_cameras) for c in range(num_cameras)]
    return CameraRig(tuple(cameras), tuple(adjacency))


def _mix64(h: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    h = h ^ (h >> np.uint64(30))
    h = h * np.uint64(0xBF58476D1CE4E5B9)
    h = h ^ (h >> np.uint64(27))
    h = h * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def _lattice_value(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, key: int) -> np.ndarray:
    h = (
        np.ascontiguousarray(ix).view(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ np.ascontiguousarray(iy).view(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ np.ascontiguousarray(iz).view(np.uint64) * np.uint64(0x165667B19E3779F9)
        ^ np.uint64(key & 0xFFFFFFFFFFFFFFFF)
    )
    return (_mix64(h) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(points: np.ndarray, frequency: float, key: int, octaves: int = 3, persistence: float = 0.5) -> np.ndarray:
    """Multi-octave 3-D value noise in [0, 1] with smoothstep interpolation."""
    total = np.zeros(points.shape[:-1])
    norm = 0.0
    amplitude = 1.0
    for octave in range(octaves):
        scaled = points * (frequency * 2 ** octave)
        base = np.floor(scaled)
        frac = scaled - base
        w = frac * frac * (3.0 - 2.0 * frac)
        i = base.astype(np.int64)
        octave_key = key * 1_000_003 + octave
        layer = np.zeros(points.shape[:-1])
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    corner = _lattice_value(i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz, octave_key)
                    weight = (
                        (w[..., 0] if dx else 1.0 - w[..., 0])
                        * (w[..., 1] if dy else 1.0 - w[..., 1])
                        * (w[..., 2] if dz else 1.0 - w[..., 2])
                    )
                    layer += weight * corner
        total += amplitude * layer
        norm += amplitude
        amplitude *= persistence
    return total / norm


@dataclass(frozen=True, eq=False)
class Plane:
    """Rectangle centered at ``center`` spanning ``half_width`` along ``u`` and ``half_height`` along ``v``."""

    center: np.ndarray
    normal: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    half_width: float = 1.0
    half_height: float = 1.0
    texture_id: int = 0
    frequency: float = 0.5

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64)
        normal = normal / np.linalg.norm(normal)
        up = np.asarray(self.up, dtype=np.float64)
        v = up - (up @ normal) * normal
        if np.linalg.norm(v) < 1e-9:
            v = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
        v /= np.linalg.norm(v)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "up", v)

    def intersect(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        denom = directions @ self.normal
        safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
        t = ((self.center - origin) @ self.normal) / safe
        hit = origin + t[..., None] * directions - self.center
        u_axis = np.cross(self.up, self.normal)
        inside = (np.abs(hit @ u_axis) <= self.half_width) & (np.abs(hit @ self.up) <= self.half_height)
        ok = (np.abs(denom) > 1e-12) & (t > 0) & inside
        return np.where(ok, t, np.inf)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    texture_id: int = 0
    frequency: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))

    def intersect(self, origin: np.ndarray, directions: np.ndarray, far: bool = False) -> np.ndarray:
        oc = origin - self.center
        a = (directions * directions).sum(axis=-1)
        b = directions @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        near_t = (-b - root) / a
        far_t = (-b + root) / a
        if far:
            t = far_t
        else:
            t = np.where(near_t > 0, near_t, far_t)
        return np.where((disc >= 0) & (t > 0), t, np.inf)


Primitive = Union[Plane, Sphere]


@dataclass(frozen=True)
class LowTextureBand:
    """World-azimuth interval (degrees) where the backdrop texture contrast is reduced."""

    azimuth_min: float
    azimuth_max: float
    amplitude: float = 0.3


@dataclass(frozen=True, eq=False)
class Scene:
    """Textured primitives inside a textured backdrop sphere that every ray hits."""

    primitives: Tuple[Primitive, ...]
    backdrop: Sphere
    band: Optional[LowTextureBand] = None
    seed: int = 0

    def texture(self, points: np.ndarray, texture_id: int, frequency: float) -> np.ndarray:
        """RGB albedo in [0, 1] at surface points (..., 3)."""
        channels = [value_noise(points, frequency, self.seed * 7919 + texture_id * 3 + k) for k in range(3)]
        rgb = np.stack(channels, axis=-1)
        amplitude = np.ones(points.shape[:-1])
        if self.band is not None and texture_id == self.backdrop.texture_id:
            azimuth = np.degrees(np.arctan2(points[..., 1], points[..., 0]))
            in_band = (azimuth >= self.band.azimuth_min) & (azimuth <= self.band.azimuth_max)
            amplitude = np.where(in_band, self.band.amplitude, 1.0)
        return np.clip(0.5 + 1.4 * amplitude[..., None] * (rgb - 0.5), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth_gt: DepthMap
    camera: int
    timestamp: int  # 0 = previous frame, 1 = current frame


class TwoFrameSequence(NamedTuple):
    previous: List[RenderedFrame]
    current: List[RenderedFrame]
    ego_motion: RigidPose  # P_{t -> t-1}


def render_camera(scene: Scene, camera: Camera, ego_pose: RigidPose) -> Tuple[np.ndarray, np.ndarray]:
    """Ray-cast one camera; returns (image, z-depth) with depth = inf where nothing is hit."""
    cam_to_world = compose(ego_pose, camera.extrinsic)
    origin = cam_to_world.translation
    if np.linalg.norm(origin - scene.backdrop.center) >= scene.backdrop.radius:
        raise DegenerateConfigurationError(f"Camera center {origin.round(3).tolist()} lies outside the backdrop")
    directions = camera_rays(camera) @ ego_pose.rotation.T

    surfaces: List[Tuple[Primitive, np.ndarray]] = [(scene.backdrop, scene.backdrop.intersect(origin, directions, far=True))]
    surfaces += [(prim, prim.intersect(origin, directions)) for prim in scene.primitives]
    hits = np.stack([t for _, t in surfaces])
    nearest = np.argmin(hits, axis=0)
    depth = np.take_along_axis(hits, nearest[None], axis=0)[0]

    image = np.zeros(depth.shape + (3,))
    points = origin + np.where(np.isfinite(depth), depth, 0.0)[..., None] * directions
    for k, (prim, _) in enumerate(surfaces):
        sel = (nearest == k) & np.isfinite(depth)
        if sel.any():
            image[sel] = scene.texture(points[sel], prim.texture_id, prim.frequency)
    return image, depth


def render(scene: Scene, rig: CameraRig, ego_pose_at_t: RigidPose, timestamp: int = 1) -> List[RenderedFrame]:
    """Render every camera of ``rig`` with the ego placed at ``ego_pose_at_t`` in the world."""
    frames = []
    for c, camera in enumerate(rig.cameras):
        image, depth = render_camera(scene, camera, ego_pose_at_t)
        coverage = float(np.isfinite(depth).mean())
        if coverage < 1.0:
            raise DegenerateConfigurationError(f"Camera {c} sees nothing at {1.0 - coverage:.1%} of its pixels")
        frames.append(RenderedFrame(image, DepthMap(depth, np.ones(depth.shape, dtype=bool)), c, timestamp))
    return frames


def make_two_frame_sequence(scene: Scene, rig: CameraRig, ego_motion: RigidPose) -> TwoFrameSequence:
    """Frame t-1 at the world origin, frame t with the ego moved by ``ego_motion``."""
    previous = render(scene, rig, RigidPose.identity(), timestamp=0)
    current = render(scene, rig, ego_motion, timestamp=1)
    logger.info(
        f"Rendered {len(rig)} cameras x 2 frames, ego translation {np.round(ego_motion.translation, 3).tolist()}"
    )
    return TwoFrameSequence(previous, current, ego_motion)


def ego_motion_from(yaw_deg: float = 0.0, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> RigidPose:
    return RigidPose(rotation_z(yaw_deg), translation)


class Triangulation(NamedTuple):
    depth: np.ndarray  # z-depth of the midpoint in camera a
    residual: np.ndarray  # gap between the two rays at closest approach
    ok: np.ndarray  # False for near-parallel rays


def _ego_rays(camera: Camera, pixels: np.ndarray) -> np.ndarray:
    K = camera.intrinsics
    rays = np.stack([(pixels[..., 0] - K.cx) / K.fx, (pixels[..., 1] - K.cy) / K.fy, np.ones(pixels.shape[:-1])], axis=-1)
    return rays @ camera.extrinsic.rotation.T


def triangulate_many(
    p_a: np.ndarray, p_b: np.ndarray, cam_a: Camera, cam_b: Camera, min_angle_deg: float = 0.5
) -> Triangulation:
    """Midpoint-of-closest-approach triangulation for arrays of correspondences (N, 2)."""
    o_a, o_b = cam_a.center, cam_b.center
    if np.linalg.norm(o_a - o_b) < 1e-9:
        raise DegenerateConfigurationError("Cameras share the same center; triangulation is undefined")
    d_a = _ego_rays(cam_a, np.asarray(p_a, dtype=np.float64))
    d_b = _ego_rays(cam_b, np.asarray(p_b, dtype=np.float64))
    a = (d_a * d_a).sum(-1)
    b = (d_a * d_b).sum(-1)
    c = (d_b * d_b).sum(-1)
    w0 = o_a - o_b
    d = d_a @ w0
    e = d_b @ w0
    cos_angle = np.abs(b) / np.sqrt(a * c)
    ok = cos_angle < np.cos(np.deg2rad(min_angle_deg))
    denom = np.where(ok, a * c - b * b, 1.0)
    s = (b * e - c * d) / denom
    t = (a * e - b * d) / denom
    closest_a = o_a + s[..., None] * d_a
    closest_b = o_b + t[..., None] * d_b
    midpoint = 0.5 * (closest_a + closest_b)
    depth = (midpoint - o_a) @ cam_a.extrinsic.rotation[:, 2]
    residual = np.linalg.norm(closest_a - closest_b, axis=-1)
    ok &= (s > 0) & (t > 0)
    return Triangulation(np.where(ok, depth, 0.0), np.where(ok, residual, np.inf), ok)


def triangulate(p_a, p_b, cam_a: Camera, cam_b: Camera, min_angle_deg: float = 0.5) -> Tuple[float, float]:
    """Depth in camera a and the closest-approach gap for one correspondence."""
    result = triangulate_many(np.reshape(p_a, (1, 2)), np.reshape(p_b, (1, 2)), cam_a, cam_b, min_angle_deg)
    if not result.ok[0]:
        raise DegenerateConfigurationError("Rays are near-parallel or meet behind a camera")
    return float(result.depth[0]), float(result.residual[0])


class Correspondence(NamedTuple):
    camera_a: int
    camera_b: int
    xa: float
    ya: float
    xb: float
    yb: float


def gt_correspondences(frames: Sequence[RenderedFrame], rig: CameraRig, c: int, occlusion_tol: float = 1e-2) -> List[np.ndarray]:
    """
    Ground-truth matches from camera ``c`` into each adjacent camera.

    A pixel matches when its GT point projects inside the neighbor and the
    neighbor's GT depth agrees within ``occlusion_tol`` (relative).

    Returns:
        list of (neighbor, (N, 4) array of [xa, ya, xb, yb]) in adjacency order.
    """
    camera = rig.camera(c)
    depth = frames[c].depth_gt
    pixels = pixel_grid(camera.height, camera.width)
    matches = []
    for neighbor in dict.fromkeys(rig.neighbors(c)):
        if neighbor == c:
            continue
        other = rig.camera(neighbor)
        warp = warp_points(
            pixels, depth.depth, camera.intrinsics, other.intrinsics, spatial_relative_pose(rig, c, neighbor), (other.width, other.height)
        )
        nb_depth, inside = bilinear_sample(frames[neighbor].depth_gt.depth[..., None], warp.coords)
        visible = warp.valid & (inside > 0) & depth.valid
        visible &= np.abs(nb_depth[..., 0] - warp.depth) <= occlusion_tol * warp.depth
        ys, xs = np.nonzero(visible)
        coords = warp.coords[ys, xs]
        matches.append((neighbor, np.stack([xs, ys, coords[:, 0], coords[:, 1]], axis=-1).astype(np.float64)))
    return matches


class PseudoDepth(NamedTuple):
    depth: DepthMap  # valid marks the SfM mask
    residual: np.ndarray
    rejected: int


def pseudo_depth_from_matches(
    rig: CameraRig, c: int, matches: Sequence[Tuple[int, np.ndarray]], gate: float = 2e-3
) -> PseudoDepth:
    """Triangulate matches of camera ``c`` and keep those with gap / depth below ``gate``."""
    camera = rig.camera(c)
    acc = np.zeros((camera.height, camera.width))
    hits = np.zeros((camera.height, camera.width))
    residual = np.full((camera.height, camera.width), np.inf)
    rejected = 0
    for neighbor, pairs in matches:
        if len(pairs) == 0:
            continue
        tri = triangulate_many(pairs[:, :2], pairs[:, 2:], camera, rig.camera(neighbor))
        keep = tri.ok & (tri.depth > 0) & (tri.residual < gate * np.maximum(tri.depth, 1e-12))
        rejected += int((~keep).sum())
        xs = np.rint(pairs[keep, 0]).astype(int)
        ys = np.rint(pairs[keep, 1]).astype(int)
        inside = (xs >= 0) & (xs < camera.width) & (ys >= 0) & (ys < camera.height)
        xs, ys = xs[inside], ys[inside]
        np.add.at(acc, (ys, xs), tri.depth[keep][inside])
        np.add.at(hits, (ys, xs), 1.0)
        residual[ys, xs] = np.minimum(residual[ys, xs], tri.residual[keep][inside])
    mask = hits > 0
    depth = np.where(mask, acc / np.where(mask, hits, 1.0), 0.0)
    if not mask.any():
        logger.warning(f"Camera {c}: no triangulated pseudo depth survived the gate")
    return PseudoDepth(DepthMap(depth, mask), residual, rejected)


def sparse_pseudo_depth(
    frames: Sequence[RenderedFrame],
    rig: CameraRig,
    c: int,
    correspondences: Optional[Sequence[Correspondence]] = None,
    gate: float = 2e-3,
) -> PseudoDepth:
    """
    SfM pseudo labels for camera ``c`` from its adjacent cameras.

    Uses GT reprojection matches unless external ``correspondences`` are
    given. An empty result is signalled by an all-False mask.
    """
    if correspondences is None:
        matches = gt_correspondences(frames, rig, c)
    else:
        grouped: Dict[int, List[Tuple[float, float, float, float]]] = {}
        for m in correspondences:
            if m.camera_a == c:
                grouped.setdefault(m.camera_b, []).append((m.xa, m.ya, m.xb, m.yb))
        matches = [(nb, np.asarray(rows, dtype=np.float64).reshape(-1, 4)) for nb, rows in grouped.items()]
    return pseudo_depth_from_matches(rig, c, matches, gate)


def default_scene(seed: int = 0) -> Scene:
    """Backdrop at 9 m with a few seeded spheres and upright panels between 4.5 and 7 m."""
    rng = np.random.default_rng(seed)
    primitives: List[Primitive] = []
    for k in range(3):
        azimuth = np.deg2rad(rng.uniform(0, 360))
        distance = rng.uniform(5.0, 6.5)
        primitives.append(
            Sphere(
                center=[distance * np.cos(azimuth), distance * np.sin(azimuth), rng.uniform(1.0, 2.0)],
                radius=rng.uniform(0.8, 1.3),
                texture_id=1 + k,
                frequency=rng.uniform(0.6, 0.9),
            )
        )
    for k in range(2):
        azimuth = np.deg2rad(rng.uniform(0, 360))
        distance = rng.uniform(4.5, 6.0)
        center = np.array([distance * np.cos(azimuth), distance * np.sin(azimuth), 1.5])
        primitives.append(
            Plane(
                center=center,
                normal=-center * [1.0, 1.0, 0.0],
                half_width=rng.uniform(1.0, 1.8),
                half_height=rng.uniform(0.8, 1.4),
                texture_id=4 + k,
                frequency=rng.uniform(0.6, 0.9),
            )
        )
    return Scene(tuple(primitives), Sphere([0.0, 0.0, 0.0], 9.0, texture_id=0, frequency=0.4), seed=seed)


def wall_scene(radius: float = 9.0, seed: int = 0, frequency: float = 0.4) -> Scene:
    """Backdrop only: smooth depth everywhere."""
    return Scene((), Sphere([0.0, 0.0, 0.0], radius, texture_id=0, frequency=frequency), seed=seed)


def plane_scene(distance: float = 10.0, seed: int = 0, frequency: float = 0.5) -> Scene:
    """Large plane facing the ego at ``distance`` ahead, inside a far backdrop."""
    plane = Plane(
        center=[distance, 0.0, 0.0], normal=[-1.0, 0.0, 0.0], half_width=4 * distance, half_height=4 * distance,
        texture_id=1, frequency=frequency,
    )
    return Scene((plane,), Sphere([0.0, 0.0, 0.0], 8 * distance, texture_id=0, frequency=frequency / 4), seed=seed)


def strip_scene(seed: int = 0, radius: float = 9.0) -> Scene:
    """Backdrop whose texture contrast is low between 20 and 40 degrees of azimuth (cameras 0 and 1 overlap)."""
    return Scene((), Sphere([0.0, 0.0, 0.0], radius, texture_id=0, frequency=0.4), band=LowTextureBand(20.0, 40.0), seed=seed)


SCENE_PRESETS = {
    "default": default_scene,
    "wall": wall_scene,
    "plane": plane_scene,
    "strip": strip_scene,
}


def strip_mask(rig: CameraRig, c: int, scene: Scene, depth: DepthMap, ego_pose: Optional[RigidPose] = None) -> np.ndarray:
    """Pixels of camera ``c`` whose GT surface point falls inside the scene's low-texture band."""
    if scene.band is None:
        return np.zeros(depth.shape, dtype=bool)
    camera = rig.camera(c)
    points = camera.extrinsic.translation + depth.depth[..., None] * camera_rays(camera)
    if ego_pose is not None:
        points = ego_pose.apply(points)
    azimuth = np.degrees(np.arctan2(points[..., 1], points[..., 0]))
    return (azimuth >= scene.band.azimuth_min) & (azimuth <= scene.band.azimuth_max) & depth.valid
