"""Initial plane-sweep feature volumes in the temporal and spatial domains."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.core.errors import ConfigError, ContractViolation
from app.models.depth import VolumeSource
from app.services.geometry import CameraIntrinsics, CameraRig, RigidPose, pixel_grid, spatial_relative_pose, warp_points
from app.services.hypotheses import DepthHypothesisSet
from app.services.numerics import Grid2D, bilinear_sample, check_same_shape

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    """
    Warped features per depth bin.

    values: (D, H, W, C), zero wherever validity is zero.
    validity: (D, H, W, 1) in [0, 1].
    """

    values: np.ndarray
    validity: np.ndarray
    source: VolumeSource

    def __post_init__(self):
        if self.values.ndim != 4 or self.validity.shape != self.values.shape[:3] + (1,):
            raise ContractViolation(
                f"Volume shapes disagree: values {self.values.shape}, validity {self.validity.shape}"
            )

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


def warp_source_features(
    src: Grid2D,
    hyps: DepthHypothesisSet,
    K_ref: CameraIntrinsics,
    K_src: CameraIntrinsics,
    rel: RigidPose,
    src_valid: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample ``src`` at the warp of every reference pixel for every hypothesis.

    Args:
        src: source feature grid (H, W, C).
        hyps: hypotheses on the reference grid.
        K_ref, K_src: reference and source intrinsics.
        rel: reference-to-source pose.
        src_valid: optional (H, W) validity of the source features.

    Returns:
        values (D, H, W, C) and validity (D, H, W, 1).
    """
    height, width, _ = src.shape
    if hyps.shape != (height, width):
        raise ContractViolation(f"Hypotheses {hyps.shape} do not match features {(height, width)}")
    grid = pixel_grid(height, width)
    validity_src = np.ones((height, width, 1)) if src_valid is None else np.asarray(src_valid, np.float64)[..., None]
    values = np.zeros((hyps.bins, height, width, src.shape[2]))
    validity = np.zeros((hyps.bins, height, width, 1))
    for i in range(hyps.bins):
        warp = warp_points(grid, hyps.samples[i], K_ref, K_src, rel, (width, height))
        sampled, inside = bilinear_sample(src, warp.coords)
        fraction, _ = bilinear_sample(validity_src, warp.coords)
        weight = fraction[..., 0] * inside * warp.valid
        validity[i, ..., 0] = weight
        values[i] = np.where(weight[..., None] > 0, sampled, 0.0)
    return values, validity


def build_temporal(
    F_t: Grid2D,
    F_prev: Grid2D,
    cam_pose: RigidPose,
    K: CameraIntrinsics,
    hyps: DepthHypothesisSet,
) -> FeatureVolume:
    """Warp the previous-frame features into the current frame at every hypothesis."""
    check_same_shape(F_t, F_prev, "current and previous features")
    values, validity = warp_source_features(F_prev, hyps, K, K, cam_pose)
    return FeatureVolume(values, validity, VolumeSource.TEMPORAL)


def build_spatial(
    F_ref: Grid2D,
    F_left: Grid2D,
    F_right: Grid2D,
    rig: CameraRig,
    c: int,
    hyps: DepthHypothesisSet,
) -> FeatureVolume:
    """
    Warp both adjacent cameras into camera ``c`` and merge them.

    ``rig`` must be at the feature resolution. The two warped features are
    combined by a validity-weighted mean; validity is the larger of the two.
    """
    check_same_shape(F_ref, F_left, "reference and left features")
    check_same_shape(F_ref, F_right, "reference and right features")
    left, right = rig.neighbors(c)
    if left == c or right == c:
        raise ConfigError(f"Camera {c} is missing an adjacent camera (adjacency {rig.adjacency[c]})")
    camera = rig.camera(c)
    if (camera.height, camera.width) != F_ref.shape[:2]:
        raise ContractViolation(
            f"Rig camera {c} is {camera.width}x{camera.height}, features are {F_ref.shape[1]}x{F_ref.shape[0]}"
        )

    warped = []
    for neighbor, features in ((left, F_left), (right, F_right)):
        rel = spatial_relative_pose(rig, c, neighbor)
        warped.append(warp_source_features(features, hyps, camera.intrinsics, rig.camera(neighbor).intrinsics, rel))

    (v_l, m_l), (v_r, m_r) = warped
    total = m_l + m_r
    values = np.where(total > 0, (m_l * v_l + m_r * v_r) / np.where(total > 0, total, 1.0), 0.0)
    validity = np.maximum(m_l, m_r)
    logger.debug(f"Spatial volume cam{c}: {float((validity > 0).mean()):.1%} of cells covered")
    return FeatureVolume(values, validity, VolumeSource.SPATIAL)


def sweep_parallax(hyps: DepthHypothesisSet, K_ref: CameraIntrinsics, K_src: CameraIntrinsics, rel: RigidPose) -> np.ndarray:
    """
    Source-image distance in pixels between the warps of the nearest and farthest hypotheses.

    Zero where either end of the sweep leaves the source image. Pixels with a
    small value have bins that the source view cannot tell apart, e.g. near the
    epipole of a forward motion.
    """
    height, width = hyps.shape
    grid = pixel_grid(height, width)
    near = warp_points(grid, hyps.samples[0], K_ref, K_src, rel, (width, height))
    far = warp_points(grid, hyps.samples[-1], K_ref, K_src, rel, (width, height))
    span = np.linalg.norm(near.coords - far.coords, axis=-1)
    return np.where(near.valid & far.valid, span, 0.0)
