"""
Self-supervised objective: photometric, edge-aware smoothness, depth-edge focal
and SfM pseudo-label terms plus their weighted total.

The photometric, smoothness and SfM terms also expose analytic gradients used
by the refinement loop.
"""

import logging
from typing import NamedTuple, Optional

import numpy as np

from app.core.errors import ContractViolation, EmptyValidSetError
from app.models.depth import LossPhase
from app.schemas.report import LossReport, LossWeights
from app.services.geometry import CameraIntrinsics, RigidPose, pixel_grid, warp_points
from app.services.mff import to_gray
from app.services.numerics import (
    DepthMap,
    Grid2D,
    bilinear_sample,
    box3x3,
    box3x3_adjoint,
    check_same_shape,
    sobel,
    window_stats,
)

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
FOCAL_EPS = 1e-6


class PhotometricResult(NamedTuple):
    value: float
    count: int
    error_map: np.ndarray  # (H, W), zero outside the mask


class LossTerms(NamedTuple):
    photo: float
    smooth: float
    edge: float
    sfm: float
    counts: dict


def _ssim_channels(a: Grid2D, b: Grid2D) -> np.ndarray:
    stats = window_stats(a, b)
    numerator = (2 * stats.mean_a * stats.mean_b + SSIM_C1) * (2 * stats.cov + SSIM_C2)
    denominator = (stats.mean_a ** 2 + stats.mean_b ** 2 + SSIM_C1) * (stats.var_a + stats.var_b + SSIM_C2)
    return numerator / denominator


def ssim(a: Grid2D, b: Grid2D) -> np.ndarray:
    """Per-pixel SSIM over 3x3 box windows, clipped to [0, 1] and averaged over channels."""
    check_same_shape(a, b, "SSIM inputs")
    return np.clip(_ssim_channels(a, b), 0.0, 1.0).mean(axis=-1)


def _pixel_error(target: Grid2D, recon: Grid2D, alpha: float) -> np.ndarray:
    l1 = np.abs(target - recon).mean(axis=-1)
    return 0.5 * alpha * (1.0 - ssim(target, recon)) + (1.0 - alpha) * l1


def photometric_loss(I_target: Grid2D, I_reconstructed: Grid2D, mask: np.ndarray, alpha: float = 0.85) -> PhotometricResult:
    """Mean over mask pixels of (alpha/2)(1 - SSIM) + (1 - alpha) L1; an empty mask gives 0 with count 0."""
    check_same_shape(I_target, I_reconstructed, "target and reconstruction")
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must lie in [0, 1], got {alpha}")
    valid = np.asarray(mask) > 0
    error = np.where(valid, _pixel_error(I_target, I_reconstructed, alpha), 0.0)
    count = int(valid.sum())
    value = float(error.sum() / count) if count else 0.0
    return PhotometricResult(value, count, error)


def photometric_gradient(I_target: Grid2D, I_reconstructed: Grid2D, mask: np.ndarray, alpha: float = 0.85) -> Grid2D:
    """d(photometric_loss)/d(I_reconstructed), treating the mask as fixed."""
    a, b = I_target, I_reconstructed
    valid = (np.asarray(mask) > 0)[..., None]
    count = int(valid.sum())
    if count == 0:
        return np.zeros_like(b)
    channels = b.shape[-1]
    scale = 1.0 / (count * channels)

    mu_a, mu_b = box3x3(a), box3x3(b)
    e_bb, e_ab = box3x3(b * b), box3x3(a * b)
    var_a = np.maximum(box3x3(a * a) - mu_a ** 2, 0.0)
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    den = b1 * b2
    s = a1 * a2 / den
    upstream = np.where(valid & (s > 0) & (s < 1), -0.5 * alpha * scale, 0.0)
    ds_dmu = (2 * mu_a * a2 - 2 * mu_a * a1) / den - s * (2 * mu_b * b2 - 2 * mu_b * b1) / den
    ds_dbb = -s * b1 / den
    ds_dab = 2 * a1 / den
    grad = box3x3_adjoint(upstream * ds_dmu)
    grad += 2 * b * box3x3_adjoint(upstream * ds_dbb)
    grad += a * box3x3_adjoint(upstream * ds_dab)
    grad += np.where(valid, (1.0 - alpha) * scale * np.sign(b - a), 0.0)
    return grad


class ViewWarp(NamedTuple):
    recon: Grid2D
    mask: np.ndarray
    coords: np.ndarray  # (H, W, 2) sample positions in the source image


def warp_view(I_source: Grid2D, depth: DepthMap, rel: RigidPose, K_src: CameraIntrinsics, K_dst: CameraIntrinsics) -> ViewWarp:
    """Same as :func:`reconstruct_view` but also returns the sample positions."""
    height, width = depth.shape
    src_h, src_w = I_source.shape[:2]
    safe_depth = np.where(depth.valid & (depth.depth > 0), depth.depth, 1.0)
    warp = warp_points(pixel_grid(height, width), safe_depth, K_dst, K_src, rel, (src_w, src_h))
    recon, inside = bilinear_sample(I_source, warp.coords)
    mask = inside * warp.valid * depth.valid * (depth.depth > 0)
    recon = np.where(mask[..., None] > 0, recon, 0.0)
    return ViewWarp(recon, mask.astype(np.float64), warp.coords)


def reconstruct_view(
    I_source: Grid2D,
    depth: DepthMap,
    rel: RigidPose,
    K_src: CameraIntrinsics,
    K_dst: CameraIntrinsics,
):
    """
    Inverse-warp ``I_source`` into the target frame.

    ``depth`` lives on the target grid (intrinsics ``K_dst``) and ``rel`` maps
    target-camera points into the source camera (intrinsics ``K_src``).

    Returns:
        (reconstruction (H, W, C), mask (H, W) in {0, 1})
    """
    view = warp_view(I_source, depth, rel, K_src, K_dst)
    return view.recon, view.mask


def _normalized(depth: DepthMap, normalize: bool):
    d = depth.depth
    if not normalize:
        return d, 1.0
    mean = float(d.mean())
    if mean <= 0:
        raise ContractViolation("Depth mean must be positive for smoothness normalization")
    return d / mean, mean


def _image_weights(image: Grid2D):
    wx = np.exp(-np.abs(np.diff(image, axis=1)).mean(axis=-1))
    wy = np.exp(-np.abs(np.diff(image, axis=0)).mean(axis=-1))
    return wx, wy


def smoothness_loss(depth: DepthMap, image: Grid2D, normalize: bool = True) -> float:
    """Edge-aware smoothness with forward differences; depth is mean-normalized unless ``normalize`` is off."""
    if depth.shape != image.shape[:2]:
        raise ContractViolation(f"Depth {depth.shape} and image {image.shape[:2]} differ in size")
    n, _ = _normalized(depth, normalize)
    wx, wy = _image_weights(image)
    loss = 0.0
    if n.shape[1] > 1:
        loss += float((np.abs(np.diff(n, axis=1)) * wx).mean())
    if n.shape[0] > 1:
        loss += float((np.abs(np.diff(n, axis=0)) * wy).mean())
    return loss


def smoothness_gradient(depth: DepthMap, image: Grid2D, normalize: bool = True) -> np.ndarray:
    """d(smoothness_loss)/d(depth); sign(0) = 0 at kinks."""
    n, mean = _normalized(depth, normalize)
    wx, wy = _image_weights(image)
    g = np.zeros_like(n)
    if n.shape[1] > 1:
        gx = np.sign(np.diff(n, axis=1)) * wx / wx.size
        g[:, 1:] += gx
        g[:, :-1] -= gx
    if n.shape[0] > 1:
        gy = np.sign(np.diff(n, axis=0)) * wy / wy.size
        g[1:] += gy
        g[:-1] -= gy
    if not normalize:
        return g
    return g / mean - (g * depth.depth).sum() / (mean * mean * n.size)


def depth_edge_probability(depth: DepthMap) -> np.ndarray:
    """tanh of the Sobel magnitude of mean-normalized depth over its mean magnitude, in [0, 1)."""
    n, _ = _normalized(depth, True)
    gx, gy = sobel(n[..., None])
    magnitude = np.hypot(gx, gy)[..., 0]
    scale = float(magnitude.mean())
    if scale <= 0:
        return np.zeros_like(magnitude)
    return np.tanh(magnitude / scale)


def image_edges(image: Grid2D, percentile: float = 90.0) -> np.ndarray:
    """Binary edge map: Sobel magnitude of the gray image strictly above its percentile."""
    gx, gy = sobel(to_gray(image))
    magnitude = np.hypot(gx, gy)[..., 0]
    threshold = np.percentile(magnitude, percentile)
    return (magnitude > threshold).astype(np.float64)


def focal_loss(target: np.ndarray, prediction: np.ndarray, gamma: float = 2.0, alpha_f: float = 0.25) -> float:
    """Mean binary focal loss with the alpha-balanced form (alpha on positives, 1 - alpha on negatives)."""
    p = np.clip(prediction, FOCAL_EPS, 1.0 - FOCAL_EPS)
    positive = np.asarray(target) > 0.5
    p_t = np.where(positive, p, 1.0 - p)
    alpha_t = np.where(positive, alpha_f, 1.0 - alpha_f)
    return float((-alpha_t * (1.0 - p_t) ** gamma * np.log(p_t)).mean())


def edge_loss(edges: np.ndarray, depth: DepthMap, gamma: float = 2.0, alpha_f: float = 0.25) -> float:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim == 3:
        edges = edges[..., 0]
    if edges.shape != depth.shape:
        raise ContractViolation(f"Edge map {edges.shape} does not match depth {depth.shape}")
    if not np.all((edges == 0) | (edges == 1)):
        raise ContractViolation("Image edges must be binary")
    return focal_loss(edges, depth_edge_probability(depth), gamma, alpha_f)


def sfm_loss(depth: DepthMap, pseudo: DepthMap, mask: Optional[np.ndarray] = None) -> float:
    """Mean |d - d_sfm| over the pseudo-label mask; an empty mask is an error."""
    if depth.shape != pseudo.shape:
        raise ContractViolation(f"Depth {depth.shape} and pseudo labels {pseudo.shape} differ in size")
    mask = pseudo.valid if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyValidSetError("SfM mask is empty")
    return float(np.abs(depth.depth - pseudo.depth)[mask].mean())


def sfm_gradient(depth: DepthMap, pseudo: DepthMap, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Minimum-norm subgradient of :func:`sfm_loss` (0 where d equals the label)."""
    mask = pseudo.valid if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return np.zeros(depth.shape)
    return np.where(mask, np.sign(depth.depth - pseudo.depth), 0.0) / count


def phase_weights(weights: LossWeights, phase: LossPhase) -> LossWeights:
    if LossPhase(phase) == LossPhase.MAIN:
        return weights.model_copy(update={"lambda_sfm": 0.0})
    return weights


def total_loss(terms: LossTerms, weights: LossWeights, phase: LossPhase = LossPhase.INIT) -> LossReport:
    """Weighted sum of the four terms; the main phase drops the SfM weight to 0."""
    active = phase_weights(weights, phase)
    total = (
        active.lambda_photo * terms.photo
        + active.lambda_smooth * terms.smooth
        + active.lambda_edge * terms.edge
        + active.lambda_sfm * terms.sfm
    )
    return LossReport(
        photo=terms.photo,
        smooth=terms.smooth,
        edge=terms.edge,
        sfm=terms.sfm,
        total=float(total),
        phase=LossPhase(phase),
        weights=active,
        valid_pixel_counts=dict(terms.counts),
    )
