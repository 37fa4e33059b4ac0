"""
Spatial-temporal fusion, the correlation matching head and depth decoding.

The matching head scores each depth bin by group-wise correlation between the
reference feature and the fused volume, turns the scores into a probability
volume, takes the expectation over the hypotheses and upsamples the coarse
depth with convex 3x3 masks.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from app.core.errors import ContractViolation
from app.models.depth import StfMode, VolumeSource
from app.services.hypotheses import DepthHypothesisSet
from app.services.mff import normalize_pixels
from app.services.numerics import DepthMap, Grid2D, replicate_pad, softmax_over_bins
from app.services.volumes import FeatureVolume

logger = logging.getLogger(__name__)

UPSAMPLE_FACTOR = 4


@dataclass(frozen=True, eq=False)
class CorrelationMap:
    """values (D, H, W, G); cells where ``valid`` is False hold 0 and take no part downstream."""

    values: np.ndarray
    valid: np.ndarray

    @property
    def groups(self) -> int:
        return self.values.shape[-1]


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    probs: np.ndarray  # (D, H, W)
    scores: np.ndarray  # (D, H, W)
    valid: np.ndarray  # (H, W): at least one valid bin
    low_confidence: np.ndarray  # (H, W)

    @property
    def bins(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class UpsampleMask:
    """weights (h, w, f, f, 9): per coarse pixel and output subpixel, weights over the 3x3 neighborhood (row-major)."""

    weights: np.ndarray

    @property
    def factor(self) -> int:
        return self.weights.shape[2]


class UpsampleResult(NamedTuple):
    depth: DepthMap
    renormalized: int


def group_correlation(F: Grid2D, V: FeatureVolume, G: int) -> CorrelationMap:
    """Cr^g(p, i) = (G / C) <F(p)^g, V(p, i)^g> over G even channel groups."""
    channels = F.shape[-1]
    if G < 1 or channels % G:
        raise ContractViolation(f"groups ({G}) must divide channels ({channels})")
    if V.values.shape[1:] != F.shape:
        raise ContractViolation(f"Volume {V.values.shape} does not match feature {F.shape}")
    bins, height, width, _ = V.values.shape
    per_group = channels // G
    product = (F[None] * V.values).reshape(bins, height, width, G, per_group)
    corr = product.sum(axis=-1) * (G / channels)
    valid = V.validity[..., 0] > 0
    corr = np.where(valid[..., None], corr, 0.0)
    return CorrelationMap(corr, valid)


def fusion_weights(cr_sp: CorrelationMap, cr_tp: CorrelationMap) -> Tuple[np.ndarray, np.ndarray]:
    """Max over groups per (bin, pixel); 0 at invalid cells."""
    if cr_sp.values.shape != cr_tp.values.shape:
        raise ContractViolation(f"Correlation shapes differ: {cr_sp.values.shape} vs {cr_tp.values.shape}")
    w_sp = np.where(cr_sp.valid, cr_sp.values.max(axis=-1), 0.0)
    w_tp = np.where(cr_tp.valid, cr_tp.values.max(axis=-1), 0.0)
    return w_sp, w_tp


def fuse(V_sp: FeatureVolume, V_tp: FeatureVolume, W_sp: np.ndarray, W_tp: np.ndarray) -> FeatureVolume:
    """
    V = W_sp V_sp + W_tp V_tp where both domains take part.

    A domain takes part in a cell when it is valid there and its weight is
    nonzero. Where only one domain takes part its feature passes through
    unchanged; where neither does the cell is invalid.
    """
    if V_sp.values.shape != V_tp.values.shape:
        raise ContractViolation(f"Volume shapes differ: {V_sp.values.shape} vs {V_tp.values.shape}")
    w_sp = np.asarray(W_sp, dtype=np.float64)[..., None]
    w_tp = np.asarray(W_tp, dtype=np.float64)[..., None]
    on_sp = V_sp.validity * (w_sp != 0)
    on_tp = V_tp.validity * (w_tp != 0)
    both = (on_sp > 0) & (on_tp > 0)
    only_sp = (on_sp > 0) & ~(on_tp > 0)
    only_tp = (on_tp > 0) & ~(on_sp > 0)
    values = np.where(both, w_sp * V_sp.values + w_tp * V_tp.values, 0.0)
    values = np.where(only_sp, V_sp.values, values)
    values = np.where(only_tp, V_tp.values, values)
    validity = np.maximum(on_sp, on_tp)
    return FeatureVolume(values, validity, VolumeSource.FUSED)


def stf_fuse(F: Grid2D, V_sp: FeatureVolume, V_tp: FeatureVolume, G: int, mode: StfMode = StfMode.ON) -> FeatureVolume:
    """Volume handed to the matching head for each fusion mode; ``off`` keeps the temporal volume only."""
    mode = StfMode(mode)
    if mode in (StfMode.OFF, StfMode.TEMPORAL_ONLY):
        return V_tp
    if mode == StfMode.SPATIAL_ONLY:
        return V_sp
    w_sp, w_tp = fusion_weights(group_correlation(F, V_sp, G), group_correlation(F, V_tp, G))
    return fuse(V_sp, V_tp, w_sp, w_tp)


def normalize_volume(V: FeatureVolume) -> FeatureVolume:
    """
    Scale every cell of ``V`` to norm sqrt(C); all-zero cells stay zero.

    Correlation against a bilinearly warped feature is linear between sample
    positions, so its maximum sits on whole-pixel warps. After normalization
    the score is a cosine and peaks at the sub-pixel match.
    """
    return FeatureVolume(normalize_pixels(V.values), V.validity, V.source)


def matching_head(
    F: Grid2D,
    V_fused: FeatureVolume,
    G: int,
    tau: float = 1.0,
    low_confidence_ratio: float = 1.5,
) -> ProbabilityVolume:
    """
    Probability over depth bins from mean group correlation.

    Invalid bins get probability 0. Pixels without any valid bin get the
    uniform distribution and are flagged invalid. Pixels whose peak probability
    stays below ``low_confidence_ratio / D`` are flagged low-confidence.
    """
    if not tau > 0:
        raise ContractViolation(f"tau must be positive, got {tau}")
    corr = group_correlation(F, V_fused, G)
    scores = corr.values.mean(axis=-1)
    probs = softmax_over_bins(scores / tau, corr.valid)
    valid = corr.valid.any(axis=0)
    bins = probs.shape[0]
    low_confidence = ~valid | (probs.max(axis=0) < low_confidence_ratio / bins)
    if bins > 1 and low_confidence.any():
        logger.debug(f"Matching head: {int(low_confidence.sum())} low-confidence pixels of {low_confidence.size}")
    return ProbabilityVolume(probs, scores, valid, low_confidence)


def depth_expectation(prob: ProbabilityVolume, hyps: DepthHypothesisSet) -> DepthMap:
    """d(p) = sum_i d_i P(p, i)."""
    if prob.probs.shape != hyps.samples.shape:
        raise ContractViolation(f"Probability {prob.probs.shape} does not match hypotheses {hyps.samples.shape}")
    depth = (prob.probs * hyps.samples).sum(axis=0)
    # keep the convex-combination bound under floating-point round-off
    depth = np.clip(depth, hyps.samples.min(axis=0), hyps.samples.max(axis=0))
    return DepthMap(depth, prob.valid)


def _axis_weights(factor: int) -> np.ndarray:
    """(factor, 3) linear-interpolation weights over coarse neighbors -1, 0, +1."""
    offsets = (np.arange(factor) + 0.5) / factor - 0.5
    weights = np.zeros((factor, 3))
    weights[:, 0] = np.maximum(-offsets, 0.0)
    weights[:, 2] = np.maximum(offsets, 0.0)
    weights[:, 1] = 1.0 - np.abs(offsets)
    return weights


def bilinear_upsample_mask(height: int, width: int, factor: int = UPSAMPLE_FACTOR) -> UpsampleMask:
    """Masks that reproduce bilinear interpolation between coarse pixel centers."""
    axis = _axis_weights(factor)
    kernel = np.einsum("ia,jb->ijab", axis, axis).reshape(factor, factor, 9)
    return UpsampleMask(np.broadcast_to(kernel, (height, width, factor, factor, 9)).copy())


def _neighborhood(grid: Grid2D) -> np.ndarray:
    """(h, w, 9, C) replicate-padded 3x3 neighborhoods, row-major."""
    height, width, _ = grid.shape
    padded = replicate_pad(grid)
    return np.stack(
        [padded[dy:dy + height, dx:dx + width] for dy in range(3) for dx in range(3)],
        axis=2,
    )


def context_upsample_mask(context: Grid2D, sharpness: float = 4.0, factor: int = UPSAMPLE_FACTOR) -> UpsampleMask:
    """
    Bilinear masks modulated by feature affinity.

    Each neighbor weight is multiplied by exp(-sharpness * |S(q) - S(p)|^2 / C),
    so fine pixels draw less from neighbors across a context-feature boundary.
    """
    height, width, channels = context.shape
    base = bilinear_upsample_mask(height, width, factor).weights
    neighbors = _neighborhood(context)
    distance = ((neighbors - context[:, :, None, :]) ** 2).sum(axis=-1) / channels
    affinity = np.exp(-sharpness * distance)
    weights = base * affinity[:, :, None, None, :]
    weights /= weights.sum(axis=-1, keepdims=True)
    return UpsampleMask(weights)


def convex_upsample(coarse: DepthMap, mask: UpsampleMask, factor: int = UPSAMPLE_FACTOR) -> UpsampleResult:
    """Fine pixel = convex combination of the coarse 3x3 neighborhood; fine validity follows the center pixel."""
    height, width = coarse.shape
    if mask.weights.shape != (height, width, factor, factor, 9):
        raise ContractViolation(f"Mask {mask.weights.shape} does not fit coarse map {coarse.shape} at x{factor}")
    weights = np.maximum(mask.weights, 0.0)
    sums = weights.sum(axis=-1, keepdims=True)
    off = (np.abs(sums - 1.0) > 1e-9) | np.any(mask.weights < 0, axis=-1, keepdims=True)
    renormalized = int(off.sum())
    if renormalized:
        center = np.zeros(9)
        center[4] = 1.0
        weights = np.where(sums > 0, weights / np.where(sums > 0, sums, 1.0), center)
        logger.warning(f"convex_upsample: renormalized {renormalized} mask rows")

    neighbors = _neighborhood(coarse.depth[..., None])[..., 0]  # (h, w, 9)
    fine = np.einsum("yxijk,yxk->yixj", weights, neighbors).reshape(height * factor, width * factor)
    valid = np.repeat(np.repeat(coarse.valid, factor, axis=0), factor, axis=1)
    return UpsampleResult(DepthMap(fine, valid), renormalized)
