"""
Per-pixel depth hypothesis sets for the plane sweep.

Three range modes are supported: ``adaptive`` scales the range with the prior
depth, ``fixed`` uses a constant half width around the prior and ``vanilla``
spans the whole scene at every pixel.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.core.errors import ContractViolation
from app.models.depth import SamplingMode, Spacing
from app.schemas.pipeline import HypothesisConfig
from app.services.geometry import Z_MIN
from app.services.numerics import DepthMap

logger = logging.getLogger(__name__)

DepthRange = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class DepthHypothesisSet:
    """``samples`` has shape (D, H, W) and is nondecreasing along the bin axis."""

    samples: np.ndarray
    mode: SamplingMode = SamplingMode.ADAPTIVE
    spacing: Spacing = Spacing.INVERSE_DEPTH

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[0] < 1:
            raise ContractViolation(f"Hypotheses must be (D, H, W), got {samples.shape}")
        if not np.all(np.isfinite(samples)) or np.any(samples <= 0):
            raise ContractViolation("Depth hypotheses must be finite and positive")
        if np.any(np.diff(samples, axis=0) < 0):
            raise ContractViolation("Depth hypotheses must be nondecreasing along bins")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def bins(self) -> int:
        return self.samples.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.samples.shape[1:]


def _clamp_prior(d_init: DepthMap, scene_max: float | None) -> np.ndarray:
    depth = d_init.depth
    if np.any(d_init.valid & (depth <= 0)):
        raise ContractViolation("Prior depth must be positive at every valid pixel")
    if d_init.valid.any():
        fill = float(np.median(depth[d_init.valid]))
    else:
        fill = Z_MIN
    depth = np.where(d_init.valid, depth, fill)
    upper = np.inf if scene_max is None else scene_max
    return np.clip(depth, Z_MIN, upper)


def adaptive_range(d_init: DepthMap, alpha: float, scene_max: float | None = None) -> DepthRange:
    """Range [d/(1+alpha), d*(1+alpha)] around the prior; invalid prior pixels use the valid median."""
    if alpha < 0:
        raise ContractViolation(f"alpha must be nonnegative, got {alpha}")
    prior = _clamp_prior(d_init, scene_max)
    return prior / (1.0 + alpha), prior * (1.0 + alpha)


def fixed_range(d_init: DepthMap, half_width: float, scene_max: float | None = None) -> DepthRange:
    if half_width <= 0:
        raise ContractViolation(f"half_width must be positive, got {half_width}")
    prior = _clamp_prior(d_init, scene_max)
    return np.maximum(prior - half_width, Z_MIN), prior + half_width


def vanilla_range(scene_min: float, scene_max: float, shape: Tuple[int, int]) -> DepthRange:
    if not 0 < scene_min < scene_max:
        raise ContractViolation(f"Scene bounds must satisfy 0 < min < max, got ({scene_min}, {scene_max})")
    return np.full(shape, float(scene_min)), np.full(shape, float(scene_max))


def generate(
    depth_range: DepthRange,
    bins: int,
    spacing: Spacing = Spacing.INVERSE_DEPTH,
    mode: SamplingMode = SamplingMode.ADAPTIVE,
) -> DepthHypothesisSet:
    """
    Place ``bins`` samples in each per-pixel range.

    Args:
        depth_range: (d_min, d_max) arrays of shape (H, W).
        bins: number of samples D.
        spacing: inverse_depth places 1/d uniformly, linear places d uniformly.

    Returns:
        DepthHypothesisSet with samples (D, H, W); the endpoints are exact when D >= 2.
    """
    if bins < 1:
        raise ContractViolation(f"bins must be at least 1, got {bins}")
    raw_min = np.asarray(depth_range[0], dtype=np.float64)
    raw_max = np.asarray(depth_range[1], dtype=np.float64)
    if np.any(raw_min > raw_max):
        raise ContractViolation("Depth range has d_min > d_max")
    d_min = np.maximum(raw_min, Z_MIN)
    d_max = np.maximum(raw_max, Z_MIN)

    spacing = Spacing(spacing)
    if bins == 1:
        if spacing == Spacing.INVERSE_DEPTH:
            single = np.sqrt(d_min * d_max)
        else:
            single = 0.5 * (d_min + d_max)
        return DepthHypothesisSet(single[None], mode, spacing)

    t = np.linspace(0.0, 1.0, bins)[:, None, None]
    if spacing == Spacing.INVERSE_DEPTH:
        inv_near = 1.0 / d_min
        inv_far = 1.0 / d_max
        samples = 1.0 / (inv_near + t * (inv_far - inv_near))
    else:
        # linear samples are placed on the raw range, then clamped to Z_MIN
        samples = np.maximum(raw_min + t * (raw_max - raw_min), Z_MIN)
    samples[0] = d_min
    samples[-1] = d_max
    # ranges may be degenerate, samples must stay monotone after endpoint assignment
    samples = np.clip(samples, d_min, d_max)
    return DepthHypothesisSet(samples, mode, spacing)


def build_hypotheses(prior: DepthMap, config: HypothesisConfig) -> DepthHypothesisSet:
    """Range selection by sampling mode followed by :func:`generate`."""
    if config.mode == SamplingMode.ADAPTIVE:
        depth_range = adaptive_range(prior, config.alpha, config.scene_max)
    elif config.mode == SamplingMode.FIXED:
        depth_range = fixed_range(prior, config.fixed_half_width, config.scene_max)
    else:
        depth_range = vanilla_range(config.scene_min, config.scene_max, prior.shape)
    return generate(depth_range, config.bins, config.spacing, config.mode)


def nearest_bin(hyps: DepthHypothesisSet, depth: np.ndarray) -> np.ndarray:
    """Index of the hypothesis closest to ``depth`` per pixel, measured in the spacing's own units."""
    depth = np.maximum(np.asarray(depth, dtype=np.float64), Z_MIN)
    if hyps.spacing == Spacing.INVERSE_DEPTH:
        distance = np.abs(1.0 / hyps.samples - 1.0 / depth[None])
    else:
        distance = np.abs(hyps.samples - depth[None])
    return np.argmin(distance, axis=0)
