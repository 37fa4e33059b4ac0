"""
Multi-grained feature fusion and the feature providers feeding it.

Providers turn an RGB image into a feature grid at 1/4 resolution. The
internal provider supplies photometric and gradient cues for matching; the
prior-role provider supplies local texture statistics that stand in for
segmentation-model embeddings. Real encoder outputs can be injected through
feature files.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Tuple

import cv2
import numpy as np

from app.core.errors import ConfigError, ContractViolation
from app.models.depth import FusionMode
from app.services.numerics import (
    ConvKernel3x3,
    Grid2D,
    area_downsample,
    check_same_shape,
    conv3x3,
    conv3x3_adjoint,
    gaussian_blur,
    per_channel,
    relu,
    shift_replicate,
    sigmoid,
    sobel,
)
from app.utils.io import read_feature_file

logger = logging.getLogger(__name__)

FEATURE_SCALE = 4

# neighbor offsets (dy, dx) used to tile base channels out to C
_TAP_OFFSETS = [(0, 0), (0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)]


def to_gray(image: Grid2D) -> Grid2D:
    """Luma of an RGB [0, 1] image as an (H, W, 1) grid."""
    if image.shape[-1] == 1:
        return image
    rgb = np.ascontiguousarray(image[..., :3], dtype=np.float64)
    return cv2.cvtColor(rgb.astype(np.float32), cv2.COLOR_RGB2GRAY).astype(np.float64)[..., None]


def tile_channels(base: Grid2D, channels: int) -> Grid2D:
    """Channel k is base channel k mod B, shifted by the (k // B)-th neighbor tap."""
    n_base = base.shape[-1]
    planes = []
    for k in range(channels):
        dy, dx = _TAP_OFFSETS[(k // n_base) % len(_TAP_OFFSETS)]
        planes.append(shift_replicate(base[..., k % n_base:k % n_base + 1], dy, dx))
    return np.concatenate(planes, axis=-1)


def normalize_pixels(features: Grid2D) -> Grid2D:
    """Scale every pixel vector to norm sqrt(C); all-zero pixels stay zero."""
    channels = features.shape[-1]
    norm = np.linalg.norm(features, axis=-1, keepdims=True)
    scale = np.where(norm > 1e-12, np.sqrt(channels) / np.where(norm > 1e-12, norm, 1.0), 0.0)
    return features * scale


class FeatureProvider(ABC):
    """Deterministic image -> feature grid at 1/``scale`` resolution with ``channels`` channels."""

    def __init__(self, channels: int, scale: int = FEATURE_SCALE):
        if channels < 1:
            raise ContractViolation(f"channels must be positive, got {channels}")
        self.channels = channels
        self.scale = scale

    @abstractmethod
    def _extract(self, image: Grid2D, camera: int, frame: int) -> Grid2D:
        ...

    def __call__(self, image: Grid2D, camera: int = 0, frame: int = 0) -> Grid2D:
        height, width = image.shape[:2]
        features = self._extract(image, camera, frame)
        expected = (height // self.scale, width // self.scale, self.channels)
        if features.shape != expected:
            raise ContractViolation(f"{type(self).__name__} produced {features.shape}, declared {expected}")
        return features


class InternalFeatureProvider(FeatureProvider):
    """
    Band-passed pooled gray and its Sobel gradients at several smoothing scales, tiled over neighbor taps.

    At each scale sigma (in feature pixels) the pooled gray is blurred by sigma
    and by 2 * sigma; the difference and the gradients of the first blur form
    three base channels. The blur removes texture near the Nyquist rate of the
    feature grid.
    """

    def __init__(
        self,
        channels: int,
        scale: int = FEATURE_SCALE,
        sigmas: Sequence[float] = (1.0, 2.0),
        gradient_weight: float = 0.5,
    ):
        super().__init__(channels, scale)
        if not sigmas or min(sigmas) <= 0:
            raise ContractViolation(f"Smoothing scales must be positive, got {list(sigmas)}")
        self.sigmas = tuple(float(s) for s in sigmas)
        self.gradient_weight = gradient_weight

    def base_channels(self, image: Grid2D) -> Grid2D:
        """Untiled, unnormalized (h, w, 3 * len(sigmas)) band and gradient channels."""
        gray = area_downsample(to_gray(image), self.scale)
        bands = []
        for sigma in self.sigmas:
            smooth = gaussian_blur(gray, sigma)
            gx, gy = sobel(smooth)
            weight = self.gradient_weight / 8.0
            bands += [smooth - gaussian_blur(gray, 2.0 * sigma), weight * gx, weight * gy]
        return np.concatenate(bands, axis=-1)

    def _extract(self, image: Grid2D, camera: int, frame: int) -> Grid2D:
        return normalize_pixels(tile_channels(self.base_channels(image), self.channels))


class TextureFeatureProvider(FeatureProvider):
    """Local standard deviation at three window sizes; a cheap region-boundary cue."""

    windows: Tuple[int, ...] = (3, 5, 9)

    def _extract(self, image: Grid2D, camera: int, frame: int) -> Grid2D:
        gray = area_downsample(to_gray(image), self.scale)
        stds = []
        for k in self.windows:
            box = lambda p, k=k: cv2.boxFilter(p, cv2.CV_64F, (k, k), borderType=cv2.BORDER_REPLICATE)
            mean = per_channel(box, gray)
            var = np.maximum(per_channel(box, gray * gray) - mean * mean, 0.0)
            stds.append(np.sqrt(var))
        return normalize_pixels(tile_channels(np.concatenate(stds, axis=-1), self.channels))


class ExternalFeatureProvider(FeatureProvider):
    """Reads ``{feature_dir}/cam{c}_t{frame}[_{suffix}].feat`` written by an external encoder."""

    def __init__(self, feature_dir: Path, channels: int, scale: int = FEATURE_SCALE, suffix: str = ""):
        super().__init__(channels, scale)
        self.feature_dir = Path(feature_dir)
        self.suffix = suffix

    def path_for(self, camera: int, frame: int) -> Path:
        suffix = f"_{self.suffix}" if self.suffix else ""
        return self.feature_dir / f"cam{camera}_t{frame}{suffix}.feat"

    def _extract(self, image: Grid2D, camera: int, frame: int) -> Grid2D:
        path = self.path_for(camera, frame)
        if not path.is_file():
            raise ConfigError(f"Missing external feature file: {path}")
        features, scale = read_feature_file(path)
        if scale != self.scale:
            raise ConfigError(f"{path} declares scale {scale}, expected {self.scale}")
        return features


@dataclass(frozen=True)
class MffKernels:
    k1: ConvKernel3x3  # C -> hidden
    k2: ConvKernel3x3  # hidden -> C
    k3: ConvKernel3x3  # C -> C

    @classmethod
    def seeded(cls, channels: int, seed: int, hidden: Optional[int] = None) -> "MffKernels":
        """
        Deterministic initialization.

        k3 starts near identity so the fused feature stays close to C + W*S.
        """
        hidden = hidden or channels
        k3 = ConvKernel3x3.seeded(channels, channels, seed + 2, gain=0.1)
        weights = np.array(k3.weights)
        weights[1, 1] += np.eye(channels)
        return cls(
            k1=ConvKernel3x3.seeded(channels, hidden, seed),
            k2=ConvKernel3x3.seeded(hidden, channels, seed + 1),
            k3=ConvKernel3x3(weights, k3.bias),
        )

    @classmethod
    def load(cls, path: Path) -> "MffKernels":
        """npz with arrays k1_w, k1_b, k2_w, k2_b, k3_w, k3_b."""
        try:
            with np.load(path) as data:
                kernels = {name: ConvKernel3x3(data[f"{name}_w"], data[f"{name}_b"]) for name in ("k1", "k2", "k3")}
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"Cannot load MFF kernels from {path}: {e}") from e
        return cls(**kernels)


def attn_weights(C_feat: Grid2D, S_feat: Grid2D, k1: ConvKernel3x3, k2: ConvKernel3x3) -> Grid2D:
    """W = sigmoid(conv(relu(conv(C + S, k1)), k2)), strictly inside (0, 1)."""
    check_same_shape(C_feat, S_feat, "internal and prior features")
    return sigmoid(conv3x3(relu(conv3x3(C_feat + S_feat, k1)), k2))


def fuse_features(C_feat: Grid2D, S_feat: Grid2D, W: Grid2D, k3: ConvKernel3x3) -> Grid2D:
    """M = conv(C + W * S, k3)."""
    check_same_shape(C_feat, S_feat, "internal and prior features")
    check_same_shape(C_feat, W, "features and attention weights")
    return conv3x3(C_feat + W * S_feat, k3)


def vanilla_fuse(C_feat: Grid2D, S_feat: Grid2D) -> Grid2D:
    check_same_shape(C_feat, S_feat, "internal and prior features")
    return C_feat + S_feat


def multi_grained_fusion(C_feat: Grid2D, S_feat: Grid2D, kernels: MffKernels, mode: FusionMode = FusionMode.MFF) -> Grid2D:
    if FusionMode(mode) == FusionMode.VFF:
        return vanilla_fuse(C_feat, S_feat)
    W = attn_weights(C_feat, S_feat, kernels.k1, kernels.k2)
    return fuse_features(C_feat, S_feat, W, kernels.k3)


class MffGradients(NamedTuple):
    grad_c: Grid2D
    grad_s: Grid2D
    grad_s_attention: Grid2D  # part of grad_s flowing through the attention weights


def _forward(C_feat: Grid2D, S_feat: Grid2D, kernels: MffKernels):
    z1 = conv3x3(C_feat + S_feat, kernels.k1)
    W = sigmoid(conv3x3(relu(z1), kernels.k2))
    M = conv3x3(C_feat + W * S_feat, kernels.k3)
    return M, W, z1


def mff_input_gradients(C_feat: Grid2D, S_feat: Grid2D, kernels: MffKernels, probe: Grid2D) -> MffGradients:
    """Analytic gradients of sum(M * probe) with respect to C and S (relu'(0) = 0)."""
    _, W, z1 = _forward(C_feat, S_feat, kernels)
    g_x = conv3x3_adjoint(probe, kernels.k3)
    g_w = g_x * S_feat
    g_z2 = g_w * W * (1.0 - W)
    g_h = conv3x3_adjoint(g_z2, kernels.k2)
    g_z1 = g_h * (z1 > 0)
    g_a = conv3x3_adjoint(g_z1, kernels.k1)
    return MffGradients(g_x + g_a, g_x * W + g_a, g_a)


class GradientCheckResult(NamedTuple):
    max_rel_error: float
    checked: int
    excluded: int
    gradients: MffGradients


def gradient_check(
    C_feat: Grid2D,
    S_feat: Grid2D,
    kernels: MffKernels,
    eps: float = 1e-6,
    seed: int = 0,
    kink_margin: float = 10.0,
) -> GradientCheckResult:
    """
    Compare analytic input gradients of attn_weights -> fuse_features with central differences.

    The scalar objective is sum(M * R) for a seeded random probe R. Entries
    whose relu activation pattern changes within ``kink_margin * eps`` are
    excluded. Relative error is |a - f| / max(|a|, |f|, 1e-3 * max|a|).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ContractViolation(f"eps must lie in [1e-7, 1e-4], got {eps}")
    probe = np.random.default_rng(seed).normal(size=C_feat.shape[:2] + (kernels.k3.out_channels,))
    grads = mff_input_gradients(C_feat, S_feat, kernels, probe)
    floor = 1e-3 * max(np.abs(grads.grad_c).max(), np.abs(grads.grad_s).max(), 1e-300)

    def objective(c, s):
        M, _, z1 = _forward(c, s, kernels)
        return float((M * probe).sum()), z1 > 0

    _, pattern = objective(C_feat, S_feat)
    max_err = 0.0
    checked = excluded = 0
    for which, analytic in ((0, grads.grad_c), (1, grads.grad_s)):
        for idx in np.ndindex(*C_feat.shape):
            inputs = [C_feat.copy(), S_feat.copy()]
            values = {}
            stable = True
            for step in (-kink_margin * eps, -eps, eps, kink_margin * eps):
                inputs[which][idx] = (C_feat, S_feat)[which][idx] + step
                values[step], probe_pattern = objective(*inputs)
                stable &= bool(np.array_equal(probe_pattern, pattern))
            if not stable:
                excluded += 1
                continue
            numeric = (values[eps] - values[-eps]) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            max_err = max(max_err, err)
            checked += 1
    logger.info(f"MFF gradient check: max rel error {max_err:.3e} over {checked} entries ({excluded} near kinks)")
    return GradientCheckResult(max_err, checked, excluded, grads)
