"""
Dense-grid arithmetic shared by every stage of the depth pipeline.

Grids are plain float64 numpy arrays:
    Grid2D: (H, W, C)
    Grid3D: (D, H, W, C)
Layout is row-major with channels innermost. Every function here is pure and
never mutates its inputs. Borders are handled by edge replication everywhere.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import cv2
import numpy as np

from app.core.errors import ContractViolation

logger = logging.getLogger(__name__)

Grid2D = np.ndarray
Grid3D = np.ndarray

# sigmoid saturates to exactly 0/1 in float64 past this magnitude
_SIGMOID_BOUND = 36.0


def as_grid(values, name: str = "grid") -> Grid2D:
    """Return a float64 (H, W, C) copy of ``values``; 2-D input gains a channel axis."""
    grid = np.array(values, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[..., None]
    if grid.ndim != 3:
        raise ContractViolation(f"{name} must be (H, W) or (H, W, C), got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ContractViolation(f"{name} contains non-finite values")
    return grid


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "grids") -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"Shape mismatch between {what}: {a.shape} vs {b.shape}")


def per_channel(fn: Callable[[np.ndarray], np.ndarray], grid: Grid2D) -> Grid2D:
    """Apply a single-channel OpenCV filter to every channel of an (H, W, C) grid."""
    planes = [fn(np.ascontiguousarray(grid[..., c])) for c in range(grid.shape[-1])]
    return np.stack(planes, axis=-1)


@dataclass(frozen=True)
class ConvKernel3x3:
    """
    3x3 convolution kernel, weights laid out as (ky, kx, in, out).

    Applied in correlation form (no kernel flip), the convention of learned
    convolution layers.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if weights.ndim != 4 or weights.shape[:2] != (3, 3):
            raise ContractViolation(f"Kernel weights must be (3, 3, in, out), got {weights.shape}")
        if bias.shape != (weights.shape[3],):
            raise ContractViolation(f"Kernel bias must have {weights.shape[3]} entries, got {bias.shape}")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise ContractViolation("Kernel contains non-finite values")
        weights.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    @classmethod
    def zeros(cls, in_channels: int, out_channels: int, bias: float = 0.0) -> "ConvKernel3x3":
        return cls(np.zeros((3, 3, in_channels, out_channels)), np.full(out_channels, bias))

    @classmethod
    def identity(cls, channels: int) -> "ConvKernel3x3":
        weights = np.zeros((3, 3, channels, channels))
        weights[1, 1] = np.eye(channels)
        return cls(weights, np.zeros(channels))

    @classmethod
    def seeded(cls, in_channels: int, out_channels: int, seed: int, gain: float = 1.0) -> "ConvKernel3x3":
        """He-style normal initialization from a fixed seed."""
        rng = np.random.default_rng(seed)
        std = gain * np.sqrt(2.0 / (9 * in_channels))
        weights = rng.normal(0.0, std, size=(3, 3, in_channels, out_channels))
        bias = rng.normal(0.0, 0.01, size=out_channels)
        return cls(weights, bias)


def replicate_pad(grid: Grid2D, pad: int = 1) -> Grid2D:
    return np.pad(grid, ((pad, pad), (pad, pad), (0, 0)), mode="edge")


def replicate_pad_adjoint(padded: Grid2D, pad: int = 1) -> Grid2D:
    """Adjoint of :func:`replicate_pad`: fold the halo back onto the border pixels."""
    acc = np.array(padded, dtype=np.float64)
    for _ in range(pad):
        acc[1] += acc[0]
        acc[-2] += acc[-1]
        acc = acc[1:-1]
        acc[:, 1] += acc[:, 0]
        acc[:, -2] += acc[:, -1]
        acc = acc[:, 1:-1]
    return acc


def conv3x3(src: Grid2D, kernel: ConvKernel3x3) -> Grid2D:
    """Same-size 3x3 convolution with replicate padding."""
    if src.ndim != 3 or src.shape[-1] != kernel.in_channels:
        raise ContractViolation(
            f"conv3x3 expects {kernel.in_channels} input channels, got shape {src.shape}"
        )
    height, width, _ = src.shape
    padded = replicate_pad(src)
    out = np.broadcast_to(kernel.bias, (height, width, kernel.out_channels)).copy()
    for ky in range(3):
        for kx in range(3):
            out += padded[ky:ky + height, kx:kx + width] @ kernel.weights[ky, kx]
    return out


def conv3x3_adjoint(grad_out: Grid2D, kernel: ConvKernel3x3) -> Grid2D:
    """Gradient of ``sum(conv3x3(x, k) * grad_out)`` with respect to ``x``."""
    height, width, out_channels = grad_out.shape
    if out_channels != kernel.out_channels:
        raise ContractViolation(f"conv3x3_adjoint expects {kernel.out_channels} channels, got {out_channels}")
    padded = np.zeros((height + 2, width + 2, kernel.in_channels))
    for ky in range(3):
        for kx in range(3):
            padded[ky:ky + height, kx:kx + width] += grad_out @ kernel.weights[ky, kx].T
    return replicate_pad_adjoint(padded)


def box3x3(grid: Grid2D) -> Grid2D:
    """3x3 mean filter with replicate padding."""
    return per_channel(
        lambda plane: cv2.boxFilter(plane, cv2.CV_64F, (3, 3), normalize=True, borderType=cv2.BORDER_REPLICATE),
        grid,
    )


def box3x3_adjoint(grad_out: Grid2D) -> Grid2D:
    """Adjoint of :func:`box3x3` (the box filter is not self-adjoint at the border)."""
    height, width, channels = grad_out.shape
    padded = np.zeros((height + 2, width + 2, channels))
    for ky in range(3):
        for kx in range(3):
            padded[ky:ky + height, kx:kx + width] += grad_out / 9.0
    return replicate_pad_adjoint(padded)


def sigmoid(x: np.ndarray) -> np.ndarray:
    clipped = np.clip(x, -_SIGMOID_BOUND, _SIGMOID_BOUND)
    return 1.0 / (1.0 + np.exp(-clipped))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax_over_bins(volume: np.ndarray, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Softmax along axis 0 (the depth-bin axis).

    Bins where ``valid`` is False receive probability 0. A column with no valid
    bin gets the uniform distribution over all bins.
    """
    logits = np.asarray(volume, dtype=np.float64)
    bins = logits.shape[0]
    if valid is None:
        valid = np.ones(logits.shape, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(valid, dtype=bool), logits.shape)
    masked = np.where(valid, logits, -np.inf)
    peak = masked.max(axis=0, keepdims=True)
    any_valid = np.isfinite(peak)
    shifted = np.where(valid, logits - np.where(any_valid, peak, 0.0), 0.0)
    weights = np.where(valid, np.exp(shifted), 0.0)
    total = weights.sum(axis=0, keepdims=True)
    probs = weights / np.where(total > 0, total, 1.0)
    return np.where(any_valid, probs, 1.0 / bins)


class WindowStats(NamedTuple):
    mean_a: Grid2D
    mean_b: Grid2D
    var_a: Grid2D
    var_b: Grid2D
    cov: Grid2D


def window_stats(a: Grid2D, b: Grid2D) -> WindowStats:
    """Per-pixel 3x3 means, variances and covariance (replicate padding)."""
    check_same_shape(a, b, "window_stats inputs")
    mean_a = box3x3(a)
    mean_b = box3x3(b)
    var_a = np.maximum(box3x3(a * a) - mean_a * mean_a, 0.0)
    var_b = np.maximum(box3x3(b * b) - mean_b * mean_b, 0.0)
    cov = box3x3(a * b) - mean_a * mean_b
    return WindowStats(mean_a, mean_b, var_a, var_b, cov)


def _bilinear_corners(coords: np.ndarray, height: int, width: int):
    x = coords[..., 0]
    y = coords[..., 1]
    finite = np.isfinite(x) & np.isfinite(y)
    inside = finite & (x >= 0.0) & (x <= width - 1) & (y >= 0.0) & (y <= height - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.clip(np.floor(xs), 0, max(width - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(ys), 0, max(height - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = xs - x0
    wy = ys - y0
    return inside, x0, x1, y0, y1, wx, wy


def bilinear_sample(src: Grid2D, coords: np.ndarray):
    """
    Sample ``src`` at continuous pixel coordinates.

    Args:
        src: (H, W, C) grid.
        coords: (..., 2) array of (x, y); integer values are pixel centers.

    Returns:
        (values, mask): values (..., C) with 0 where invalid, mask (...) float in {0, 1}.
    """
    height, width, _ = src.shape
    inside, x0, x1, y0, y1, wx, wy = _bilinear_corners(coords, height, width)
    wx = wx[..., None]
    wy = wy[..., None]
    top = (1.0 - wx) * src[y0, x0] + wx * src[y0, x1]
    bottom = (1.0 - wx) * src[y1, x0] + wx * src[y1, x1]
    values = (1.0 - wy) * top + wy * bottom
    values = np.where(inside[..., None], values, 0.0)
    return values, inside.astype(np.float64)


def bilinear_gradient(src: Grid2D, coords: np.ndarray):
    """Spatial derivatives (d/dx, d/dy) of the bilinear interpolant at ``coords``; zero where invalid."""
    height, width, _ = src.shape
    inside, x0, x1, y0, y1, wx, wy = _bilinear_corners(coords, height, width)
    wx = wx[..., None]
    wy = wy[..., None]
    d_dx = (1.0 - wy) * (src[y0, x1] - src[y0, x0]) + wy * (src[y1, x1] - src[y1, x0])
    d_dy = (1.0 - wx) * (src[y1, x0] - src[y0, x0]) + wx * (src[y1, x1] - src[y0, x1])
    keep = inside[..., None]
    return np.where(keep, d_dx, 0.0), np.where(keep, d_dy, 0.0)


def sobel(grid: Grid2D):
    """Sobel derivatives (d/dx, d/dy) per channel, replicate border."""
    gx = per_channel(lambda p: cv2.Sobel(p, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_REPLICATE), grid)
    gy = per_channel(lambda p: cv2.Sobel(p, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_REPLICATE), grid)
    return gx, gy


def gaussian_blur(grid: Grid2D, sigma: float) -> Grid2D:
    """Separable Gaussian blur per channel, replicate border; sigma in pixels."""
    return per_channel(lambda p: cv2.GaussianBlur(p, (0, 0), sigma, borderType=cv2.BORDER_REPLICATE), grid)


def area_downsample(grid: Grid2D, factor: int) -> Grid2D:
    """Block-average downsampling by an integer factor."""
    height, width, _ = grid.shape
    if height % factor or width % factor:
        raise ContractViolation(f"Grid {height}x{width} is not divisible by {factor}")
    size = (width // factor, height // factor)
    return per_channel(lambda p: cv2.resize(p, size, interpolation=cv2.INTER_AREA), grid)


def shift_replicate(grid: Grid2D, dy: int, dx: int) -> Grid2D:
    """out[y, x] = grid[clamp(y + dy), clamp(x + dx)]."""
    height, width, _ = grid.shape
    rows = np.clip(np.arange(height) + dy, 0, height - 1)
    cols = np.clip(np.arange(width) + dx, 0, width - 1)
    return grid[rows][:, cols]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel metric z-depth (H, W) with a boolean validity mask."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float64)
        if depth.ndim == 3 and depth.shape[-1] == 1:
            depth = depth[..., 0]
        valid = np.broadcast_to(np.asarray(self.valid, dtype=bool), depth.shape).copy()
        if depth.ndim != 2:
            raise ContractViolation(f"Depth map must be (H, W), got shape {depth.shape}")
        if not np.all(np.isfinite(depth)):
            raise ContractViolation("Depth map contains non-finite values")
        depth.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def dense(cls, depth) -> "DepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, depth > 0)

    @property
    def shape(self):
        return self.depth.shape

    def with_depth(self, depth) -> "DepthMap":
        return DepthMap(depth, self.valid)
