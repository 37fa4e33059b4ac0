"""
File formats: PPM/PGM images via OpenCV, PFM depth maps, feature files and JSON.

All writers produce byte-identical files for identical inputs.
"""

import json
import logging
from pathlib import Path
from typing import Any, Tuple

import cv2
import numpy as np
from pydantic import BaseModel

from app.core.errors import ConfigError, ContractViolation

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"M2DF"
FEATURE_HEADER = np.dtype(
    [("magic", "S4"), ("height", "<u4"), ("width", "<u4"), ("channels", "<u4"), ("scale", "<f4")]
)


def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_ppm(path: Path, image: np.ndarray) -> None:
    """Write an RGB [0, 1] image as binary PPM."""
    rgb = np.clip(np.rint(np.asarray(image)[..., :3] * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(_ensure_parent(path)), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Failed to write {path}")


def read_ppm(path: Path) -> np.ndarray:
    """Read a PPM as an RGB float64 image in [0, 1]."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise ConfigError(f"Cannot read image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0


def write_pgm(path: Path, values: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> None:
    """Write a single-channel map as 8-bit PGM, linearly mapped from [vmin, vmax]."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        values = values[..., 0]
    lo = float(values.min()) if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    gray = np.clip(np.rint((values - lo) / span * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(_ensure_parent(path)), gray):
        raise OSError(f"Failed to write {path}")


def write_pfm(path: Path, depth: np.ndarray) -> None:
    """Single-channel PFM ("Pf"), little-endian (scale -1.0), rows stored bottom-up."""
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ContractViolation(f"PFM expects an (H, W) map, got {depth.shape}")
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    with open(_ensure_parent(path), "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(depth[::-1]).tobytes())


def read_pfm(path: Path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            kind = f.readline().strip()
            dims = f.readline().split()
            scale_line = f.readline().strip()
            raw = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read depth map {path}: {e}") from e
    if kind not in (b"Pf", b"PF") or len(dims) != 2:
        raise ConfigError(f"{path} is not a PFM file")
    try:
        width, height = int(dims[0]), int(dims[1])
        scale = float(scale_line)
    except ValueError as e:
        raise ConfigError(f"{path} has a malformed PFM header: {e}") from e
    if width < 1 or height < 1 or scale == 0:
        raise ConfigError(f"{path} has a malformed PFM header: size {width}x{height}, scale {scale}")
    channels = 3 if kind == b"PF" else 1
    expected = width * height * channels * 4
    if len(raw) < expected:
        raise ConfigError(f"{path} is truncated: {len(raw)} data bytes, expected {expected}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=width * height * channels)
    data = data.reshape(height, width, channels)[::-1]
    return data[..., 0].astype(np.float64)


def write_feature_file(path: Path, features: np.ndarray, scale: float) -> None:
    """Header {magic, H, W, C, scale} then float32 little-endian (H, W, C) row-major."""
    height, width, channels = features.shape
    header = np.array([(FEATURE_MAGIC, height, width, channels, scale)], dtype=FEATURE_HEADER)
    with open(_ensure_parent(path), "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_feature_file(path: Path) -> Tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < FEATURE_HEADER.itemsize:
        raise ConfigError(f"{path} is too short for a feature header")
    header = np.frombuffer(raw, dtype=FEATURE_HEADER, count=1)[0]
    if header["magic"] != FEATURE_MAGIC:
        raise ConfigError(f"{path} has bad magic {header['magic']!r}")
    shape = (int(header["height"]), int(header["width"]), int(header["channels"]))
    count = shape[0] * shape[1] * shape[2]
    body = np.frombuffer(raw, dtype="<f4", offset=FEATURE_HEADER.itemsize)
    if body.size != count:
        raise ConfigError(f"{path} holds {body.size} values, header declares {count}")
    return body.reshape(shape).astype(np.float64), int(round(float(header["scale"])))


def write_json(path: Path, payload: Any) -> None:
    """Deterministic JSON (sorted keys); pydantic models are dumped by alias."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json", by_alias=True)
    text = json.dumps(payload, indent=2, sort_keys=True)
    _ensure_parent(path).write_text(text + "\n")


class DatasetPaths:
    """
    Layout of a two-frame dataset directory.

        rig.json, pose.json, scene.json
        frames/cam{c}_t{t}.ppm
        depth/cam{c}_t{t}.pfm
    """

    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def rig(self) -> Path:
        return self.root / "rig.json"

    @property
    def pose(self) -> Path:
        return self.root / "pose.json"

    @property
    def scene(self) -> Path:
        return self.root / "scene.json"

    def frame(self, camera: int, t: int) -> Path:
        return self.root / "frames" / f"cam{camera}_t{t}.ppm"

    def depth(self, camera: int, t: int) -> Path:
        return self.root / "depth" / f"cam{camera}_t{t}.pfm"
