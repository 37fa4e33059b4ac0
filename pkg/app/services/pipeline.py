"""
Two-frame surround depth estimation and the synth / eval entry points.

Per camera: features -> prior -> hypotheses -> spatial and temporal volumes
-> fusion -> probability -> expectation -> convex upsample -> metrics.
Per-camera stages are pure and run through ``map_cameras``; every file is
written by the coordinator afterwards.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from app.core.config import load_model, settings
from app.core.errors import ConfigError
from app.models.depth import FeatureSource, InputMode, PriorSource, StfMode, UpsampleMaskKind
from app.schemas.pipeline import PipelineConfig
from app.schemas.report import CameraEstimate, EstimateReport, EvalResult, PerCameraReport
from app.schemas.rig import PoseFile, RigFile
from app.schemas.scene import SceneConfig
from app.services.background_tasks import map_cameras
from app.services.geometry import CameraRig, RigidPose, camera_pose_from_ego, spatial_relative_pose
from app.services.hypotheses import DepthHypothesisSet, build_hypotheses
from app.services.losses import photometric_loss, reconstruct_view
from app.services.metrics import abs_rel_map, evaluate, per_camera_report
from app.services.mff import (
    ExternalFeatureProvider,
    FeatureProvider,
    InternalFeatureProvider,
    MffKernels,
    TextureFeatureProvider,
    multi_grained_fusion,
    normalize_pixels,
)
from app.services.numerics import DepthMap, Grid2D, area_downsample
from app.services.stf_head import (
    UPSAMPLE_FACTOR,
    ProbabilityVolume,
    bilinear_upsample_mask,
    context_upsample_mask,
    convex_upsample,
    depth_expectation,
    matching_head,
    normalize_volume,
    stf_fuse,
)
from app.services.synthetic import TwoFrameSequence, make_two_frame_sequence
from app.services.volumes import FeatureVolume, build_spatial, build_temporal, sweep_parallax
from app.utils.io import DatasetPaths, read_pfm, read_ppm, write_json, write_pfm, write_pgm, write_ppm
from app.utils.validators import list_depth_files

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SurroundFrames:
    """Images of every camera at t-1 and t, with optional ground truth."""

    rig: CameraRig
    previous: List[Grid2D]
    current: List[Grid2D]
    gt_depth: Optional[List[DepthMap]] = None  # frame t
    ego_motion: Optional[RigidPose] = None  # GT P_{t->t-1}

    @classmethod
    def from_sequence(cls, sequence: TwoFrameSequence, rig: CameraRig) -> "SurroundFrames":
        return cls(
            rig=rig,
            previous=[f.image for f in sequence.previous],
            current=[f.image for f in sequence.current],
            gt_depth=[f.depth_gt for f in sequence.current],
            ego_motion=sequence.ego_motion,
        )

    def downsample(self, factor: int) -> "SurroundFrames":
        """Area-pooled images and GT; a GT block is valid only when all its pixels are."""
        if factor == 1:
            return self
        gt = None
        if self.gt_depth is not None:
            gt = []
            for d in self.gt_depth:
                pooled = area_downsample(d.depth[..., None], factor)[..., 0]
                valid = area_downsample(d.valid[..., None].astype(np.float64), factor)[..., 0] >= 1.0 - 1e-12
                gt.append(DepthMap(pooled, valid))
        return SurroundFrames(
            rig=self.rig.scaled(factor),
            previous=[area_downsample(img, factor) for img in self.previous],
            current=[area_downsample(img, factor) for img in self.current],
            gt_depth=gt,
            ego_motion=self.ego_motion,
        )


def load_rig(path: Path) -> CameraRig:
    rig_file = load_model(RigFile, path)
    try:
        return rig_file.to_rig()
    except ValueError as e:
        raise ConfigError(f"Invalid rig {path}: {e}") from e


def load_frames(config: PipelineConfig) -> SurroundFrames:
    """Read a dataset directory; GT depth and pose are picked up when present."""
    if config.data_dir is None:
        raise ConfigError("data_dir is required to load frames")
    paths = DatasetPaths(config.data_dir)
    rig_path = config.rig or paths.rig
    if not Path(rig_path).is_file():
        raise ConfigError(f"Missing rig calibration: {rig_path}")
    rig = load_rig(rig_path)
    previous, current = [], []
    for c in range(len(rig)):
        for t, bucket in ((0, previous), (1, current)):
            path = paths.frame(c, t)
            if not path.is_file():
                raise ConfigError(f"Missing frame {path}")
            image = read_ppm(path)
            camera = rig.camera(c)
            if image.shape[:2] != (camera.height, camera.width):
                raise ConfigError(f"{path} is {image.shape[1]}x{image.shape[0]}, rig says {camera.width}x{camera.height}")
            bucket.append(image)

    gt_depth = None
    if config.input_mode == InputMode.SYNTHETIC and all(paths.depth(c, 1).is_file() for c in range(len(rig))):
        gt_depth = [DepthMap.dense(read_pfm(paths.depth(c, 1))) for c in range(len(rig))]
    ego_motion = load_model(PoseFile, paths.pose).to_pose() if paths.pose.is_file() else None
    logger.info(f"Loaded {len(rig)} cameras from {paths.root} (gt depth: {gt_depth is not None})")
    return SurroundFrames(rig, previous, current, gt_depth, ego_motion)


def resolve_pose(config: PipelineConfig, frames: SurroundFrames) -> Tuple[Optional[RigidPose], str]:
    """Pose precedence: config, then the GT pose file, then none (left to refinement)."""
    if config.pose is not None:
        try:
            return RigidPose.from_matrix(config.pose), "config"
        except ValueError as e:
            raise ConfigError(f"Invalid pose in config: {e}") from e
    if frames.ego_motion is not None:
        return frames.ego_motion, "ground_truth"
    return None, "refinement"


def build_prior(config: PipelineConfig, frames: SurroundFrames, c: int, factor: int) -> DepthMap:
    """Prior depth for camera ``c`` at 1/``factor`` resolution."""
    camera = frames.rig.camera(c)
    shape = (camera.height // factor, camera.width // factor)
    source = config.prior.source
    if source == PriorSource.GT_NOISE:
        if frames.gt_depth is None:
            raise ConfigError("gt_noise prior needs ground-truth depth; use a constant or external prior")
        gt = frames.gt_depth[c]
        pooled = area_downsample(gt.depth[..., None], factor)[..., 0] if factor > 1 else gt.depth
        rng = np.random.default_rng([config.seed, c])
        noise = np.exp(config.prior.noise_sigma * rng.standard_normal(shape))
        return DepthMap.dense(pooled * noise)
    if source == PriorSource.CONSTANT:
        return DepthMap.dense(np.full(shape, config.prior.constant_depth))
    path = Path(config.prior.prior_dir) / f"cam{c}.pfm"
    if not path.is_file():
        raise ConfigError(f"Missing external prior {path}")
    prior = read_pfm(path)
    if prior.shape != shape:
        if prior.shape[0] != shape[0] * factor or prior.shape[1] != shape[1] * factor:
            raise ConfigError(f"External prior {path} is {prior.shape}, expected {shape}")
        prior = area_downsample(prior[..., None], factor)[..., 0]
    return DepthMap.dense(prior)


def make_providers(config: PipelineConfig) -> Tuple[FeatureProvider, FeatureProvider]:
    channels = config.features.channels
    if config.features.source == FeatureSource.EXTERNAL:
        internal: FeatureProvider = ExternalFeatureProvider(config.features.feature_dir, channels)
    else:
        internal = InternalFeatureProvider(channels, sigmas=config.features.smoothing)
    return internal, TextureFeatureProvider(channels)


def load_kernels(config: PipelineConfig) -> MffKernels:
    if config.features.kernel_file is not None:
        return MffKernels.load(config.features.kernel_file)
    return MffKernels.seeded(config.features.channels, config.features.kernel_seed, config.features.hidden_channels)


@dataclass(frozen=True, eq=False)
class CameraFeatures:
    """Fused (MFF or VFF) features of one camera; ``current`` and ``previous`` are pixel-normalized for matching."""

    current: Grid2D
    previous: Grid2D
    context: Grid2D  # unnormalized fused feature at t, source of context upsample masks


class CameraResult(NamedTuple):
    camera: int
    coarse: DepthMap
    depth: DepthMap
    prob: ProbabilityVolume
    hyps: DepthHypothesisSet
    renormalized: int
    metrics: Optional[EvalResult]
    parallax: np.ndarray  # (h, w) largest sweep span over the views taking part
    observable: np.ndarray  # (h, w) every bin valid and parallax >= stf.min_parallax


class EstimateResult(NamedTuple):
    cameras: List[CameraResult]
    report: EstimateReport
    pose: RigidPose


def compute_features(config: PipelineConfig, frames: SurroundFrames) -> List[CameraFeatures]:
    internal, prior_role = make_providers(config)
    kernels = load_kernels(config)

    def fused(image: Grid2D, c: int, frame: int) -> Grid2D:
        return multi_grained_fusion(internal(image, c, frame), prior_role(image, c, frame), kernels, config.features.fusion)

    def extract(c: int) -> CameraFeatures:
        current = fused(frames.current[c], c, 1)
        previous = fused(frames.previous[c], c, 0)
        return CameraFeatures(normalize_pixels(current), normalize_pixels(previous), current)

    return map_cameras(extract, list(range(len(frames.rig))))


def camera_parallax(
    config: PipelineConfig,
    coarse_rig: CameraRig,
    ego_pose: RigidPose,
    c: int,
    hyps: DepthHypothesisSet,
) -> np.ndarray:
    """Largest hypothesis sweep span, in feature pixels, over the source views the fusion mode uses."""
    camera = coarse_rig.camera(c)
    parallax = np.zeros(hyps.shape)
    if config.stf.mode != StfMode.SPATIAL_ONLY:
        cam_pose = camera_pose_from_ego(ego_pose, camera.extrinsic)
        parallax = np.maximum(parallax, sweep_parallax(hyps, camera.intrinsics, camera.intrinsics, cam_pose))
    if config.stf.mode in (StfMode.ON, StfMode.SPATIAL_ONLY):
        for neighbor in coarse_rig.neighbors(c):
            rel = spatial_relative_pose(coarse_rig, c, neighbor)
            span = sweep_parallax(hyps, camera.intrinsics, coarse_rig.camera(neighbor).intrinsics, rel)
            parallax = np.maximum(parallax, span)
    return parallax


def estimate_camera(
    config: PipelineConfig,
    frames: SurroundFrames,
    features: List[CameraFeatures],
    coarse_rig: CameraRig,
    ego_pose: RigidPose,
    c: int,
) -> CameraResult:
    """Full single-camera estimation at feature resolution followed by upsampling."""
    stf = config.stf
    prior = build_prior(config, frames, c, UPSAMPLE_FACTOR)
    hyps = build_hypotheses(prior, config.hypotheses)
    camera = coarse_rig.camera(c)
    F = features[c].current

    V_tp: Optional[FeatureVolume] = None
    V_sp: Optional[FeatureVolume] = None
    if stf.mode != StfMode.SPATIAL_ONLY:
        cam_pose = camera_pose_from_ego(ego_pose, camera.extrinsic)
        V_tp = build_temporal(F, features[c].previous, cam_pose, camera.intrinsics, hyps)
    if stf.mode in (StfMode.ON, StfMode.SPATIAL_ONLY):
        left, right = coarse_rig.neighbors(c)
        V_sp = build_spatial(F, features[left].current, features[right].current, coarse_rig, c, hyps)

    fused = stf_fuse(F, V_sp, V_tp, stf.groups, stf.mode)
    if stf.normalize_volume:
        fused = normalize_volume(fused)
    prob = matching_head(F, fused, stf.groups, stf.tau, stf.low_confidence_ratio)
    parallax = camera_parallax(config, coarse_rig, ego_pose, c, hyps)
    observable = np.all(fused.validity[..., 0] > 0, axis=0) & (parallax >= stf.min_parallax)
    prob = replace(prob, low_confidence=prob.low_confidence | ~observable)
    coarse = depth_expectation(prob, hyps)

    if stf.upsample_mask == UpsampleMaskKind.CONTEXT:
        mask = context_upsample_mask(features[c].context, stf.context_sharpness)
    else:
        mask = bilinear_upsample_mask(*coarse.shape)
    upsampled = convex_upsample(coarse, mask)

    metrics = None
    if frames.gt_depth is not None:
        metrics = evaluate(upsampled.depth, frames.gt_depth[c], config.eval.d_min, config.eval.d_max)
    flagged = int(prob.low_confidence.sum())
    if flagged:
        logger.warning(
            f"cam{c}: {flagged} low-confidence pixels of {prob.low_confidence.size} "
            f"({int((~observable).sum())} unobservable)"
        )
    logger.info(f"cam{c}: estimated {coarse.shape[1]}x{coarse.shape[0]} over {hyps.bins} bins")
    return CameraResult(c, coarse, upsampled.depth, prob, hyps, upsampled.renormalized, metrics, parallax, observable)


def run_estimate(config: PipelineConfig, frames: Optional[SurroundFrames] = None) -> EstimateResult:
    """Estimate surround depth for frame t; evaluates against GT when available."""
    frames = frames or load_frames(config)
    ego_pose, pose_source = resolve_pose(config, frames)
    if ego_pose is None:
        raise ConfigError("No ego pose available: give one in the config, provide pose.json, or run refine")
    coarse_rig = frames.rig.scaled(UPSAMPLE_FACTOR)
    features = compute_features(config, frames)
    results = map_cameras(
        lambda c: estimate_camera(config, frames, features, coarse_rig, ego_pose, c),
        list(range(len(frames.rig))),
    )

    evaluation: Optional[PerCameraReport] = None
    if all(r.metrics is not None for r in results):
        evaluation = per_camera_report([r.metrics for r in results])
    report = EstimateReport(
        config=config.model_dump(mode="json", exclude={"data_dir", "rig", "output_dir"}),
        pose_source=pose_source,
        cameras=[
            CameraEstimate(
                camera=r.camera,
                low_confidence=int(r.prob.low_confidence.sum()),
                invalid=int((~r.prob.valid).sum()),
                unobservable=int((~r.observable).sum()),
                renormalized_mask_rows=r.renormalized,
                metrics=r.metrics,
            )
            for r in results
        ],
        evaluation=evaluation,
    )
    return EstimateResult(results, report, ego_pose)


def write_estimate(result: EstimateResult, config: PipelineConfig, frames: SurroundFrames, out_dir: Path) -> None:
    """Write predicted depths, the run report and the optional debug images."""
    out_dir = Path(out_dir)
    for r in result.cameras:
        write_pfm(out_dir / "depth" / f"cam{r.camera}_t1.pfm", r.depth.depth)
        if config.dump_volumes:
            write_pgm(out_dir / "debug" / f"cam{r.camera}_argmax.pgm", np.argmax(r.prob.probs, axis=0), 0, r.hyps.bins - 1)
            write_pgm(out_dir / "debug" / f"cam{r.camera}_peak.pgm", r.prob.probs.max(axis=0), 0.0, 1.0)
            for i, plane in enumerate(r.prob.probs):
                write_pgm(out_dir / "debug" / "prob" / f"cam{r.camera}_bin{i:03d}.pgm", plane, 0.0, 1.0)
        if config.write_heatmaps:
            camera = frames.rig.camera(r.camera)
            rel = camera_pose_from_ego(result.pose, camera.extrinsic)
            recon, mask = reconstruct_view(frames.previous[r.camera], r.depth, rel, camera.intrinsics, camera.intrinsics)
            photo = photometric_loss(frames.current[r.camera], recon, mask, config.losses.photo_alpha)
            write_pgm(out_dir / "heatmaps" / f"cam{r.camera}_photo.pgm", photo.error_map, 0.0)
    write_json(out_dir / "report.json", result.report)
    logger.info(f"Wrote estimate for {len(result.cameras)} cameras to {out_dir}")


def run_eval(
    pred_dir: Path,
    gt_dir: Path,
    d_min: float = 0.0,
    d_max: float = 200.0,
    out_dir: Optional[Path] = None,
    error_maps: bool = True,
) -> PerCameraReport:
    """Pair cam{c}_t1.pfm files of a prediction and a GT directory and evaluate each camera."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if (pred_dir / "depth").is_dir():
        pred_dir = pred_dir / "depth"
    if (gt_dir / "depth").is_dir():
        gt_dir = gt_dir / "depth"
    preds = list_depth_files(pred_dir)
    gts = list_depth_files(gt_dir)
    if not gts:
        raise ConfigError(f"No ground-truth depth maps in {gt_dir}")
    missing = sorted(set(gts) ^ set(preds))
    if missing:
        raise ConfigError(f"Missing prediction/GT pairs for cameras {missing}")

    results, pairs = [], []
    for c in sorted(gts):
        pred = DepthMap.dense(read_pfm(preds[c]))
        gt = DepthMap.dense(read_pfm(gts[c]))
        results.append(evaluate(pred, gt, d_min, d_max))
        pairs.append((c, pred, gt))
    report = per_camera_report(results, sorted(gts))

    if out_dir is not None:
        out_dir = Path(out_dir)
        write_json(out_dir / "eval.json", report)
        if error_maps:
            for c, pred, gt in pairs:
                write_pgm(out_dir / "error_maps" / f"cam{c}_absrel.pgm", abs_rel_map(pred, gt, d_max), 0.0, 0.5)
    return report


def run_synth(scene_config: SceneConfig, out_dir: Path, seed: Optional[int] = None) -> DatasetPaths:
    """Render a two-frame surround dataset: PPM frames, PFM depths, rig, GT pose and scene description."""
    seed = scene_config.seed if seed is None else seed
    scene = scene_config.build(seed)
    rig = scene_config.rig.build()
    sequence = make_two_frame_sequence(scene, rig, scene_config.motion.to_pose())
    paths = DatasetPaths(out_dir)
    for frames in (sequence.previous, sequence.current):
        for frame in frames:
            write_ppm(paths.frame(frame.camera, frame.timestamp), frame.image)
            write_pfm(paths.depth(frame.camera, frame.timestamp), frame.depth_gt.depth)
    write_json(paths.rig, RigFile.from_rig(rig))
    write_json(paths.pose, PoseFile.from_pose(sequence.ego_motion))
    write_json(paths.scene, scene_config.model_copy(update={"seed": seed}))
    logger.info(f"Synthesized {len(rig)}-camera dataset in {paths.root}")
    return paths


def output_dir_for(config: PipelineConfig, override: Optional[Path] = None) -> Path:
    return Path(override or config.output_dir or settings.output_dir)
