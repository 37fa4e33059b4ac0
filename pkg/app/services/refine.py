"""
Gradient-based refinement of surround depth and ego pose against the self-supervised losses.

Depth is optimized as log-depth so it stays positive. The photometric,
smoothness and SfM terms are differentiated analytically; the edge term only
takes part in the accept/reject decision. The pose is the front camera's
(rx, ry, rz, tx, ty, tz) vector, differentiated with central differences in
units where rotations count as arc length at ``pose_rotation_scale``.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.core.config import load_model
from app.core.errors import NumericDivergence
from app.models.depth import LossPhase
from app.schemas.pipeline import PipelineConfig
from app.schemas.report import LossReport, LossWeights, RefineReport
from app.schemas.rig import MatchFile
from app.services.background_tasks import map_cameras
from app.services.geometry import (
    CameraRig,
    RigidPose,
    camera_pose_from_ego,
    ego_pose_from_front,
    pixel_grid,
    spatial_relative_pose,
    warp_depth_derivative,
)
from app.services.losses import (
    LossTerms,
    edge_loss,
    image_edges,
    phase_weights,
    photometric_gradient,
    photometric_loss,
    sfm_gradient,
    sfm_loss,
    smoothness_gradient,
    smoothness_loss,
    total_loss,
    warp_view,
)
from app.services.metrics import evaluate, per_camera_report
from app.services.numerics import DepthMap, bilinear_gradient
from app.services.pipeline import SurroundFrames, build_prior, load_frames, resolve_pose
from app.services.stf_head import bilinear_upsample_mask, convex_upsample
from app.services.synthetic import PseudoDepth, RenderedFrame, sparse_pseudo_depth
from app.utils.io import write_json, write_pfm, write_pgm

logger = logging.getLogger(__name__)


@dataclass
class RefinementState:
    """Mutable optimizer state: log-depth per camera at refinement resolution plus the front-camera pose vector."""

    log_depth: List[np.ndarray]
    pose: np.ndarray  # (rx, ry, rz, tx, ty, tz) of the front camera motion
    step_depth: float = 1e-2
    step_pose: float = 1e-3
    iteration: int = 0
    accepted: int = 0
    loss_history: List[float] = field(default_factory=list)

    @classmethod
    def from_depths(
        cls, depths: Sequence[DepthMap], ego_pose: RigidPose, rig: CameraRig, step_depth: float = 1e-2, step_pose: float = 1e-3
    ) -> "RefinementState":
        front = camera_pose_from_ego(ego_pose, rig.camera(0).extrinsic)
        return cls(
            log_depth=[np.log(np.maximum(d.depth, 1e-6)) for d in depths],
            pose=front.as_vector(),
            step_depth=step_depth,
            step_pose=step_pose,
        )

    def depths(self) -> List[DepthMap]:
        return [DepthMap.dense(np.exp(ld)) for ld in self.log_depth]

    def ego_pose(self, rig: CameraRig) -> RigidPose:
        return ego_pose_from_front(RigidPose.from_vector(self.pose), rig.camera(0).extrinsic)

    @property
    def best_loss(self) -> float:
        return min(self.loss_history) if self.loss_history else float("inf")


class Source(NamedTuple):
    image: np.ndarray
    rel: RigidPose
    camera: int  # camera whose image is sampled


class CameraTerms(NamedTuple):
    photo: List[float]  # one masked mean per source
    photo_count: int
    smooth: float
    edge: float
    sfm: Optional[float]
    grad: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]  # d(photo sum), d(smooth), d(sfm) w.r.t. depth


class Evaluation(NamedTuple):
    report: LossReport
    grads: Optional[List[np.ndarray]]  # d(total)/d(log depth) per camera


class RefinementProblem:
    """Loss and gradients over every camera of a refinement-resolution rig."""

    def __init__(self, config: PipelineConfig, frames: SurroundFrames, pseudo: Sequence[Optional[PseudoDepth]]):
        self.config = config
        self.frames = frames
        self.rig = frames.rig
        self.pseudo = list(pseudo)
        losses = config.losses
        self.weights = LossWeights(
            lambda_photo=losses.lambda_photo,
            lambda_smooth=losses.lambda_smooth,
            lambda_edge=losses.lambda_edge,
            lambda_sfm=losses.lambda_sfm,
        )
        self.edges = [image_edges(img, losses.edge_percentile) for img in frames.current]

    def sources(self, c: int, ego_pose: RigidPose) -> List[Source]:
        out = []
        if self.config.losses.use_spatial:
            for nb in dict.fromkeys(self.rig.neighbors(c)):
                if nb != c:
                    out.append(Source(self.frames.current[nb], spatial_relative_pose(self.rig, c, nb), nb))
        if self.config.losses.use_temporal:
            out.append(Source(self.frames.previous[c], camera_pose_from_ego(ego_pose, self.rig.camera(c).extrinsic), c))
        return out

    def camera_terms(self, c: int, depth: DepthMap, ego_pose: RigidPose, with_grad: bool) -> CameraTerms:
        losses = self.config.losses
        camera = self.rig.camera(c)
        target = self.frames.current[c]
        photo, count = [], 0
        g_photo = np.zeros(depth.shape)
        for source in self.sources(c, ego_pose):
            other = self.rig.camera(source.camera)
            view = warp_view(source.image, depth, source.rel, other.intrinsics, camera.intrinsics)
            result = photometric_loss(target, view.recon, view.mask, losses.photo_alpha)
            photo.append(result.value)
            count += result.count
            if with_grad and result.count:
                g_recon = photometric_gradient(target, view.recon, view.mask, losses.photo_alpha)
                d_dx, d_dy = bilinear_gradient(source.image, view.coords)
                dcoords = warp_depth_derivative(
                    pixel_grid(*depth.shape), depth.depth, camera.intrinsics, other.intrinsics, source.rel
                )
                chain = (g_recon * (d_dx * dcoords[..., :1] + d_dy * dcoords[..., 1:])).sum(axis=-1)
                g_photo += np.where(view.mask > 0, chain, 0.0)

        smooth = smoothness_loss(depth, target, losses.normalize_smoothness)
        edge = edge_loss(self.edges[c], depth, losses.focal_gamma, losses.focal_alpha)
        pseudo = self.pseudo[c]
        has_labels = pseudo is not None and bool(pseudo.depth.valid.any())
        sfm = sfm_loss(depth, pseudo.depth) if has_labels else None

        grad = None
        if with_grad:
            g_smooth = smoothness_gradient(depth, target, losses.normalize_smoothness)
            g_sfm = sfm_gradient(depth, pseudo.depth) if has_labels else np.zeros(depth.shape)
            grad = (g_photo, g_smooth, g_sfm)
        return CameraTerms(photo, count, smooth, edge, sfm, grad)

    def evaluate(self, log_depth: Sequence[np.ndarray], pose: np.ndarray, phase: LossPhase, with_grad: bool) -> Evaluation:
        ego_pose = ego_pose_from_front(RigidPose.from_vector(pose), self.rig.camera(0).extrinsic)
        depths = [DepthMap.dense(np.exp(ld)) for ld in log_depth]
        per_camera: List[CameraTerms] = map_cameras(
            lambda c: self.camera_terms(c, depths[c], ego_pose, with_grad), list(range(len(self.rig)))
        )

        photo_means = [v for t in per_camera for v in t.photo]
        sfm_values = [t.sfm for t in per_camera if t.sfm is not None]
        terms = LossTerms(
            photo=float(np.mean(photo_means)) if photo_means else 0.0,
            smooth=float(np.mean([t.smooth for t in per_camera])),
            edge=float(np.mean([t.edge for t in per_camera])),
            sfm=float(np.mean(sfm_values)) if sfm_values else 0.0,
            counts={
                "photo": int(sum(t.photo_count for t in per_camera)),
                "sfm": int(sum(int(p.depth.valid.sum()) for p in self.pseudo if p is not None)),
            },
        )
        report = total_loss(terms, self.weights, phase)
        if not np.isfinite(report.total):
            raise NumericDivergence(f"Total loss became {report.total} (photo {terms.photo}, sfm {terms.sfm})")
        if not with_grad:
            return Evaluation(report, None)

        weights = phase_weights(self.weights, phase)
        n_sources = max(len(photo_means), 1)
        n_cameras = len(per_camera)
        n_sfm = max(len(sfm_values), 1)
        grads = []
        for depth, t in zip(depths, per_camera):
            g_photo, g_smooth, g_sfm = t.grad
            g = (
                weights.lambda_photo * g_photo / n_sources
                + weights.lambda_smooth * g_smooth / n_cameras
                + weights.lambda_sfm * g_sfm / n_sfm
            )
            grads.append(g * depth.depth)
        return Evaluation(report, grads)

    def pose_units(self) -> np.ndarray:
        """Per-component size of one optimizer unit: rotations as arc length at ``pose_rotation_scale``."""
        radius = self.config.refine.pose_rotation_scale
        return np.array([1.0 / radius] * 3 + [1.0] * 3)

    def pose_gradient(self, log_depth: Sequence[np.ndarray], pose: np.ndarray, phase: LossPhase) -> np.ndarray:
        """Central-difference gradient of the total loss in scaled pose units."""
        eps = self.config.refine.pose_fd_eps
        units = self.pose_units()
        grad = np.zeros(6)
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = eps * units[k]
            plus = self.evaluate(log_depth, pose + delta, phase, False).report.total
            minus = self.evaluate(log_depth, pose - delta, phase, False).report.total
            grad[k] = (plus - minus) / (2 * eps)
        return grad


def _depth_candidate(state: RefinementState, grads: Sequence[np.ndarray]) -> Optional[List[np.ndarray]]:
    g_max = max(float(np.abs(g).max()) for g in grads)
    if g_max == 0.0:
        return None
    eps = 1e-3 * g_max
    return [ld - state.step_depth * g / (np.abs(g) + eps) for ld, g in zip(state.log_depth, grads)]


def optimize(problem: RefinementProblem, state: RefinementState) -> Tuple[RefinementState, LossReport]:
    """
    Backtracking descent: a candidate step is kept only if the total loss drops
    by more than ``min_decrease``, otherwise that step size is halved. An
    accepted pose step regrows up to the configured ``step_pose``.
    """
    cfg = problem.config.refine
    current: Optional[LossReport] = None
    phase = None
    while state.iteration < cfg.iterations:
        new_phase = LossPhase.INIT if state.iteration < cfg.init_iterations else LossPhase.MAIN
        if new_phase != phase:
            if phase is not None:
                logger.info(f"Switching to {new_phase.value} phase at iteration {state.iteration}")
            phase = new_phase
            current = None

        depth_active = cfg.refine_depth and state.step_depth >= cfg.min_step
        pose_active = cfg.refine_pose and state.step_pose >= cfg.min_step
        if not (depth_active or pose_active):
            logger.info(f"Steps fell below {cfg.min_step} at iteration {state.iteration}")
            break

        evaluation = problem.evaluate(state.log_depth, state.pose, phase, depth_active)
        current = evaluation.report
        if not state.loss_history:
            state.loss_history.append(current.total)

        if depth_active:
            candidate = _depth_candidate(state, evaluation.grads)
            if candidate is not None:
                trial = problem.evaluate(candidate, state.pose, phase, False).report
                if current.total - trial.total > cfg.min_decrease:
                    state.log_depth, current = candidate, trial
                    state.accepted += 1
                else:
                    state.step_depth *= 0.5

        if pose_active:
            g = problem.pose_gradient(state.log_depth, state.pose, phase)
            g_inf = float(np.abs(g).max())
            if g_inf > 0.0:
                candidate_pose = state.pose - state.step_pose * problem.pose_units() * g / g_inf
                trial = problem.evaluate(state.log_depth, candidate_pose, phase, False).report
                if current.total - trial.total > cfg.min_decrease:
                    state.pose, current = candidate_pose, trial
                    state.accepted += 1
                    state.step_pose = min(2.0 * state.step_pose, cfg.step_pose)
                else:
                    state.step_pose *= 0.5

        state.iteration += 1
        state.loss_history.append(current.total)
        if state.iteration % cfg.log_every == 0:
            logger.info(
                f"iter {state.iteration}: total {current.total:.6g} photo {current.photo:.4g} "
                f"sfm {current.sfm:.4g} steps ({state.step_depth:.2e}, {state.step_pose:.2e})"
            )

    if current is None:
        phase = LossPhase.INIT if state.iteration < cfg.init_iterations else LossPhase.MAIN
        current = problem.evaluate(state.log_depth, state.pose, phase, False).report
        state.loss_history.append(current.total)
    return state, current


def pseudo_labels(config: PipelineConfig, frames: SurroundFrames, scale: int) -> List[Optional[PseudoDepth]]:
    """SfM labels per camera from GT reprojection, or from the external match file."""
    rig = frames.rig
    correspondences = None
    if config.losses.matches_file is not None:
        correspondences = load_model(MatchFile, config.losses.matches_file).to_correspondences(scale)
    elif frames.gt_depth is None:
        logger.warning("No ground truth and no match file: the SfM term is disabled")
        return [None] * len(rig)
    rendered = None
    if frames.gt_depth is not None:
        rendered = [RenderedFrame(img, gt, c, 1) for c, (img, gt) in enumerate(zip(frames.current, frames.gt_depth))]

    def label(c: int) -> PseudoDepth:
        return sparse_pseudo_depth(rendered, rig, c, correspondences, config.losses.sfm_gate)

    labels = map_cameras(label, list(range(len(rig))))
    for c, p in enumerate(labels):
        logger.info(f"cam{c}: {int(p.depth.valid.sum())} SfM labels, {p.rejected} rejected by the gate")
    return labels


class RefineOutcome(NamedTuple):
    state: RefinementState
    depths: List[DepthMap]  # full resolution
    report: RefineReport
    problem: RefinementProblem


def run_refine(
    config: PipelineConfig, init: Optional[RefinementState] = None, frames: Optional[SurroundFrames] = None
) -> RefineOutcome:
    """
    Refine depth and/or ego pose starting from ``init`` (or the configured prior and pose).

    Raises:
        NumericDivergence: when the loss stops being finite.
    """
    frames = frames or load_frames(config)
    cfg = config.refine
    level = frames.downsample(cfg.scale)

    if init is None:
        pose, pose_source = resolve_pose(config, frames)
        if pose is None:
            pose = RigidPose.identity()
            if not cfg.refine_pose:
                logger.warning("No ego pose given and pose refinement is off: using identity motion")
        logger.info(f"Initial pose from {pose_source}, prior from {config.prior.source.value}")
        priors = [build_prior(config, frames, c, cfg.scale) for c in range(len(frames.rig))]
        init = RefinementState.from_depths(priors, pose, level.rig, cfg.step_depth, cfg.step_pose)

    problem = RefinementProblem(config, level, pseudo_labels(config, level, cfg.scale))
    state, final = optimize(problem, init)

    coarse = state.depths()
    if cfg.scale > 1:
        mask = bilinear_upsample_mask(*coarse[0].shape, factor=cfg.scale)
        depths = [convex_upsample(d, mask, factor=cfg.scale).depth for d in coarse]
    else:
        depths = coarse

    evaluation = None
    if frames.gt_depth is not None:
        results = [evaluate(d, gt, config.eval.d_min, config.eval.d_max) for d, gt in zip(depths, frames.gt_depth)]
        evaluation = per_camera_report(results)
    report = RefineReport(
        iterations=state.iteration,
        accepted=state.accepted,
        loss_history=state.loss_history,
        best_loss=state.best_loss,
        final=final,
        ego_motion=state.ego_pose(level.rig).matrix[:3].reshape(-1).tolist(),
        evaluation=evaluation,
    )
    logger.info(f"Refinement finished after {state.iteration} iterations, best loss {state.best_loss:.6g}")
    return RefineOutcome(state, depths, report, problem)


def write_refine(outcome: RefineOutcome, config: PipelineConfig, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    for c, depth in enumerate(outcome.depths):
        write_pfm(out_dir / "depth" / f"cam{c}_t1.pfm", depth.depth)
    if config.write_heatmaps:
        problem = outcome.problem
        ego_pose = outcome.state.ego_pose(problem.rig)
        for c, depth in enumerate(outcome.state.depths()):
            camera = problem.rig.camera(c)
            rel = camera_pose_from_ego(ego_pose, camera.extrinsic)
            view = warp_view(problem.frames.previous[c], depth, rel, camera.intrinsics, camera.intrinsics)
            photo = photometric_loss(problem.frames.current[c], view.recon, view.mask, config.losses.photo_alpha)
            write_pgm(out_dir / "heatmaps" / f"cam{c}_photo.pgm", photo.error_map, 0.0)
    write_json(out_dir / "refine.json", outcome.report)
    logger.info(f"Wrote refinement results to {out_dir}")
