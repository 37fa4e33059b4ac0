"""Scale-aware depth evaluation (no median scaling)."""

import logging
from typing import Optional, Sequence

import numpy as np

from app.core.errors import ContractViolation, EmptyValidSetError
from app.schemas.report import CameraEval, EvalResult, PerCameraReport
from app.services.numerics import DepthMap

logger = logging.getLogger(__name__)

PRED_FLOOR = 1e-3
DELTA_BASE = 1.25


def evaluate(pred: DepthMap, gt: DepthMap, d_min: float = 0.0, d_max: float = 200.0) -> EvalResult:
    """
    Standard depth metrics over gt pixels in (d_min, d_max].

    Predictions are clamped to [1e-3, d_max]. RMSE terms are root-mean-square;
    the threshold accuracies use the strict inequality max(d/d*, d*/d) < 1.25^n.
    """
    if pred.shape != gt.shape:
        raise ContractViolation(f"Prediction {pred.shape} and ground truth {gt.shape} differ in size")
    if not 0.0 <= d_min < d_max:
        raise ContractViolation(f"Invalid evaluation bounds ({d_min}, {d_max}]")
    valid = gt.valid & (gt.depth > d_min) & (gt.depth <= d_max)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyValidSetError(f"No ground-truth pixel inside ({d_min}, {d_max}]")

    d_star = gt.depth[valid]
    d = np.clip(pred.depth[valid], PRED_FLOOR, d_max)
    err = d - d_star
    log_err = np.log(d) - np.log(d_star)

    deltas = []
    for n in (1, 2, 3):
        bound = DELTA_BASE ** n
        # product form keeps the strict boundary exact: d = 1.25 d* is not counted
        within = (d < bound * d_star) & (d_star < bound * d)
        deltas.append(float(within.mean()))

    return EvalResult(
        abs_rel=float(np.mean(np.abs(err) / d_star)),
        sq_rel=float(np.mean(err ** 2 / d_star)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean(log_err ** 2))),
        delta_1=deltas[0],
        delta_2=deltas[1],
        delta_3=deltas[2],
        n_valid=n_valid,
    )


def per_camera_report(results: Sequence[EvalResult], cameras: Optional[Sequence[int]] = None) -> PerCameraReport:
    """Unweighted mean over cameras of every metric, with the per-camera list kept alongside."""
    if not results:
        raise ContractViolation("per_camera_report needs at least one camera")
    fields = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta_1", "delta_2", "delta_3")
    mean = {name: float(np.mean([getattr(r, name) for r in results])) for name in fields}
    mean["n_valid"] = int(sum(r.n_valid for r in results))
    report = PerCameraReport(
        mean=EvalResult(**mean),
        cameras=[CameraEval(camera=c, metrics=r) for c, r in zip(cameras or range(len(results)), results)],
    )
    logger.info(f"Averaged over {len(results)} cameras: Abs.Rel {report.mean.abs_rel:.4f}")
    return report


def abs_rel_map(pred: DepthMap, gt: DepthMap, d_max: float = 200.0) -> np.ndarray:
    """Per-pixel |d - d*| / d* on valid gt pixels, 0 elsewhere."""
    valid = gt.valid & (gt.depth > 0) & (gt.depth <= d_max)
    d = np.clip(pred.depth, PRED_FLOOR, d_max)
    return np.where(valid, np.abs(d - gt.depth) / np.where(valid, gt.depth, 1.0), 0.0)
