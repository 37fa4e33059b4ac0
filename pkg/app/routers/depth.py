import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, Union

from fastapi import APIRouter, HTTPException, status
from pydantic import ValidationError

from app.core.config import settings
from app.schemas.jobs import EvalRequest, RunRequest, SynthRequest, TaskAccepted
from app.schemas.pipeline import PipelineConfig, apply_ablation
from app.schemas.report import TaskInfo
from app.services import pipeline
from app.services.background_tasks import task_manager
from app.services.refine import run_refine, write_refine
from app.utils.validators import is_valid_task_id

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/depth", tags=["Depth Estimation"])


def _pipeline_config(request: RunRequest) -> PipelineConfig:
    data = dict(request.config)
    if request.seed is not None:
        data["seed"] = request.seed
    try:
        config = PipelineConfig.model_validate(data, context={"base_dir": Path.cwd()})
    except ValidationError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=f"Invalid config: {e}")
    if request.ablation is not None:
        config = apply_ablation(config, request.ablation)
    return config


async def synth_job(request: SynthRequest) -> Dict[str, Any]:
    out = Path(request.out) if request.out else Path(settings.output_dir) / "dataset"
    paths = await asyncio.to_thread(pipeline.run_synth, request.scene, out, request.seed)
    return {"data_dir": str(paths.root)}


async def estimate_job(config: PipelineConfig, out: Path) -> Dict[str, Any]:
    def run():
        frames = pipeline.load_frames(config)
        result = pipeline.run_estimate(config, frames)
        pipeline.write_estimate(result, config, frames, out)
        return result.report

    report = await asyncio.to_thread(run)
    return {"out": str(out), "report": report.model_dump(mode="json", by_alias=True)}


async def refine_job(config: PipelineConfig, out: Path) -> Dict[str, Any]:
    def run():
        outcome = run_refine(config)
        write_refine(outcome, config, out)
        return outcome.report

    report = await asyncio.to_thread(run)
    return {"out": str(out), "report": report.model_dump(mode="json", by_alias=True)}


async def eval_job(request: EvalRequest) -> Dict[str, Any]:
    report = await asyncio.to_thread(
        pipeline.run_eval,
        Path(request.pred_dir),
        Path(request.gt_dir),
        request.d_min,
        request.d_max,
        Path(request.out) if request.out else None,
        request.error_maps,
    )
    return {"report": report.model_dump(mode="json", by_alias=True)}


async def _respond(task_id: str, wait: bool) -> Union[TaskAccepted, TaskInfo]:
    if wait:
        return TaskInfo(**await task_manager.wait(task_id))
    info = task_manager.get_task_status(task_id)
    return TaskAccepted(task_id=task_id, kind=info["kind"], status=info["status"].value)


@router.post("/synth", response_model=Union[TaskInfo, TaskAccepted])
async def submit_synth(request: SynthRequest, wait: bool = False):
    """Render a synthetic dataset in the background."""
    task_id = await task_manager.submit_task(synth_job, "synth", request=request)
    return await _respond(task_id, wait)


@router.post("/estimate", response_model=Union[TaskInfo, TaskAccepted])
async def submit_estimate(request: RunRequest, wait: bool = False):
    config = _pipeline_config(request)
    out = pipeline.output_dir_for(config, Path(request.out) if request.out else None)
    task_id = await task_manager.submit_task(estimate_job, "estimate", config=config, out=out)
    logger.info(f"Estimate job {task_id} writes to {out}")
    return await _respond(task_id, wait)


@router.post("/refine", response_model=Union[TaskInfo, TaskAccepted])
async def submit_refine(request: RunRequest, wait: bool = False):
    config = _pipeline_config(request)
    out = pipeline.output_dir_for(config, Path(request.out) if request.out else None)
    task_id = await task_manager.submit_task(refine_job, "refine", config=config, out=out)
    return await _respond(task_id, wait)


@router.post("/eval", response_model=Union[TaskInfo, TaskAccepted])
async def submit_eval(request: EvalRequest, wait: bool = False):
    task_id = await task_manager.submit_task(eval_job, "eval", request=request)
    return await _respond(task_id, wait)


@router.get("/task/{task_id}", response_model=TaskInfo)
async def get_task(task_id: str):
    """Poll a job."""
    if not is_valid_task_id(task_id):
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="Malformed task id")
    info = task_manager.get_task_status(task_id)
    if info is None:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Task not found")
    return TaskInfo(**info)