from typing import Any, Dict, Optional

from pydantic import BaseModel, Field

from app.models.depth import Ablation
from app.schemas.scene import SceneConfig


class SynthRequest(BaseModel):
    scene: SceneConfig = Field(default_factory=SceneConfig)
    out: Optional[str] = Field(None, description="Dataset directory, defaults to <output_dir>/dataset")
    seed: Optional[int] = Field(None, ge=0)


class RunRequest(BaseModel):
    """Estimate or refine job: a PipelineConfig document plus CLI-style overrides."""
    config: Dict[str, Any]
    ablation: Optional[Ablation] = None
    seed: Optional[int] = Field(None, ge=0)
    out: Optional[str] = None


class EvalRequest(BaseModel):
    pred_dir: str
    gt_dir: str
    d_min: float = Field(0.0, ge=0.0)
    d_max: float = Field(200.0, gt=0.0)
    out: Optional[str] = None
    error_maps: bool = True


class TaskAccepted(BaseModel):
    task_id: str
    kind: str
    status: str
