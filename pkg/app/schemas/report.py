from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.depth import LossPhase, TaskStatus


class EvalResult(BaseModel):
    """Scale-aware depth metrics; serialized with the benchmark column names."""
    model_config = ConfigDict(populate_by_name=True)

    abs_rel: float = Field(..., ge=0.0, alias="Abs.Rel")
    sq_rel: float = Field(..., ge=0.0, alias="Sq.Rel")
    rmse: float = Field(..., ge=0.0, alias="RMSE")
    rmse_log: float = Field(..., ge=0.0, alias="RMSElog")
    delta_1: float = Field(..., ge=0.0, le=1.0, alias="d<1.25")
    delta_2: float = Field(..., ge=0.0, le=1.0, alias="d<1.25^2")
    delta_3: float = Field(..., ge=0.0, le=1.0, alias="d<1.25^3")
    n_valid: int = Field(..., ge=0)

    @model_validator(mode="after")
    def check_delta_order(self):
        if not self.delta_1 <= self.delta_2 <= self.delta_3:
            raise ValueError("delta fractions must be nondecreasing in the threshold")
        return self


class CameraEval(BaseModel):
    camera: int
    metrics: EvalResult


class PerCameraReport(BaseModel):
    """Unweighted mean over cameras plus the per-camera breakdown."""
    mean: EvalResult
    cameras: List[CameraEval]


class LossWeights(BaseModel):
    lambda_photo: float = Field(1.0, ge=0.0)
    lambda_smooth: float = Field(1.0e-3, ge=0.0)
    lambda_edge: float = Field(1.0e-2, ge=0.0)
    lambda_sfm: float = Field(1.0e-2, ge=0.0)


class LossReport(BaseModel):
    photo: float = Field(..., ge=0.0)
    smooth: float = Field(..., ge=0.0)
    edge: float = Field(..., ge=0.0)
    sfm: float = Field(..., ge=0.0)
    total: float
    phase: LossPhase
    weights: LossWeights
    valid_pixel_counts: Dict[str, int] = Field(default_factory=dict)


class CameraEstimate(BaseModel):
    camera: int
    low_confidence: int = Field(..., description="Coarse pixels flagged low-confidence")
    invalid: int = Field(..., description="Coarse pixels without any valid bin")
    unobservable: int = Field(0, description="Coarse pixels whose depth bins no view can separate")
    renormalized_mask_rows: int = 0
    metrics: Optional[EvalResult] = None


class EstimateReport(BaseModel):
    config: dict
    pose_source: str
    cameras: List[CameraEstimate]
    evaluation: Optional[PerCameraReport] = None


class RefineReport(BaseModel):
    iterations: int
    accepted: int
    loss_history: List[float]
    best_loss: float
    final: LossReport
    ego_motion: List[float] = Field(..., description="Refined ego pose t -> t-1, row-major 3x4")
    evaluation: Optional[PerCameraReport] = None


class TaskInfo(BaseModel):
    id: str
    kind: str
    status: TaskStatus
    error: Optional[str] = None
    result: Optional[dict] = None
