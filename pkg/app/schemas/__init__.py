from .pipeline import (
    EvalConfig,
    FeatureConfig,
    HypothesisConfig,
    LossConfig,
    PipelineConfig,
    PriorConfig,
    RefineConfig,
    StfConfig,
    apply_ablation,
)
from .report import (
    CameraEstimate,
    CameraEval,
    EstimateReport,
    EvalResult,
    LossReport,
    LossWeights,
    PerCameraReport,
    RefineReport,
    TaskInfo,
)

__all__ = [
    "EvalConfig",
    "FeatureConfig",
    "HypothesisConfig",
    "LossConfig",
    "PipelineConfig",
    "PriorConfig",
    "RefineConfig",
    "StfConfig",
    "apply_ablation",
    "CameraEstimate",
    "CameraEval",
    "EstimateReport",
    "EvalResult",
    "LossReport",
    "LossWeights",
    "PerCameraReport",
    "RefineReport",
    "TaskInfo",
]
