from .depth import (
    Ablation,
    FeatureSource,
    FusionMode,
    InputMode,
    LossPhase,
    PriorSource,
    SamplingMode,
    Spacing,
    StfMode,
    TaskStatus,
    UpsampleMaskKind,
    VolumeSource,
)

__all__ = [
    "Ablation",
    "FeatureSource",
    "FusionMode",
    "InputMode",
    "LossPhase",
    "PriorSource",
    "SamplingMode",
    "Spacing",
    "StfMode",
    "TaskStatus",
    "UpsampleMaskKind",
    "VolumeSource",
]
