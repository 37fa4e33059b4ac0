from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, ValidationInfo, field_validator, model_validator

from app.models.depth import (
    Ablation,
    FeatureSource,
    FusionMode,
    InputMode,
    PriorSource,
    SamplingMode,
    Spacing,
    StfMode,
    UpsampleMaskKind,
)


def _resolve_existing(value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
    """Resolve a path against the config file's directory and require it to exist."""
    if value is None:
        return None
    path = Path(value)
    base_dir = (info.context or {}).get("base_dir")
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    if not path.exists():
        raise ValueError(f"Referenced path does not exist: {path}")
    return path


class HypothesisConfig(BaseModel):
    """Depth sampling around the prior."""
    bins: int = Field(16, ge=1, description="Number of depth hypotheses D")
    alpha: float = Field(0.5, ge=0.0, description="Adaptive range scale factor")
    spacing: Spacing = Field(Spacing.INVERSE_DEPTH, description="Sample spacing law")
    mode: SamplingMode = Field(SamplingMode.ADAPTIVE, description="vanilla, fixed or adaptive range")
    scene_min: float = Field(1.0, gt=0.0, description="Whole-scene minimum depth in meters")
    scene_max: float = Field(200.0, gt=0.0, description="Whole-scene maximum depth in meters")
    fixed_half_width: float = Field(5.0, gt=0.0, description="Half width of the fixed range in meters")

    @model_validator(mode="after")
    def check_scene_bounds(self):
        if not self.scene_min < self.scene_max:
            raise ValueError(f"scene_min ({self.scene_min}) must be below scene_max ({self.scene_max})")
        return self


class StfConfig(BaseModel):
    groups: int = Field(8, ge=1, description="Correlation groups G")
    tau: float = Field(0.02, gt=0.0, description="Softmax temperature of the matching head, in cosine-score units")
    mode: StfMode = Field(StfMode.ON, description="Spatial-temporal fusion mode")
    upsample_mask: UpsampleMaskKind = Field(UpsampleMaskKind.BILINEAR, description="Convex upsample mask source")
    context_sharpness: float = Field(4.0, ge=0.0, description="Affinity sharpness of context masks")
    low_confidence_ratio: float = Field(1.5, ge=1.0, description="Pixels with max probability below ratio/D are flagged")
    min_parallax: float = Field(
        2.0, ge=0.0, description="Pixels whose hypothesis sweep spans fewer feature pixels in every view are unobservable"
    )
    normalize_volume: bool = Field(True, description="Scale fused volume cells to norm sqrt(C) before scoring")


class FeatureConfig(BaseModel):
    source: FeatureSource = Field(FeatureSource.INTERNAL, description="Feature provider")
    channels: int = Field(16, ge=1, description="Feature channel count C")
    fusion: FusionMode = Field(FusionMode.MFF, description="MFF attention fusion or vanilla addition")
    feature_dir: Optional[Path] = Field(None, description="Directory of external feature files")
    kernel_file: Optional[Path] = Field(None, description="npz with k1/k2/k3 weights and biases")
    kernel_seed: int = Field(1234, description="Seed for deterministic kernel initialization")
    hidden_channels: Optional[int] = Field(None, ge=1, description="Width of the attention hidden layer (defaults to C)")
    smoothing: List[float] = Field(
        default_factory=lambda: [1.0, 2.0], min_length=1, description="Blur scales of the internal provider in feature pixels"
    )

    @field_validator("feature_dir", "kernel_file")
    @classmethod
    def check_paths(cls, v, info: ValidationInfo):
        return _resolve_existing(v, info)

    @field_validator("smoothing")
    @classmethod
    def check_smoothing(cls, v):
        if any(sigma <= 0 for sigma in v):
            raise ValueError(f"smoothing scales must be positive, got {v}")
        return v

    @model_validator(mode="after")
    def check_external(self):
        if self.source == FeatureSource.EXTERNAL and self.feature_dir is None:
            raise ValueError("External features require feature_dir")
        return self


class LossConfig(BaseModel):
    lambda_photo: float = Field(1.0, ge=0.0)
    lambda_smooth: float = Field(1.0e-3, ge=0.0)
    lambda_edge: float = Field(1.0e-2, ge=0.0)
    lambda_sfm: float = Field(1.0e-2, ge=0.0)
    photo_alpha: float = Field(0.85, ge=0.0, le=1.0, description="SSIM/L1 blend")
    focal_gamma: float = Field(2.0, ge=0.0)
    focal_alpha: float = Field(0.25, ge=0.0, le=1.0)
    edge_percentile: float = Field(90.0, gt=0.0, lt=100.0, description="Sobel percentile marking image edges")
    normalize_smoothness: bool = Field(True, description="Mean-normalize depth before the smoothness term")
    sfm_gate: float = Field(2e-3, gt=0.0, description="Triangulation residual gate relative to depth")
    use_spatial: bool = Field(True, description="Include adjacent-camera reconstructions")
    use_temporal: bool = Field(True, description="Include previous-frame reconstructions")
    matches_file: Optional[Path] = Field(
        None, description="JSON list of cross-camera matches for SfM labels when no GT depth is available"
    )

    @field_validator("matches_file")
    @classmethod
    def check_paths(cls, v, info: ValidationInfo):
        return _resolve_existing(v, info)


class PriorConfig(BaseModel):
    source: PriorSource = Field(PriorSource.GT_NOISE)
    noise_sigma: float = Field(0.1, ge=0.0, description="Multiplicative log-normal noise on the GT prior")
    constant_depth: float = Field(10.0, gt=0.0, description="Depth of the constant-plane prior")
    prior_dir: Optional[Path] = Field(None, description="Directory of external prior PFMs")

    @field_validator("prior_dir")
    @classmethod
    def check_paths(cls, v, info: ValidationInfo):
        return _resolve_existing(v, info)

    @model_validator(mode="after")
    def check_external(self):
        if self.source == PriorSource.EXTERNAL and self.prior_dir is None:
            raise ValueError("External prior requires prior_dir")
        return self


class RefineConfig(BaseModel):
    iterations: int = Field(500, ge=0)
    init_iterations: int = Field(100, ge=0, description="Leading iterations run in the init phase (sfm weight on)")
    step_depth: float = Field(1.0e-2, gt=0.0, description="Initial step on log-depth")
    step_pose: float = Field(1.0e-3, gt=0.0, description="Initial step on the pose vector")
    min_step: float = Field(1.0e-9, gt=0.0, description="Stop once both steps fall below this")
    min_decrease: float = Field(1.0e-12, ge=0.0, description="Required drop of the total loss to accept a step")
    refine_depth: bool = True
    refine_pose: bool = False
    pose_fd_eps: float = Field(1.0e-6, gt=0.0, description="Central-difference step in scaled pose units")
    pose_rotation_scale: float = Field(
        10.0, gt=0.0, description="Radius in meters at which pose rotations are measured as arc length"
    )
    scale: int = Field(4, ge=1, description="Downsampling factor of the refinement grid")
    log_every: int = Field(25, ge=1)


class EvalConfig(BaseModel):
    d_min: float = Field(0.0, ge=0.0)
    d_max: float = Field(200.0, gt=0.0)
    error_maps: bool = Field(True, description="Write abs-rel error maps as PGM")


class PipelineConfig(BaseModel):
    """Everything a run needs besides the process-level settings."""
    input_mode: InputMode = Field(InputMode.SYNTHETIC)
    data_dir: Optional[Path] = Field(None, description="Dataset directory (rig.json, frames/, depth/, pose.json)")
    rig: Optional[Path] = Field(None, description="Rig calibration file, defaults to data_dir/rig.json")
    pose: Optional[List[float]] = Field(None, description="Ego motion t->t-1 as row-major 3x4, overrides pose.json")
    hypotheses: HypothesisConfig = Field(default_factory=HypothesisConfig)
    stf: StfConfig = Field(default_factory=StfConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    losses: LossConfig = Field(default_factory=LossConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    refine: RefineConfig = Field(default_factory=RefineConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    output_dir: Optional[Path] = Field(None, description="Defaults to settings.output_dir")
    seed: int = Field(0, ge=0)
    write_heatmaps: bool = Field(False, description="Write per-pixel photometric loss heatmaps")
    dump_volumes: bool = Field(False, description="Write probability marginals and volume slices as PGM")

    @field_validator("data_dir", "rig")
    @classmethod
    def check_paths(cls, v, info: ValidationInfo):
        return _resolve_existing(v, info)

    @field_validator("pose")
    @classmethod
    def check_pose(cls, v):
        if v is not None and len(v) != 12:
            raise ValueError(f"pose must have 12 entries (row-major 3x4), got {len(v)}")
        return v

    @model_validator(mode="after")
    def check_groups(self):
        if self.features.channels % self.stf.groups:
            raise ValueError(f"groups ({self.stf.groups}) must divide channels ({self.features.channels})")
        return self


_ABLATIONS = {
    Ablation.STF_OFF: {"stf": {"mode": StfMode.OFF}},
    Ablation.SPATIAL_ONLY: {"stf": {"mode": StfMode.SPATIAL_ONLY}},
    Ablation.TEMPORAL_ONLY: {"stf": {"mode": StfMode.TEMPORAL_ONLY}},
    Ablation.VFF: {"features": {"fusion": FusionMode.VFF}},
    Ablation.VANILLA_SAMPLING: {"hypotheses": {"mode": SamplingMode.VANILLA}},
    Ablation.FIXED_SAMPLING: {"hypotheses": {"mode": SamplingMode.FIXED}},
    Ablation.BINS8: {"hypotheses": {"bins": 8}},
    Ablation.BINS16: {"hypotheses": {"bins": 16}},
    Ablation.BINS32: {"hypotheses": {"bins": 32}},
    Ablation.BINS64: {"hypotheses": {"bins": 64}},
}


def apply_ablation(config: PipelineConfig, ablation: Ablation | str) -> PipelineConfig:
    """Return a copy of ``config`` with a named ablation preset applied."""
    preset = _ABLATIONS[Ablation(ablation)]
    update = {
        section: getattr(config, section).model_copy(update=fields)
        for section, fields in preset.items()
    }
    return config.model_copy(update=update)
