import enum


class SamplingMode(str, enum.Enum):
    VANILLA = "vanilla"
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


class Spacing(str, enum.Enum):
    INVERSE_DEPTH = "inverse_depth"
    LINEAR = "linear"


class VolumeSource(str, enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    FUSED = "fused"


class StfMode(str, enum.Enum):
    ON = "on"
    OFF = "off"  # temporal volume only
    SPATIAL_ONLY = "spatial_only"
    TEMPORAL_ONLY = "temporal_only"


class FusionMode(str, enum.Enum):
    MFF = "mff"
    VFF = "vff"


class FeatureSource(str, enum.Enum):
    INTERNAL = "internal"
    EXTERNAL = "external"


class UpsampleMaskKind(str, enum.Enum):
    BILINEAR = "bilinear"
    CONTEXT = "context"


class PriorSource(str, enum.Enum):
    GT_NOISE = "gt_noise"
    CONSTANT = "constant"
    EXTERNAL = "external"


class InputMode(str, enum.Enum):
    SYNTHETIC = "synthetic"
    IMAGES = "images"


class LossPhase(str, enum.Enum):
    INIT = "init"
    MAIN = "main"


class Ablation(str, enum.Enum):
    STF_OFF = "stf_off"
    SPATIAL_ONLY = "spatial_only"
    TEMPORAL_ONLY = "temporal_only"
    VFF = "vff"
    VANILLA_SAMPLING = "vanilla_sampling"
    FIXED_SAMPLING = "fixed_sampling"
    BINS8 = "bins8"
    BINS16 = "bins16"
    BINS32 = "bins32"
    BINS64 = "bins64"


class TaskStatus(str, enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    TIMEOUT = "timeout"
