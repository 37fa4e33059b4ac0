from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, model_validator

from app.services.geometry import RigidPose
from app.services.synthetic import SCENE_PRESETS, LowTextureBand, Plane, Scene, Sphere, ego_motion_from, make_surround_rig


class RigSpec(BaseModel):
    """Surround rig generated for synthetic datasets."""
    num_cameras: int = Field(6, ge=2)
    width: int = Field(160, ge=4)
    height: int = Field(96, ge=4)
    hfov_deg: float = Field(90.0, gt=0.0, lt=180.0)
    radius: float = Field(1.5, gt=0.0, description="Distance of camera centers from the ego origin")
    mount_height: float = Field(1.5)

    def build(self):
        return make_surround_rig(self.num_cameras, self.width, self.height, self.hfov_deg, self.radius, self.mount_height)


class PlaneSpec(BaseModel):
    kind: Literal["plane"] = "plane"
    center: Tuple[float, float, float]
    normal: Tuple[float, float, float]
    up: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    half_width: float = Field(1.0, gt=0.0)
    half_height: float = Field(1.0, gt=0.0)
    texture_id: int = Field(1, ge=0)
    frequency: float = Field(0.5, gt=0.0, description="Base texture frequency in cycles per meter")


class SphereSpec(BaseModel):
    kind: Literal["sphere"] = "sphere"
    center: Tuple[float, float, float]
    radius: float = Field(..., gt=0.0)
    texture_id: int = Field(1, ge=0)
    frequency: float = Field(0.5, gt=0.0)


class BandSpec(BaseModel):
    azimuth_min: float
    azimuth_max: float
    amplitude: float = Field(0.3, ge=0.0, le=1.0)


class MotionSpec(BaseModel):
    """Ego motion P_{t->t-1}: where the ego sits at frame t, in the previous ego frame."""
    yaw_deg: float = 0.0
    translation: Tuple[float, float, float] = (0.5, 0.0, 0.0)

    def to_pose(self) -> RigidPose:
        return ego_motion_from(self.yaw_deg, self.translation)


class SceneConfig(BaseModel):
    """
    Scene description file.

    Either ``preset`` names a built-in scene, or ``primitives`` plus
    ``backdrop_radius`` describe one explicitly. Giving primitives or a band
    without a preset selects the explicit description; a preset together with
    either is rejected.
    """
    preset: Optional[Literal["default", "wall", "plane", "strip"]] = "default"
    primitives: List[Union[PlaneSpec, SphereSpec]] = Field(default_factory=list)
    backdrop_radius: float = Field(9.0, gt=0.0)
    backdrop_frequency: float = Field(0.4, gt=0.0)
    band: Optional[BandSpec] = None
    rig: RigSpec = Field(default_factory=RigSpec)
    motion: MotionSpec = Field(default_factory=MotionSpec)
    seed: int = Field(0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def explicit_scene_without_preset(cls, data):
        if isinstance(data, dict) and "preset" not in data and (data.get("primitives") or data.get("band")):
            data = {**data, "preset": None}
        return data

    @model_validator(mode="after")
    def check_preset_or_explicit(self):
        if self.preset is not None and (self.primitives or self.band is not None):
            raise ValueError(f"preset '{self.preset}' cannot be combined with explicit primitives or band")
        return self

    def build(self, seed: Optional[int] = None) -> Scene:
        seed = self.seed if seed is None else seed
        if self.preset is not None:
            return SCENE_PRESETS[self.preset](seed=seed)
        primitives = []
        for spec in self.primitives:
            if isinstance(spec, PlaneSpec):
                primitives.append(
                    Plane(spec.center, spec.normal, spec.up, spec.half_width, spec.half_height, spec.texture_id, spec.frequency)
                )
            else:
                primitives.append(Sphere(spec.center, spec.radius, spec.texture_id, spec.frequency))
        band = LowTextureBand(self.band.azimuth_min, self.band.azimuth_max, self.band.amplitude) if self.band else None
        backdrop = Sphere([0.0, 0.0, 0.0], self.backdrop_radius, texture_id=0, frequency=self.backdrop_frequency)
        return Scene(tuple(primitives), backdrop, band=band, seed=seed)
