from typing import List, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.services.geometry import Camera, CameraIntrinsics, CameraRig, RigidPose
from app.services.synthetic import Correspondence


class CameraSpec(BaseModel):
    """One camera of the rig calibration file."""
    fx: float = Field(..., gt=0.0, description="Focal length x in pixels")
    fy: float = Field(..., gt=0.0, description="Focal length y in pixels")
    cx: float = Field(..., description="Principal point x in pixels (pixel-center convention)")
    cy: float = Field(..., description="Principal point y in pixels")
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    extrinsic: List[float] = Field(..., description="Camera-to-ego transform, row-major 3x4")

    @field_validator("extrinsic")
    @classmethod
    def validate_extrinsic(cls, v):
        if len(v) != 12:
            raise ValueError(f"extrinsic must have 12 entries (row-major 3x4), got {len(v)}")
        return v


class RigFile(BaseModel):
    """
    Rig calibration file.

    ``adjacency[c]`` is ``[left, right]`` for camera ``c``; camera 0 is the front camera.
    """
    cameras: List[CameraSpec] = Field(..., min_length=1)
    adjacency: List[Tuple[int, int]]

    @model_validator(mode="after")
    def check_adjacency(self):
        if len(self.adjacency) != len(self.cameras):
            raise ValueError(f"adjacency has {len(self.adjacency)} entries for {len(self.cameras)} cameras")
        return self

    def to_rig(self) -> CameraRig:
        cameras = tuple(
            Camera(
                CameraIntrinsics(spec.fx, spec.fy, spec.cx, spec.cy),
                RigidPose.from_matrix(spec.extrinsic),
                spec.width,
                spec.height,
            )
            for spec in self.cameras
        )
        return CameraRig(cameras, tuple(self.adjacency))

    @classmethod
    def from_rig(cls, rig: CameraRig) -> "RigFile":
        cameras = [
            CameraSpec(
                fx=cam.intrinsics.fx,
                fy=cam.intrinsics.fy,
                cx=cam.intrinsics.cx,
                cy=cam.intrinsics.cy,
                width=cam.width,
                height=cam.height,
                extrinsic=cam.extrinsic.matrix[:3].reshape(-1).tolist(),
            )
            for cam in rig.cameras
        ]
        return cls(cameras=cameras, adjacency=[tuple(a) for a in rig.adjacency])


class PoseFile(BaseModel):
    """Ground-truth ego motion between the two frames."""
    ego_motion: List[float] = Field(..., description="Ego pose t -> t-1, row-major 3x4")
    frames: List[int] = Field(default_factory=lambda: [0, 1], description="Frame indices (previous, current)")

    @field_validator("ego_motion")
    @classmethod
    def validate_motion(cls, v):
        if len(v) != 12:
            raise ValueError(f"ego_motion must have 12 entries, got {len(v)}")
        return v

    def to_pose(self) -> RigidPose:
        return RigidPose.from_matrix(self.ego_motion)

    @classmethod
    def from_pose(cls, pose: RigidPose) -> "PoseFile":
        return cls(ego_motion=pose.matrix[:3].reshape(-1).tolist())


class MatchSpec(BaseModel):
    camera_a: int = Field(..., ge=0)
    camera_b: int = Field(..., ge=0)
    xa: float
    ya: float
    xb: float
    yb: float


class MatchFile(BaseModel):
    """Cross-camera pixel matches at full image resolution, used for SfM pseudo labels."""
    matches: List[MatchSpec] = Field(default_factory=list)

    def to_correspondences(self, scale: int = 1) -> List[Correspondence]:
        # pixel-center convention: x' = (x + 0.5) / s - 0.5
        def rescale(v: float) -> float:
            return (v + 0.5) / scale - 0.5

        return [
            Correspondence(m.camera_a, m.camera_b, rescale(m.xa), rescale(m.ya), rescale(m.xb), rescale(m.yb))
            for m in self.matches
        ]
