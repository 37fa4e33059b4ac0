import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.config import load_model
from app.core.errors import ConfigError
from app.models.depth import Ablation, FusionMode, SamplingMode, StfMode
from app.schemas.pipeline import PipelineConfig, apply_ablation
from app.schemas.rig import MatchFile, PoseFile, RigFile
from app.schemas.scene import SceneConfig
from app.utils.io import read_feature_file, read_pfm, write_pfm
from app.utils.validators import is_valid_task_id, list_depth_files, parse_depth_name


class TestPipelineConfig:
    def test_defaults(self):
        config = PipelineConfig()
        assert config.hypotheses.bins == 16
        assert config.stf.mode == StfMode.ON
        assert config.refine.min_decrease == 1e-12

    def test_groups_must_divide_channels(self):
        with pytest.raises(ValidationError):
            PipelineConfig.model_validate({"stf": {"groups": 5}})

    def test_pose_needs_twelve_entries(self):
        with pytest.raises(ValidationError):
            PipelineConfig(pose=[1.0] * 9)

    def test_missing_data_dir(self, tmp_path):
        with pytest.raises(ValidationError):
            PipelineConfig(data_dir=tmp_path / "absent")

    def test_relative_paths_resolve_against_config_file(self, tmp_path):
        (tmp_path / "data").mkdir()
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"data_dir": "data"}))
        assert load_model(PipelineConfig, path).data_dir == tmp_path / "data"

    def test_load_model_wraps_errors(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_model(PipelineConfig, path)
        path.write_text(json.dumps({"hypotheses": {"bins": 0}}))
        with pytest.raises(ConfigError):
            load_model(PipelineConfig, path)

    @pytest.mark.parametrize(
        "ablation, check",
        [
            (Ablation.STF_OFF, lambda c: c.stf.mode == StfMode.OFF),
            (Ablation.VFF, lambda c: c.features.fusion == FusionMode.VFF),
            (Ablation.FIXED_SAMPLING, lambda c: c.hypotheses.mode == SamplingMode.FIXED),
            (Ablation.BINS64, lambda c: c.hypotheses.bins == 64),
        ],
    )
    def test_ablation(self, ablation, check):
        base = PipelineConfig(seed=4)
        config = apply_ablation(base, ablation)
        assert check(config)
        assert config.seed == 4
        assert base.hypotheses.bins == 16


class TestRigAndPoseFiles:
    def test_rig_round_trip(self, small_rig):
        restored = RigFile.model_validate_json(RigFile.from_rig(small_rig).model_dump_json()).to_rig()
        assert len(restored) == len(small_rig)
        for a, b in zip(restored.cameras, small_rig.cameras):
            assert a.intrinsics == b.intrinsics
            np.testing.assert_allclose(a.extrinsic.matrix, b.extrinsic.matrix, atol=1e-12)
        assert restored.adjacency == small_rig.adjacency

    def test_adjacency_length(self, small_rig):
        payload = RigFile.from_rig(small_rig).model_dump()
        payload["adjacency"] = payload["adjacency"][:-1]
        with pytest.raises(ValidationError):
            RigFile.model_validate(payload)

    def test_pose_length(self):
        with pytest.raises(ValidationError):
            PoseFile(ego_motion=[0.0] * 11)

    def test_matches_rescale_pixel_centers(self):
        matches = MatchFile.model_validate(
            {"matches": [{"camera_a": 0, "camera_b": 1, "xa": 3.5, "ya": 7.5, "xb": -0.5, "yb": 1.5}]}
        )
        match = matches.to_correspondences(4)[0]
        assert (match.xa, match.ya, match.xb, match.yb) == (0.5, 1.5, -0.5, 0.0)

    def test_scene_presets_and_primitives(self):
        assert SceneConfig().build().backdrop is not None
        scene = SceneConfig.model_validate(
            {"preset": None, "primitives": [{"kind": "sphere", "center": [4.0, 0.0, 1.0], "radius": 1.0}]}
        ).build()
        assert len(scene.primitives) == 1

    def test_primitives_without_preset_build_explicit_scene(self):
        sphere = {"kind": "sphere", "center": [4.0, 0.0, 1.0], "radius": 1.0}
        config = SceneConfig.model_validate({"primitives": [sphere]})
        assert config.preset is None
        assert len(config.build().primitives) == 1
        assert SceneConfig.model_validate({"band": {"azimuth_min": 0.0, "azimuth_max": 10.0}}).preset is None

    def test_preset_with_primitives_is_rejected(self):
        sphere = {"kind": "sphere", "center": [4.0, 0.0, 1.0], "radius": 1.0}
        with pytest.raises(ValidationError):
            SceneConfig.model_validate({"preset": "wall", "primitives": [sphere]})


class TestFiles:
    def test_pfm_keeps_float32_values(self, tmp_path, rng):
        depth = rng.uniform(1.0, 50.0, size=(5, 7))
        write_pfm(tmp_path / "d.pfm", depth)
        np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), depth.astype(np.float32))

    def test_pfm_bad_header(self, tmp_path):
        path = tmp_path / "broken.pfm"
        path.write_bytes(b"P6\n2 2\n-1.0\n" + bytes(16))
        with pytest.raises(ConfigError):
            read_pfm(path)

    @pytest.mark.parametrize(
        "payload",
        [
            b"Pf\n4 3\n-1.0\n" + bytes(20),
            b"Pf\nfour 3\n-1.0\n" + bytes(48),
            b"Pf\n4 3\nscale\n" + bytes(48),
            b"Pf\n4 3\n0.0\n" + bytes(48),
        ],
    )
    def test_pfm_malformed_body_or_header(self, tmp_path, payload):
        path = tmp_path / "broken.pfm"
        path.write_bytes(payload)
        with pytest.raises(ConfigError):
            read_pfm(path)

    def test_feature_bad_magic(self, tmp_path):
        path = tmp_path / "cam0_t0.feat"
        path.write_bytes(b"XXXX" + bytes(32))
        with pytest.raises(ConfigError):
            read_feature_file(path)

    def test_depth_names(self, tmp_path):
        assert parse_depth_name("cam3_t1.pfm") == (3, 1)
        assert parse_depth_name("cam2.pfm") == (2, 1)
        assert parse_depth_name("depth3.pfm") is None
        for name in ("cam0_t0.pfm", "cam0_t1.pfm", "cam1.pfm", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        assert sorted(list_depth_files(tmp_path)) == [0, 1]
        assert sorted(list_depth_files(tmp_path, frame=0)) == [0]

    def test_task_ids(self):
        assert is_valid_task_id("0f8fad5b-d9cb-469f-a165-70867728950e")
        assert not is_valid_task_id("../etc/passwd")
