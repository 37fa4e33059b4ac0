import numpy as np
import pytest

from app.core.errors import EmptyValidSetError
from app.schemas.report import EvalResult
from app.services.metrics import abs_rel_map, evaluate, per_camera_report
from app.services.numerics import DepthMap


@pytest.fixture
def gt(rng):
    return DepthMap.dense(rng.uniform(2.0, 80.0, size=(12, 16)))


class TestEvaluate:
    def test_perfect_prediction(self, gt):
        result = evaluate(gt, gt)
        assert result.abs_rel == result.sq_rel == result.rmse == result.rmse_log == 0.0
        assert result.delta_1 == result.delta_2 == result.delta_3 == 1.0
        assert result.n_valid == gt.depth.size

    def test_uniform_overestimate(self, gt):
        result = evaluate(gt.with_depth(1.2 * gt.depth), gt)
        assert result.abs_rel == pytest.approx(0.2)
        assert result.rmse_log == pytest.approx(np.log(1.2))
        assert result.delta_1 == 1.0

    def test_threshold_is_strict(self, gt):
        result = evaluate(gt.with_depth(1.25 * gt.depth), gt)
        assert result.delta_1 == 0.0
        assert result.delta_2 == 1.0

    def test_hand_computed(self):
        gt = DepthMap.dense(np.array([[2.0, 4.0]]))
        pred = DepthMap.dense(np.array([[3.0, 4.0]]))
        result = evaluate(pred, gt)
        assert result.abs_rel == pytest.approx(0.25)
        assert result.sq_rel == pytest.approx(0.25)
        assert result.rmse == pytest.approx(np.sqrt(0.5))
        assert result.delta_1 == 0.5 and result.delta_2 == 1.0

    def test_clip_bounds_select_pixels(self):
        gt = DepthMap.dense(np.array([[5.0, 50.0, 150.0]]))
        assert evaluate(gt, gt, d_min=0.0, d_max=100.0).n_valid == 2
        assert evaluate(gt, gt, d_min=10.0, d_max=200.0).n_valid == 2

    def test_prediction_is_clamped(self):
        gt = DepthMap.dense(np.array([[10.0]]))
        result = evaluate(DepthMap.dense(np.array([[500.0]])), gt, d_max=80.0)
        assert result.abs_rel == pytest.approx(7.0)

    def test_empty_valid_set(self, gt):
        with pytest.raises(EmptyValidSetError):
            evaluate(gt, gt, d_min=100.0, d_max=200.0)

    def test_serialized_names(self, gt):
        payload = evaluate(gt, gt).model_dump(by_alias=True)
        assert {"Abs.Rel", "Sq.Rel", "RMSE", "RMSElog", "d<1.25", "d<1.25^2", "d<1.25^3"} <= set(payload)


class TestPerCamera:
    def make(self, abs_rel, n=10):
        return EvalResult(
            abs_rel=abs_rel, sq_rel=0.0, rmse=1.0, rmse_log=0.1, delta_1=0.9, delta_2=1.0, delta_3=1.0, n_valid=n
        )

    def test_identical_cameras(self):
        report = per_camera_report([self.make(0.15)] * 3)
        assert report.mean.abs_rel == pytest.approx(0.15)
        assert [c.camera for c in report.cameras] == [0, 1, 2]

    def test_unweighted_mean(self):
        report = per_camera_report([self.make(0.1, n=5), self.make(0.3, n=500)], cameras=[2, 4])
        assert report.mean.abs_rel == pytest.approx(0.2)
        assert report.mean.n_valid == 505
        assert report.cameras[1].camera == 4

    def test_six_cameras_match_hand_sum(self, rng):
        values = rng.uniform(0.0, 0.5, size=6)
        report = per_camera_report([self.make(v) for v in values])
        assert report.mean.abs_rel == pytest.approx(sum(values) / 6)


class TestAbsRelMap:
    def test_zero_outside_valid(self):
        gt = DepthMap(np.array([[4.0, 8.0]]), np.array([[True, False]]))
        np.testing.assert_allclose(abs_rel_map(DepthMap.dense(np.array([[5.0, 1.0]])), gt), [[0.25, 0.0]])
