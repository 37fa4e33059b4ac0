import numpy as np
import pytest

from app.models.depth import LossPhase
from app.schemas.pipeline import PipelineConfig
from app.services.geometry import RigidPose
from app.services.pipeline import SurroundFrames
from app.services.refine import RefinementProblem, RefinementState, optimize, pseudo_labels, run_refine, write_refine


def refine_config(**refine):
    losses = refine.pop("losses", {})
    return PipelineConfig.model_validate({"refine": {"scale": 4, "log_every": 5, **refine}, "losses": losses})


def scaled_init(frames, factor, scale=4, pose=None):
    level = frames.downsample(scale)
    depths = [gt.with_depth(factor * gt.depth) for gt in level.gt_depth]
    return RefinementState.from_depths(depths, pose or frames.ego_motion, level.rig)


class TestState:
    def test_round_trip(self, wall_frames):
        level = wall_frames.downsample(4)
        state = RefinementState.from_depths(level.gt_depth, wall_frames.ego_motion, level.rig)
        for restored, gt in zip(state.depths(), level.gt_depth):
            np.testing.assert_allclose(restored.depth, gt.depth, rtol=1e-12)
        np.testing.assert_allclose(state.ego_pose(level.rig).matrix, wall_frames.ego_motion.matrix, atol=1e-12)

    def test_best_loss_empty(self):
        assert RefinementState([], np.zeros(6)).best_loss == float("inf")


class TestOptimizer:
    def test_zero_gradient_is_a_fixed_point(self, still_wall_frames):
        config = refine_config(
            iterations=10,
            losses={"use_spatial": False, "lambda_smooth": 0.0, "lambda_edge": 0.0, "lambda_sfm": 0.0},
        )
        level = still_wall_frames.downsample(4)
        state = RefinementState.from_depths(level.gt_depth, RigidPose.identity(), level.rig)
        before = [ld.copy() for ld in state.log_depth]
        problem = RefinementProblem(config, level, [None] * len(level.rig))
        state, final = optimize(problem, state)
        assert state.iteration == 10 and state.accepted == 0
        for a, b in zip(before, state.log_depth):
            assert np.abs(np.exp(a) - np.exp(b)).max() < 1e-6
        assert final.total == pytest.approx(0.0, abs=1e-12)

    def test_loss_never_increases(self, wall_frames):
        config = refine_config(iterations=15)
        outcome = run_refine(config, scaled_init(wall_frames, 1.2), wall_frames)
        history = outcome.report.loss_history
        assert len(history) == 16
        assert all(b <= a for a, b in zip(history, history[1:]))
        assert history[-1] < history[0]
        assert outcome.report.best_loss == min(history)

    def test_phase_switch_drops_sfm(self, wall_frames):
        config = refine_config(iterations=4, init_iterations=2)
        outcome = run_refine(config, scaled_init(wall_frames, 1.1), wall_frames)
        assert outcome.report.final.phase == LossPhase.MAIN
        assert outcome.report.final.weights.lambda_sfm == 0.0

    def test_outputs_full_resolution(self, wall_frames, tmp_path):
        config = refine_config(iterations=2)
        outcome = run_refine(config, scaled_init(wall_frames, 1.0), wall_frames)
        assert [d.shape for d in outcome.depths] == [(96, 160)] * 6
        assert outcome.report.evaluation is not None
        assert len(outcome.report.ego_motion) == 12

        write_refine(outcome, config.model_copy(update={"write_heatmaps": True}), tmp_path)
        assert len(list(tmp_path.glob("depth/*.pfm"))) == 6
        assert len(list(tmp_path.glob("heatmaps/*.pgm"))) == 6
        assert (tmp_path / "refine.json").is_file()

    def test_no_steps_when_everything_frozen(self, wall_frames):
        config = refine_config(iterations=5, refine_depth=False, refine_pose=False)
        outcome = run_refine(config, scaled_init(wall_frames, 1.0), wall_frames)
        assert outcome.report.iterations == 0
        assert len(outcome.report.loss_history) == 1


class TestPseudoLabels:
    def test_without_gt_or_matches(self, wall_frames):
        bare = SurroundFrames(wall_frames.rig, wall_frames.previous, wall_frames.current)
        assert pseudo_labels(PipelineConfig(), bare, 1) == [None] * 6

    def test_from_gt(self, wall_frames):
        level = wall_frames.downsample(4)
        labels = pseudo_labels(PipelineConfig(), level, 4)
        assert all(p is not None for p in labels)
        assert sum(int(p.depth.valid.sum()) for p in labels) > 0


@pytest.mark.slow
class TestRecovery:
    def test_scale_from_overestimate(self, wall_frames):
        config = refine_config(iterations=500)
        outcome = run_refine(config, scaled_init(wall_frames, 1.5), wall_frames)
        ratios = [np.median(d.depth / gt.depth) for d, gt in zip(outcome.depths, wall_frames.gt_depth)]
        assert abs(np.median(ratios) - 1.0) < 0.02

    def test_translation_from_perturbed_pose(self, wall_frames):
        truth = wall_frames.ego_motion
        start = RigidPose(truth.rotation, 1.05 * truth.translation)
        config = refine_config(
            scale=2,
            iterations=80,
            refine_depth=False,
            refine_pose=True,
            step_pose=2e-3,
            losses={"use_spatial": False, "lambda_sfm": 0.0},
        )
        outcome = run_refine(config, scaled_init(wall_frames, 1.0, scale=2, pose=start), wall_frames)
        refined = outcome.state.ego_pose(wall_frames.downsample(2).rig)
        np.testing.assert_allclose(refined.translation, truth.translation, atol=0.01 * np.linalg.norm(truth.translation))


def test_gt_depth_beats_scaled_depth(wall_frames):
    level = wall_frames.downsample(4)
    problem = RefinementProblem(refine_config(), level, [None] * 6)
    at_gt = scaled_init(wall_frames, 1.0)
    off = scaled_init(wall_frames, 1.5)
    loss_gt = problem.evaluate(at_gt.log_depth, at_gt.pose, LossPhase.MAIN, False).report.photo
    loss_off = problem.evaluate(off.log_depth, off.pose, LossPhase.MAIN, False).report.photo
    assert loss_gt < loss_off
