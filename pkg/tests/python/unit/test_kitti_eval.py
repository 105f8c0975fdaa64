"""Unit tests for voclip.kitti_eval."""

import math

import numpy as np
import pytest

from voclip.errors import DegenerateAlignmentError, InvalidArgumentError, ParseError
from voclip.kitti_eval import (
    METRICS,
    AlignmentMode,
    EvalReport,
    align_trajectory,
    ate,
    evaluate,
    evaluate_sequences,
    kitti_segment_errors,
    rpe,
    trajectory_distances,
    umeyama_align,
)
from voclip.poses import write_kitti_poses
from voclip.se3 import (
    Pose6DoF,
    TransformSE3,
    Trajectory,
    absolute_to_relative,
    compose,
    euler_to_matrix,
    pose_to_transform,
    relative_to_absolute,
)
from voclip.synthetic import SyntheticSpec, generate_synthetic

from utils import reference_kitti_eval
from utils.test_data_generator import straight_line, wobbly_trajectory


def drifted(gt: Trajectory, std: float, seed: int) -> Trajectory:
    """Re-integrate the motions of ``gt`` with Gaussian noise on every one."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    motions = absolute_to_relative(gt)
    return relative_to_absolute([Pose6DoF.from_vector(m.as_vector() + rng.normal(0.0, std, 6)) for m in motions])


def scaled(traj: Trajectory, factor: float) -> Trajectory:
    return Trajectory(tuple(TransformSE3(p.rotation, factor * p.translation) for p in traj))


def reference_cases():
    gt_circle, noisy_circle = generate_synthetic(SyntheticSpec(shape="circle", n_frames=400, curvature=0.01, noise_std=0.002, seed=1))
    gt_wobbly = wobbly_trajectory(350, seed=2)
    gt_eight, noisy_eight = generate_synthetic(SyntheticSpec(shape="figure-eight", n_frames=300, curvature=0.05, noise_std=0.001, seed=3))
    return {
        "circle": (gt_circle, noisy_circle),
        "wobbly": (gt_wobbly, drifted(gt_wobbly, 0.003, seed=4)),
        "figure_eight": (gt_eight, noisy_eight),
    }


CASES = reference_cases()


class TestAgainstReference:
    """Metrics agree with an independent port of the KITTI devkit."""

    @pytest.mark.parametrize("case", sorted(CASES))
    @pytest.mark.parametrize("mode", ["none", "6dof", "7dof"])
    def test_metrics_match(self, case, mode):
        gt, pred = CASES[case]
        report = evaluate(pred, gt, mode)
        expected = reference_kitti_eval.evaluate(gt.matrices(), pred.matrices(), mode)
        for name in METRICS:
            assert getattr(report, name) == pytest.approx(expected[name], abs=1e-6), name
        assert not report.segments_empty

    def test_distances_match(self):
        gt, _ = CASES["wobbly"]
        expected = reference_kitti_eval.trajectory_distances(reference_kitti_eval.poses_from_matrices(gt.matrices()))
        np.testing.assert_allclose(trajectory_distances(gt), expected, rtol=1e-12)


class TestExactCases:
    @pytest.mark.parametrize("mode", ["none", "6dof", "7dof"])
    def test_identical_trajectories_give_zero(self, mode):
        gt, _ = CASES["circle"]
        report = evaluate(gt, gt, mode)
        assert report.metrics() == {name: 0.0 for name in METRICS}

    def test_uniform_scale_error(self):
        """A 1 % longer trajectory gives t_err of about 1 %."""
        gt = straight_line(900)
        report = evaluate(scaled(gt, 1.01), gt, "none")
        assert report.t_err == pytest.approx(1.0, abs=0.05)
        assert report.r_err == 0.0

    def test_segment_end_is_strictly_beyond_length(self):
        assert kitti_segment_errors(straight_line(101), straight_line(101), lengths=(100,)).n_segments_per_length == {100: 0}
        assert kitti_segment_errors(straight_line(102), straight_line(102), lengths=(100,)).n_segments_per_length == {100: 1}

    def test_segment_starts_use_stride(self):
        gt = straight_line(130)
        counts = kitti_segment_errors(gt, gt, lengths=(100,), stride=10).n_segments_per_length
        # starts 0, 10 and 20 reach beyond 100 m
        assert counts == {100: 3}

    def test_short_trajectory_has_no_segments(self, caplog):
        gt = straight_line(20)
        with caplog.at_level("WARNING", logger="voclip"):
            report = evaluate(drifted(gt, 0.01, seed=0), gt, "none")
        assert report.segments_empty
        assert report.t_err == 0.0
        assert report.r_err == 0.0
        assert "no segment fits" in caplog.text

    def test_rpe_of_constant_offset(self):
        """Frame-to-frame errors ignore a fixed world offset."""
        gt = wobbly_trajectory(30, seed=8)
        shifted = Trajectory(tuple(TransformSE3(p.rotation, p.translation + [5.0, 0.0, 0.0]) for p in gt))
        rpe_t, rpe_r = rpe(shifted, gt)
        assert rpe_t == pytest.approx(0.0, abs=1e-9)
        assert rpe_r == pytest.approx(0.0, abs=1e-5)

    @pytest.mark.parametrize(
        "pred_motion, expected",
        [
            ([0.0, 0.0, 0.0, 0.1, 0.0, 1.0], (0.1, 0.0)),
            ([0.0, 0.0, math.radians(1.0), 0.0, 0.0, 1.0], (0.0, 1.0)),
            ([0.0, 0.0, 0.0, 0.0, 0.0, 1.0], (0.0, 0.0)),
        ],
        ids=["body_offset", "yaw_step", "exact"],
    )
    def test_rpe_of_per_step_error(self, pred_motion, expected):
        """A fixed error in every motion shows up once per step."""
        gt = straight_line(25)
        pred = relative_to_absolute([Pose6DoF.from_vector(pred_motion)] * 24)
        rpe_t, rpe_r = rpe(pred, gt)
        assert rpe_t == pytest.approx(expected[0], abs=1e-9)
        assert rpe_r == pytest.approx(expected[1], abs=1e-9)

    @pytest.mark.parametrize(
        "transform",
        [[0.0, 0.0, 0.0, 3.0, -4.0, 10.0], [0.4, -0.2, 1.3, 0.0, 0.0, 0.0], [-1.0, 0.5, 2.0, 7.0, 1.0, -2.0]],
    )
    def test_rpe_ignores_common_rigid_transform(self, transform):
        gt = wobbly_trajectory(40, seed=9)
        pred = drifted(gt, 0.01, seed=10)
        t = pose_to_transform(Pose6DoF.from_vector(transform))
        moved_gt = Trajectory(tuple(compose(t, p) for p in gt))
        moved_pred = Trajectory(tuple(compose(t, p) for p in pred))
        expected_t, expected_r = rpe(pred, gt)
        rpe_t, rpe_r = rpe(moved_pred, moved_gt)
        assert expected_t > 0.0
        assert rpe_t == pytest.approx(expected_t, rel=1e-9)
        assert rpe_r == pytest.approx(expected_r, rel=1e-6)

    @pytest.mark.parametrize("mode, expected", [("none", 5.0)])
    def test_ate_of_constant_offset(self, mode, expected):
        gt = straight_line(10)
        shifted = Trajectory(tuple(TransformSE3(p.rotation, p.translation + [3.0, 4.0, 0.0]) for p in gt))
        assert ate(shifted, gt, mode) == pytest.approx(expected, abs=1e-12)


class TestAlignment:
    @pytest.fixture
    def similar_pair(self, rng):
        pred = Trajectory(tuple(TransformSE3.from_translation(p) for p in rng.uniform(-10.0, 10.0, size=(40, 3))))
        rot = euler_to_matrix([0.0, 0.0, math.pi / 2])
        gt = Trajectory(tuple(TransformSE3(rot, 2.0 * rot @ p.translation + [1.0, 0.0, 0.0]) for p in pred))
        return pred, gt, rot

    def test_recovers_similarity(self, similar_pair):
        pred, gt, rot = similar_pair
        alignment = umeyama_align(pred, gt, with_scale=True)
        assert alignment.scale == pytest.approx(2.0, abs=1e-9)
        np.testing.assert_allclose(alignment.rotation, rot, atol=1e-9)
        np.testing.assert_allclose(alignment.translation, [1.0, 0.0, 0.0], atol=1e-9)
        assert ate(pred, gt, "7dof") <= 1e-9

    def test_rigid_alignment_keeps_scale(self, similar_pair):
        pred, gt, _ = similar_pair
        alignment = umeyama_align(pred, gt, with_scale=False)
        assert alignment.scale == 1.0
        assert ate(pred, gt, "6dof") > ate(pred, gt, "7dof")

    def test_aligned_rotations_are_composed(self, similar_pair):
        pred, gt, rot = similar_pair
        aligned, _ = align_trajectory(pred, gt, AlignmentMode.SIMILARITY_7DOF)
        np.testing.assert_allclose(aligned[0].rotation, rot, atol=1e-9)

    def test_collinear_points_are_degenerate(self):
        with pytest.raises(DegenerateAlignmentError):
            umeyama_align(straight_line(50, step=1.1), straight_line(50))

    def test_alignment_needs_three_poses(self):
        with pytest.raises(InvalidArgumentError):
            align_trajectory(straight_line(2), straight_line(2, step=2.0), "6dof")

    def test_lengths_must_match(self):
        with pytest.raises(InvalidArgumentError):
            evaluate(straight_line(10), straight_line(11), "none")

    @pytest.mark.parametrize(
        "value, expected",
        [("none", AlignmentMode.NONE), ("6DOF", AlignmentMode.RIGID_6DOF), ("similarity_7dof", AlignmentMode.SIMILARITY_7DOF)],
    )
    def test_parse_mode(self, value, expected):
        assert AlignmentMode.parse(value) is expected

    def test_parse_unknown_mode(self):
        with pytest.raises(InvalidArgumentError):
            AlignmentMode.parse("affine")


class TestThreads:
    def test_threads_do_not_change_results(self):
        gt, pred = CASES["wobbly"]
        single = evaluate(pred, gt, "7dof", threads=1)
        pooled = evaluate(pred, gt, "7dof", threads=4)
        assert single.to_dict() == pooled.to_dict()


class TestReport:
    def test_text_round_trip(self):
        gt, pred = CASES["circle"]
        report = evaluate(pred, gt, "7dof")
        back = EvalReport.from_text(report.to_text())
        assert back.alignment is AlignmentMode.SIMILARITY_7DOF
        assert back.n_segments_per_length == report.n_segments_per_length
        for name in METRICS:
            assert getattr(back, name) == pytest.approx(getattr(report, name), abs=5e-7)

    def test_text_uses_six_decimals(self):
        report = EvalReport(t_err=1.0, r_err=0.5, ate=0.25, rpe_t=0.0, rpe_r=1.0 / 3.0)
        assert "rpe_r=0.333333\n" in report.to_text()

    @pytest.mark.parametrize(
        "text",
        ["t_err 1.0\n", "t_err=abc\n", "colour=red\n", "t_err=1.0\n"],
    )
    def test_from_text_errors(self, text):
        with pytest.raises(ParseError):
            EvalReport.from_text(text)

    def test_mean(self):
        a = EvalReport(t_err=1.0, r_err=2.0, ate=3.0, rpe_t=4.0, rpe_r=5.0, n_segments_per_length={100: 2})
        b = EvalReport(t_err=3.0, r_err=4.0, ate=5.0, rpe_t=6.0, rpe_r=7.0, n_segments_per_length={100: 1})
        mean = EvalReport.mean([a, b])
        assert mean.metrics() == {"t_err": 2.0, "r_err": 3.0, "ate": 4.0, "rpe_t": 5.0, "rpe_r": 6.0}
        assert mean.n_segments_per_length == {100: 3}

    def test_mean_of_nothing(self):
        with pytest.raises(InvalidArgumentError):
            EvalReport.mean([])

    def test_dict_round_trip(self):
        report = EvalReport(t_err=1.5, r_err=0.5, ate=0.1, rpe_t=0.2, rpe_r=0.3, alignment=AlignmentMode.RIGID_6DOF)
        assert EvalReport.from_dict(report.to_dict()) == report


class TestSequences:
    def test_evaluates_every_sequence(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        for seq, seed in (("00", 10), ("01", 11)):
            gt = wobbly_trajectory(150, seed=seed)
            write_kitti_poses(gt, tmp_path / "gt" / f"{seq}.txt")
            write_kitti_poses(drifted(gt, 0.002, seed), tmp_path / "pred" / f"{seq}.txt")
        reports, mean = evaluate_sequences(tmp_path / "pred", tmp_path / "gt", ["00", "01"], "7dof")
        assert sorted(reports) == ["00", "01"]
        assert mean.ate == pytest.approx((reports["00"].ate + reports["01"].ate) / 2.0, rel=1e-12)

    def test_missing_sequence_file(self, tmp_path):
        with pytest.raises(ParseError, match="not found"):
            evaluate_sequences(tmp_path, tmp_path, ["05"])

    def test_needs_sequences(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            evaluate_sequences(tmp_path, tmp_path, [])
