"""Unit tests for voclip.synthetic."""

import math

import numpy as np
import pytest

from voclip.errors import InvalidArgumentError
from voclip.se3 import TransformSE3, Trajectory, absolute_to_relative
from voclip.synthetic import (
    PIXELS_PER_METER,
    SyntheticSpec,
    generate_synthetic,
    generate_synthetic_frames,
    render_frames,
    synthetic_motions,
)


class TestTrajectories:
    def test_line_moves_along_z(self):
        gt, _ = generate_synthetic(SyntheticSpec(shape="line", n_frames=5, step=0.5))
        np.testing.assert_allclose(gt.positions, [[0, 0, 0.5 * k] for k in range(5)], atol=1e-15)

    def test_circle_has_constant_motion(self):
        gt, _ = generate_synthetic(SyntheticSpec(shape="circle", n_frames=200, curvature=0.05))
        vectors = np.stack([m.as_vector() for m in absolute_to_relative(gt)])
        np.testing.assert_allclose(vectors, np.broadcast_to(vectors[0], vectors.shape), atol=1e-9)
        assert vectors[0, 1] == pytest.approx(0.05, abs=1e-12)

    def test_circle_closes_after_one_turn(self):
        spec = SyntheticSpec(shape="circle", n_frames=101, step=2.0 * math.pi / 100, curvature=1.0)
        gt, _ = generate_synthetic(spec)
        np.testing.assert_allclose(gt.positions[-1], gt.positions[0], atol=1e-9)

    def test_figure_eight_alternates_turns(self):
        spec = SyntheticSpec(shape="figure-eight", n_frames=300, curvature=0.05)
        motions = synthetic_motions(spec)
        loop = round(2.0 * math.pi / 0.05)
        assert motions[0].angles[1] == pytest.approx(0.05, abs=1e-14)
        assert motions[loop].angles[1] == pytest.approx(-0.05, abs=1e-14)
        assert motions[2 * loop].angles[1] == pytest.approx(0.05, abs=1e-14)

    def test_noise_free_copy_is_ground_truth(self):
        gt, noisy = generate_synthetic(SyntheticSpec(noise_std=0.0))
        assert noisy is gt

    def test_noise_is_seeded(self):
        _, a = generate_synthetic(SyntheticSpec(noise_std=0.01, seed=4))
        _, b = generate_synthetic(SyntheticSpec(noise_std=0.01, seed=4))
        _, c = generate_synthetic(SyntheticSpec(noise_std=0.01, seed=5))
        np.testing.assert_array_equal(a.matrices(), b.matrices())
        assert not np.array_equal(a.matrices(), c.matrices())

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"shape": "spiral"},
            {"n_frames": 1},
            {"step": 0.0},
            {"noise_std": -0.1},
            {"shape": "circle", "curvature": 0.0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            SyntheticSpec(**kwargs)


class TestFrames:
    def test_shape_and_range(self, toy_cfg):
        gt, noisy, frames = generate_synthetic_frames(SyntheticSpec(n_frames=6), toy_cfg)
        assert frames.shape == (6, 3, 32, 64)
        assert frames.min() >= 0.0
        assert frames.max() <= 1.0
        assert len(gt) == len(noisy) == 6

    def test_rendering_is_deterministic(self, toy_cfg):
        gt, _ = generate_synthetic(SyntheticSpec(n_frames=4))
        np.testing.assert_array_equal(render_frames(gt, toy_cfg, seed=2), render_frames(gt, toy_cfg, seed=2))

    def test_consecutive_frames_differ(self, toy_cfg):
        _, _, frames = generate_synthetic_frames(SyntheticSpec(n_frames=3), toy_cfg)
        assert not np.array_equal(frames[0], frames[1])

    def test_sideways_patch_shift(self, toy_cfg):
        """Moving one patch width along x shifts the image by P pixels."""
        meters = toy_cfg.patch / PIXELS_PER_METER
        traj = Trajectory((TransformSE3.identity(), TransformSE3.from_translation([meters, 0.0, 0.0])))
        frames = render_frames(traj, toy_cfg)
        p = toy_cfg.patch
        np.testing.assert_array_equal(frames[1][..., :-p], frames[0][..., p:])

    def test_rejects_bad_scale(self, toy_cfg):
        with pytest.raises(InvalidArgumentError):
            render_frames(Trajectory((TransformSE3.identity(),)), toy_cfg, pixels_per_meter=0.0)
