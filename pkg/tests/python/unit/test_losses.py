"""Unit tests for voclip.losses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from voclip.clips import Clip, OverlapMap, overlap_map
from voclip.errors import InvalidArgumentError, ShapeError
from voclip.gradcheck import numeric_gradient, relative_error
from voclip.losses import (
    LossConfig,
    closed_form_terms,
    loss_gradient,
    mc_loss_batch,
    mc_loss_closed,
    mc_loss_oracle,
    mse_loss,
    total_loss,
)

from utils.test_data_generator import consistent_pair_batch, predictions_from_motions


class TestLossConfig:
    @pytest.mark.parametrize("name, alpha", [("A", 0.0), ("B", 1.0), ("c", 10.0)])
    def test_model_presets(self, name, alpha):
        assert LossConfig.for_model(name).alpha == alpha

    def test_unknown_preset(self):
        with pytest.raises(InvalidArgumentError):
            LossConfig.for_model("D")

    @pytest.mark.parametrize("kwargs", [{"alpha": -1.0}, {"alpha": float("inf")}, {"mc_reduction": "max"}])
    def test_validation(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            LossConfig(**kwargs)


class TestMse:
    def test_known_value(self):
        pred = np.zeros((1, 2, 6))
        target = np.zeros((1, 2, 6))
        target[0, 0, 3] = 2.0
        # (4 + 0) / 2 motions
        assert mse_loss(pred, target) == 2.0

    def test_single_clip_shape(self):
        assert mse_loss(np.ones((2, 6)), np.ones((2, 6))) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 2, 6)), np.zeros((2, 3, 6)))

    def test_rejects_nan(self):
        pred = np.zeros((1, 2, 6))
        pred[0, 1, 2] = np.nan
        with pytest.raises(InvalidArgumentError):
            mse_loss(pred, np.zeros((1, 2, 6)))


class TestClosedFormTerms:
    @pytest.mark.parametrize("n_frames", range(3, 9))
    def test_pair_has_one_term_per_shared_motion(self, n_frames):
        terms = closed_form_terms(n_frames, 2)
        assert len(terms) == n_frames - 2
        for _, m, n, w_m, w_n in terms:
            assert (m, n) == (0, 1)
            # the same motion sits one slot later in the older clip
            assert w_n == w_m + 1
            assert 0 <= w_m < n_frames - 1
            assert 0 <= w_n < n_frames - 1

    def test_three_frame_term(self):
        assert closed_form_terms(3, 2) == [(1, 0, 1, 0, 1)]

    def test_two_frames_have_no_terms(self):
        assert closed_form_terms(2) == []


class TestConsistencyLoss:
    def test_matches_oracle_on_random_batches(self, rng):
        """Closed form and brute force agree on 1000 random N_f = 3 batches."""
        for _ in range(1000):
            batch = consistent_pair_batch(n_pairs=int(rng.integers(1, 5)), n_frames=3)
            preds = rng.standard_normal((2 * len(batch), 2, 6))
            closed, _ = mc_loss_batch(preds, 3, batch.pairs, reduction="sum")
            oracle = mc_loss_oracle(overlap_map(batch), preds)
            assert closed == pytest.approx(oracle, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("n_frames", [4, 5, 6])
    def test_closed_form_covers_longer_groups(self, rng, n_frames):
        """Every pair of clips in a group of consecutive clips is compared."""
        for size in range(2, n_frames):
            clips = [Clip.starting_at(i, n_frames) for i in range(size)]
            preds = rng.standard_normal((size, n_frames - 1, 6))
            single_group = OverlapMap(entries=overlap_map(clips).entries)
            expected = mc_loss_oracle(single_group, preds)
            assert mc_loss_closed(list(preds), n_frames) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n_frames", [3, 4, 5])
    def test_groups_longer_than_one_window(self, rng, n_frames):
        """Pairs of older clips still count once the group outgrows N_f - 1."""
        for size in range(n_frames, n_frames + 4):
            clips = [Clip.starting_at(i, n_frames) for i in range(size)]
            preds = rng.standard_normal((size, n_frames - 1, 6))
            single_group = OverlapMap(entries=overlap_map(clips).entries)
            expected = mc_loss_oracle(single_group, preds)
            assert mc_loss_closed(list(preds), n_frames) == pytest.approx(expected, rel=1e-12)

    def test_disagreement_between_older_clips(self):
        """Three clips of three frames: only clips 0 and 1 disagree on motion 2."""
        preds = np.zeros((3, 2, 6))
        preds[0, 1, 0] = 1.0
        clips = [Clip.starting_at(i, 3) for i in range(3)]
        expected = mc_loss_oracle(OverlapMap(entries=overlap_map(clips).entries), preds)
        assert expected == 1.0
        assert mc_loss_closed(list(preds), 3) == 1.0

    @pytest.mark.parametrize("n_frames", [3, 4, 6])
    def test_zero_when_overlaps_agree(self, rng, n_frames):
        batch = consistent_pair_batch(n_pairs=3, n_frames=n_frames)
        motions = rng.standard_normal((40, 6))
        preds = predictions_from_motions(list(batch.clips), motions)
        mc, n_terms = mc_loss_batch(preds, n_frames, batch.pairs)
        assert mc == 0.0
        assert n_terms == 3 * (n_frames - 2)

    def test_perturbation_costs_its_square(self, rng):
        """Moving one shared estimate by d adds exactly |d|^2."""
        batch = consistent_pair_batch(n_pairs=1, n_frames=3)
        preds = predictions_from_motions(list(batch.clips), rng.standard_normal((10, 6)))
        delta = np.array([0.0, 0.1, 0.0, -0.2, 0.0, 0.3])
        # motion 2 sits at w = 1 in the older clip
        preds[0, 1] += delta
        mc, _ = mc_loss_batch(preds, 3, batch.pairs, reduction="sum")
        assert mc == pytest.approx(float(delta @ delta), rel=1e-12)

    def test_mean_reduction_divides_by_pairs(self, rng):
        preds = rng.standard_normal((6, 3, 6))
        total, _ = mc_loss_batch(preds, 4, reduction="sum")
        mean, _ = mc_loss_batch(preds, 4, reduction="mean")
        assert mean == pytest.approx(total / 3, rel=1e-12)

    def test_degenerate_inputs(self, rng):
        # no overlap with two frames, and a lone clip has no partner
        assert mc_loss_batch(rng.standard_normal((2, 1, 6)), 2) == (0.0, 0)
        assert mc_loss_batch(rng.standard_normal((1, 2, 6)), 3) == (0.0, 0)

    def test_closed_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            mc_loss_closed([np.zeros((2, 6)), np.zeros((3, 6))], 3)

    @given(
        arrays(np.float64, (4, 3, 6), elements=st.floats(-10, 10)),
        arrays(np.float64, (6,), elements=st.floats(-10, 10)),
    )
    @settings(max_examples=100, deadline=None)
    def test_invariant_to_common_offset(self, preds, offset):
        """Only differences between estimates matter."""
        base, _ = mc_loss_batch(preds, 4)
        moved, _ = mc_loss_batch(preds + offset, 4)
        assert base >= 0.0
        assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)


class TestTotalLoss:
    @pytest.mark.parametrize("name", ["A", "B", "C"])
    def test_total_combines_terms(self, rng, name):
        cfg = LossConfig.for_model(name)
        preds = rng.standard_normal((4, 2, 6))
        targets = rng.standard_normal((4, 2, 6))
        breakdown = total_loss(preds, targets, cfg)
        assert breakdown.total == breakdown.mse + cfg.alpha * breakdown.mc
        assert breakdown.n_consistency_pairs == 2

    def test_breakdown_to_dict(self):
        breakdown = total_loss(np.zeros((2, 2, 6)), np.zeros((2, 2, 6)), LossConfig())
        assert breakdown.to_dict() == {"mse": 0.0, "mc": 0.0, "total": 0.0, "n_consistency_pairs": 1}


class TestLossGradient:
    @pytest.mark.parametrize("n_frames", [2, 3, 4, 5])
    @pytest.mark.parametrize("name", ["A", "B", "C"])
    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    def test_matches_finite_differences(self, rng, n_frames, name, reduction):
        cfg = LossConfig(alpha=LossConfig.for_model(name).alpha, mc_reduction=reduction)
        preds = rng.standard_normal((4, n_frames - 1, 6))
        targets = rng.standard_normal(preds.shape)
        analytic = loss_gradient(preds, targets, cfg)
        numeric = numeric_gradient(lambda p: total_loss(p, targets, cfg).total, preds)
        assert analytic.shape == preds.shape
        assert relative_error([analytic[k] for k in numeric], list(numeric.values())) < 1e-6

    def test_mse_only_gradient(self):
        preds = np.ones((2, 2, 6))
        targets = np.zeros((2, 2, 6))
        # 2 (p - t) / (n_motions * n_clips)
        np.testing.assert_allclose(loss_gradient(preds, targets, LossConfig.model_a()), 0.5)

    def test_is_deterministic(self, rng):
        preds = rng.standard_normal((6, 4, 6))
        targets = rng.standard_normal(preds.shape)
        first = loss_gradient(preds, targets, LossConfig.model_c())
        np.testing.assert_array_equal(first, loss_gradient(preds, targets, LossConfig.model_c()))
