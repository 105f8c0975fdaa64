"""Unit tests for voclip.gradcheck."""

import numpy as np
import pytest

from voclip import tensor as T
from voclip.errors import NonFiniteError
from voclip.gradcheck import (
    BLOCK_TOL,
    CheckResult,
    block_error,
    grad_check,
    loss_gradient_error,
    numeric_gradient,
    primitive_errors,
    relative_error,
    run_gradcheck_suite,
)

SUITE_CHECKS = ["primitives", "loss_gradient", "encoder_block", "model_head", "model_end_to_end"]


class TestCheckResult:
    def test_passing_line(self):
        result = CheckResult.from_error("primitives", 1e-9, 1e-5)
        assert result.passed
        assert str(result) == "✅ primitives: max_rel_err=1.000e-09 (tol 1e-05)"

    def test_failing_line_with_message(self):
        result = CheckResult.from_error("model_head", 0.5, 1e-4, "worst=head.bias")
        assert not result.passed
        assert str(result).startswith("❌ model_head")
        assert str(result).endswith("worst=head.bias")


class TestHelpers:
    def test_relative_error_floor(self):
        """Small gradients are compared absolutely, large ones relatively."""
        assert relative_error([1e-3], [2e-3]) == pytest.approx(1e-3)
        assert relative_error([100.0], [101.0]) == pytest.approx(1.0 / 101.0)
        assert relative_error([], []) == 0.0

    def test_numeric_gradient_of_quadratic(self):
        grads = numeric_gradient(lambda x: float(np.sum(x * x)), np.array([1.0, -2.0]))
        assert grads[(0,)] == pytest.approx(2.0, rel=1e-8)
        assert grads[(1,)] == pytest.approx(-4.0, rel=1e-8)

    def test_numeric_gradient_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            numeric_gradient(lambda x: float("nan"), np.zeros(2))

    def test_grad_check_selected_coords(self, rng):
        err = grad_check(lambda x: T.sum_(T.gelu(x)), rng.standard_normal((3, 3)), coords=[(0, 0), (2, 1)])
        assert err < 1e-7


class TestComponents:
    def test_primitives(self, rng):
        assert max(primitive_errors(rng).values()) < 1e-5

    def test_loss_gradient(self, rng):
        assert loss_gradient_error(rng, n_instances=20) < 1e-6

    def test_encoder_block(self, rng, tiny_cfg):
        assert block_error(rng, tiny_cfg) < BLOCK_TOL


class TestSuite:
    def test_tiny_model_passes(self, tiny_cfg):
        results = run_gradcheck_suite(seed=0, cfg=tiny_cfg)
        assert [r.name for r in results] == SUITE_CHECKS
        assert all(r.passed for r in results), [str(r) for r in results]

    def test_suite_is_deterministic(self, tiny_cfg):
        first = [r.value for r in run_gradcheck_suite(seed=3, cfg=tiny_cfg)]
        second = [r.value for r in run_gradcheck_suite(seed=3, cfg=tiny_cfg)]
        assert first == second

    def test_detects_wrong_derivative(self, monkeypatch, tiny_cfg):
        monkeypatch.setattr(T, "_gelu_derivative", lambda x: 1.1 * np.ones_like(x))
        results = {r.name: r for r in run_gradcheck_suite(seed=0, cfg=tiny_cfg)}
        assert not results["primitives"].passed
        assert "worst=gelu" in results["primitives"].message

    @pytest.mark.slow
    def test_toy_model_passes(self, toy_cfg):
        assert all(r.passed for r in run_gradcheck_suite(seed=0, cfg=toy_cfg))
