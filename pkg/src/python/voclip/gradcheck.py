"""
Gradient Verification
=====================

Central finite differences against the tape's analytic gradients. A
coordinate's relative error is ``|a - n| / max(1, |a|, |n|)`` and the step
for coordinate ``x_i`` is ``step * (1 + |x_i|)``.

:func:`run_gradcheck_suite` exercises every primitive, the analytic loss
gradient, one encoder block and the toy model end to end, and returns one
:class:`CheckResult` per component.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from . import tensor as T
from .errors import NonFiniteError
from .losses import LossConfig, loss_gradient, total_loss
from .model import (
    ModelConfig,
    divided_space_time_block,
    forward_batch,
    init_params,
    loss_tensor,
)
from .tensor import Parameter, Tape, Tensor

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

DEFAULT_STEP = 1e-6
PRIMITIVE_TOL = 1e-5
LOSS_TOL = 1e-6
BLOCK_TOL = 1e-4
MODEL_TOL = 1e-4


class CheckResult:
    """Outcome of one verification, rendered as a ✅/❌ line."""

    def __init__(self, name: str, passed: bool, value: float, tolerance: float, message: str = "") -> None:
        self.name = name
        self.passed = passed
        self.value = value
        self.tolerance = tolerance
        self.message = message

    @classmethod
    def from_error(cls, name: str, value: float, tolerance: float, message: str = "") -> CheckResult:
        return cls(name, bool(value <= tolerance), value, tolerance, message)

    def __str__(self) -> str:
        status = "✅" if self.passed else "❌"
        line = f"{status} {self.name}: max_rel_err={self.value:.3e} (tol {self.tolerance:.0e})"
        return f"{line} {self.message}" if self.message else line

    def __repr__(self) -> str:
        return f"CheckResult({self.name!r}, passed={self.passed}, value={self.value!r})"


def relative_error(analytic: npt.ArrayLike, numeric: npt.ArrayLike) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def _finite_scalar(value: object) -> float:
    out = value.item() if isinstance(value, Tensor) else float(value)  # type: ignore[arg-type]
    if not np.isfinite(out):
        msg = f"function value is not finite: {out}"
        raise NonFiniteError(msg)
    return out


def numeric_gradient(
    f: Callable[[Array], float],
    x: npt.ArrayLike,
    step: float = DEFAULT_STEP,
    coords: Optional[Iterable[Tuple[int, ...]]] = None,
) -> Dict[Tuple[int, ...], float]:
    """Central differences of a scalar numpy function at selected coordinates."""
    x0 = np.array(x, dtype=np.float64)
    out: Dict[Tuple[int, ...], float] = {}
    for idx in coords if coords is not None else np.ndindex(x0.shape):
        h = step * (1.0 + abs(float(x0[idx])))
        xp = x0.copy()
        xp[idx] += h
        xm = x0.copy()
        xm[idx] -= h
        out[tuple(idx)] = (_finite_scalar(f(xp)) - _finite_scalar(f(xm))) / (2.0 * h)
    return out


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: npt.ArrayLike,
    step: float = DEFAULT_STEP,
    coords: Optional[Sequence[Tuple[int, ...]]] = None,
) -> float:
    """Max relative error between the taped gradient of ``f`` at ``x`` and
    central differences (all coordinates unless ``coords`` is given)."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    param = Parameter(x0, "x")
    with Tape() as tape:
        value = f(param)
        _finite_scalar(value)
        analytic = tape.backward(value, [param])["x"]
    numeric = numeric_gradient(lambda arr: f(Tensor(arr)).item(), x0, step, coords)
    keys = list(numeric)
    return relative_error([analytic[k] for k in keys], [numeric[k] for k in keys])


def _weighted_sum(y: Tensor, rng: np.random.Generator) -> Tensor:
    weights = Tensor(rng.standard_normal(y.shape))
    return T.sum_(T.mul(y, weights))


def primitive_errors(rng: np.random.Generator, step: float = DEFAULT_STEP) -> Dict[str, float]:
    """Gradient-check every primitive on float64 random inputs."""
    a = rng.standard_normal((3, 4))
    b = Tensor(rng.standard_normal((4, 5)))
    c = Tensor(rng.standard_normal((3, 4)))
    row = Tensor(rng.standard_normal(4))
    gamma = Tensor(rng.uniform(0.5, 1.5, size=4))
    beta = Tensor(rng.standard_normal(4))
    bias = Tensor(rng.standard_normal(5))
    cases: Dict[str, Callable[[Tensor], Tensor]] = {
        "matmul": lambda x: T.matmul(x, b),
        "add": lambda x: T.add(x, row),
        "sub": lambda x: T.sub(c, x),
        "mul": lambda x: T.mul(x, c),
        "scale": lambda x: T.scale(x, -1.7),
        "transpose": lambda x: T.transpose(x),
        "reshape": lambda x: T.reshape(x, (2, 6)),
        "slice": lambda x: T.slice_(x, (slice(1, 3), slice(None, None, 2))),
        "concat": lambda x: T.concat([x, c, x], axis=1),
        "mean": lambda x: T.mean(x, axis=0),
        "sum": lambda x: T.sum_(x, axis=1, keepdims=True),
        "softmax": lambda x: T.softmax(x, axis=-1),
        "layer_norm": lambda x: T.layer_norm(x, gamma, beta),
        "gelu": lambda x: T.gelu(x),
        "linear": lambda x: T.linear(x, b, bias),
    }
    errors: Dict[str, float] = {}
    for name, op in cases.items():
        seed = int(rng.integers(0, 2**31))
        errors[name] = grad_check(lambda x, op=op, seed=seed: _weighted_sum(op(x), np.random.default_rng(seed)), a, step)
    return errors


def loss_gradient_error(rng: np.random.Generator, n_instances: int = 100, step: float = DEFAULT_STEP) -> float:
    """Analytic loss gradient against differences of ``total_loss``."""
    worst = 0.0
    for _ in range(n_instances):
        n_frames = int(rng.integers(2, 6))
        n_pairs = int(rng.integers(1, 3))
        alpha = float(rng.choice([0.0, 1.0, 10.0]))
        reduction = str(rng.choice(["mean", "sum"]))
        cfg = LossConfig(alpha=alpha, mc_reduction=reduction)
        preds = rng.standard_normal((2 * n_pairs, n_frames - 1, 6))
        targets = rng.standard_normal(preds.shape)
        analytic = loss_gradient(preds, targets, cfg)
        numeric = numeric_gradient(lambda p: total_loss(p, targets, cfg).total, preds, step)
        worst = max(worst, relative_error([analytic[k] for k in numeric], list(numeric.values())))
    return worst


def block_error(rng: np.random.Generator, cfg: ModelConfig, step: float = DEFAULT_STEP) -> float:
    params = init_params(cfg, seed=int(rng.integers(0, 2**31)), dtype="float64")
    z = rng.standard_normal((cfg.n_frames, cfg.n_patches, cfg.embed_dim))

    def f(x: Tensor) -> Tensor:
        out = divided_space_time_block(x, params, 0, cfg.heads)
        return T.sum_(T.mul(out, out))

    coords = _sample_coords(rng, z.shape, 48)
    return grad_check(f, z, step, coords)


def _sample_coords(rng: np.random.Generator, shape: Tuple[int, ...], limit: int) -> List[Tuple[int, ...]]:
    size = int(np.prod(shape))
    flat = np.sort(rng.choice(size, size=min(limit, size), replace=False))
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in flat]


def model_errors(
    rng: np.random.Generator,
    cfg: ModelConfig,
    coords_per_param: int = 3,
    step: float = DEFAULT_STEP,
) -> Dict[str, float]:
    """End-to-end check of the toy model's total loss on one clip pair:
    every head weight, plus sampled coordinates of every other parameter."""
    params = init_params(cfg, seed=int(rng.integers(0, 2**31)), dtype="float64")
    frames = rng.uniform(0.0, 1.0, size=(2, cfg.n_frames, cfg.channels, cfg.height, cfg.width))
    targets = 0.1 * rng.standard_normal((2, cfg.n_frames - 1, 6))
    loss_cfg = LossConfig(alpha=1.0)
    errors: Dict[str, float] = {}
    for name in params:
        def f(x: Tensor, name: str = name) -> Tensor:
            swapped = {**params, name: x}
            return loss_tensor(forward_batch(frames, swapped, cfg), targets, loss_cfg)

        shape = params[name].shape
        coords = None if name.startswith("head.") else _sample_coords(rng, shape, coords_per_param)
        errors[name] = grad_check(f, params[name].data, step, coords)
    return errors


def run_gradcheck_suite(seed: int = 0, cfg: Optional[ModelConfig] = None) -> List[CheckResult]:
    """Run every gradient check; never raises on a failed tolerance."""
    cfg = cfg or ModelConfig.toy()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    results: List[CheckResult] = []

    prim = primitive_errors(rng)
    worst_op = max(prim, key=prim.__getitem__)
    results.append(CheckResult.from_error("primitives", prim[worst_op], PRIMITIVE_TOL, f"worst={worst_op}"))
    for op, err in prim.items():
        logger.debug("primitive gradcheck", extra={"fields": {"op": op, "max_rel_err": err}})

    results.append(CheckResult.from_error("loss_gradient", loss_gradient_error(rng), LOSS_TOL))
    results.append(CheckResult.from_error("encoder_block", block_error(rng, cfg), BLOCK_TOL))

    model = model_errors(rng, cfg)
    head = max(model["head.weight"], model["head.bias"])
    results.append(CheckResult.from_error("model_head", head, MODEL_TOL))
    worst_param = max(model, key=model.__getitem__)
    results.append(
        CheckResult.from_error("model_end_to_end", model[worst_param], MODEL_TOL, f"worst={worst_param}")
    )
    for result in results:
        logger.info(
            "gradcheck",
            extra={"fields": {"check": result.name, "max_rel_err": result.value, "passed": result.passed}},
        )
    return results
