"""Adam with bias correction, as a pure function of (params, grads, state)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np
import numpy.typing as npt

from .errors import InvalidArgumentError, ShapeError

ParamArrays = Dict[str, npt.NDArray[np.floating]]


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 200
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if not math.isfinite(self.lr) or self.lr <= 0.0:
            msg = f"lr must be a positive number, got {self.lr}"
            raise InvalidArgumentError(msg)
        for name in ("beta1", "beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                msg = f"{name} must lie in [0, 1), got {beta}"
                raise InvalidArgumentError(msg)
        if self.eps <= 0.0:
            msg = f"eps must be positive, got {self.eps}"
            raise InvalidArgumentError(msg)
        if self.steps < 0:
            msg = f"steps must be >= 0, got {self.steps}"
            raise InvalidArgumentError(msg)
        if self.dtype not in ("float32", "float64"):
            msg = f"dtype must be float32 or float64, got {self.dtype!r}"
            raise InvalidArgumentError(msg)


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""

    step: int = 0
    m: ParamArrays = field(default_factory=dict)
    v: ParamArrays = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> AdamState:
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[ParamArrays, AdamState]:
    """One Adam update; returns new parameter arrays and a new state.

    Parameters are visited in sorted name order. A zero gradient leaves a
    parameter unchanged on the first step while the timestep still advances.
    """
    if not math.isfinite(lr) or lr <= 0.0:
        msg = f"lr must be a positive number, got {lr}"
        raise InvalidArgumentError(msg)
    beta1, beta2 = betas
    if set(grads) - set(params):
        msg = f"gradients for unknown parameters: {sorted(set(grads) - set(params))}"
        raise InvalidArgumentError(msg)
    step = state.step + 1
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    new_params: ParamArrays = {}
    new_m: ParamArrays = {}
    new_v: ParamArrays = {}
    for name in sorted(params):
        p = np.asarray(params[name])
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=p.dtype)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step[{name}]", p.shape, g.shape)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"adam_step[{name}] state", p.shape, m.shape)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(step=step, m=new_m, v=new_v)
