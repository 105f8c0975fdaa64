"""
Synthetic Sequences
===================

Ground-truth trajectories built from constant-curvature relative motions, a
drifting noisy copy, and procedural imagery rendered along a trajectory so
the toy model has a learnable signal.

Camera axes follow the KITTI convention: ``z`` forward, ``x`` right, ``y``
down. Turning is a rotation about ``y``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import numpy.typing as npt

from .errors import InvalidArgumentError
from .model import ModelConfig
from .se3 import Pose6DoF, Trajectory, matrix_to_euler, relative_to_absolute

logger = logging.getLogger(__name__)

SHAPES = ("line", "circle", "figure-eight")
PIXELS_PER_METER = 16.0
ZOOM_RATE = 0.05
CHECKER_CELL = 2.0


@dataclass(frozen=True)
class SyntheticSpec:
    shape: str = "circle"
    n_frames: int = 67
    step: float = 1.0
    curvature: float = 0.05
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            msg = f"shape must be one of {SHAPES}, got {self.shape!r}"
            raise InvalidArgumentError(msg)
        if self.n_frames < 2:
            msg = f"n_frames must be >= 2, got {self.n_frames}"
            raise InvalidArgumentError(msg)
        if not self.step > 0.0:
            msg = f"step must be positive, got {self.step}"
            raise InvalidArgumentError(msg)
        if self.noise_std < 0.0:
            msg = f"noise_std must be >= 0, got {self.noise_std}"
            raise InvalidArgumentError(msg)
        if self.shape != "line" and self.curvature == 0.0:
            msg = f"{self.shape} needs a non-zero curvature"
            raise InvalidArgumentError(msg)

    @property
    def turn_angle(self) -> float:
        """Heading change per step, ``step * curvature`` radians."""
        return 0.0 if self.shape == "line" else self.step * self.curvature


def synthetic_motions(spec: SyntheticSpec) -> List[Pose6DoF]:
    """The ``n_frames - 1`` ground-truth relative motions."""
    theta = spec.turn_angle
    loop = max(1, round(2.0 * math.pi / abs(theta))) if theta else 0
    motions = []
    for k in range(spec.n_frames - 1):
        sign = -1.0 if spec.shape == "figure-eight" and (k // loop) % 2 else 1.0
        motions.append(Pose6DoF(np.array([0.0, sign * theta, 0.0]), np.array([0.0, 0.0, spec.step])))
    return motions


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Trajectory, Trajectory]:
    """``(gt, noisy)``; the noisy copy perturbs every relative motion with
    zero-mean Gaussian noise and re-integrates, so errors accumulate."""
    motions = synthetic_motions(spec)
    gt = relative_to_absolute(motions)
    if spec.noise_std == 0.0:
        return gt, gt
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    noise = rng.normal(0.0, spec.noise_std, size=(len(motions), 6))
    noisy = relative_to_absolute([Pose6DoF.from_vector(m.as_vector() + n) for m, n in zip(motions, noise)])
    return gt, noisy


def _texture_params(seed: int, channels: int) -> npt.NDArray[np.float64]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    # per channel: frequency along u, frequency along v (cycles per meter), phase
    freqs = rng.uniform(0.1, 0.6, size=(channels, 2)) * rng.choice([-1.0, 1.0], size=(channels, 2))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(channels, 1))
    return np.concatenate([freqs, phases], axis=1)


def _texture(u: np.ndarray, v: np.ndarray, params: npt.NDArray[np.float64]) -> np.ndarray:
    checker = (np.floor(u / CHECKER_CELL) + np.floor(v / CHECKER_CELL)) % 2.0
    out = []
    for fu, fv, phase in params:
        wave = np.sin(2.0 * math.pi * (fu * u + fv * v) + phase)
        out.append(0.5 + 0.25 * wave + 0.25 * (2.0 * checker - 1.0))
    return np.clip(np.stack(out), 0.0, 1.0)


def render_frames(
    traj: Trajectory,
    cfg: ModelConfig,
    seed: int = 0,
    pixels_per_meter: float = PIXELS_PER_METER,
) -> npt.NDArray[np.float64]:
    """Render ``(len(traj), C, H, W)`` views of a textured plane.

    x/y translation pans the view (one meter is ``pixels_per_meter``
    pixels), z translation zooms, roll rotates the image and pitch/yaw pan
    it by ``W / 2`` pixels per radian.
    """
    if pixels_per_meter <= 0.0:
        msg = f"pixels_per_meter must be positive, got {pixels_per_meter}"
        raise InvalidArgumentError(msg)
    params = _texture_params(seed, cfg.channels)
    rows = np.arange(cfg.height, dtype=np.float64) - cfg.height / 2.0
    cols = np.arange(cfg.width, dtype=np.float64) - cfg.width / 2.0
    yy, xx = np.meshgrid(rows, cols, indexing="ij")
    pan = (cfg.width / 2.0) / pixels_per_meter
    frames = np.empty((len(traj), cfg.channels, cfg.height, cfg.width))
    for k, pose in enumerate(traj):
        rx, ry, rz = matrix_to_euler(pose.rotation)
        tx, ty, tz = pose.translation
        density = pixels_per_meter * math.exp(ZOOM_RATE * tz)
        c, s = math.cos(rz), math.sin(rz)
        if rz == 0.0:
            du, dv = xx / density, yy / density
        else:
            du, dv = (c * xx - s * yy) / density, (s * xx + c * yy) / density
        u = tx + ry * pan + du
        v = ty + rx * pan + dv
        frames[k] = _texture(u, v, params)
    return frames


def generate_synthetic_frames(
    spec: SyntheticSpec,
    cfg: ModelConfig,
    pixels_per_meter: float = PIXELS_PER_METER,
) -> Tuple[Trajectory, Trajectory, npt.NDArray[np.float64]]:
    """``(gt, noisy, frames)`` with frames rendered along ``gt``."""
    gt, noisy = generate_synthetic(spec)
    frames = render_frames(gt, cfg, spec.seed, pixels_per_meter)
    logger.debug(
        "synthetic frames rendered",
        extra={"fields": {"shape": spec.shape, "n_frames": spec.n_frames, "height": cfg.height, "width": cfg.width}},
    )
    return gt, noisy, frames
