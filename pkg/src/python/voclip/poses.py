"""
KITTI Pose Files
================

One line per frame holding the 12 entries of the row-major ``3 x 4`` matrix
``[R | t]`` (camera-to-world). Ground-truth files carry limited precision, so
rotations are accepted up to an orthonormality error of 1e-3 and re-projected
onto SO(3) on load. Writers use ``%.12e`` (13 significant digits).
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List, Union

import numpy as np

from .atomic import atomic_write_text
from .errors import ParseError
from .se3 import TransformSE3, Trajectory, orthonormality_error, project_to_so3

logger = logging.getLogger(__name__)

LOAD_ORTHONORMAL_TOL = 1e-3
N_TOKENS = 12


def parse_kitti_poses(text: str, path: Union[str, Path] = "<string>") -> Trajectory:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParseError(path, None, "empty pose file")
    poses: List[TransformSE3] = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if len(tokens) != N_TOKENS:
            raise ParseError(path, lineno, f"expected {N_TOKENS} values, got {len(tokens)}")
        try:
            values = [float(tok) for tok in tokens]
        except ValueError:
            bad = next(tok for tok in tokens if not _is_float(tok))
            raise ParseError(path, lineno, f"non-numeric value {bad!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(path, lineno, "non-finite value")
        m = np.array(values, dtype=np.float64).reshape(3, 4)
        err = orthonormality_error(m[:, :3])
        if err > LOAD_ORTHONORMAL_TOL or np.linalg.det(m[:, :3]) <= 0.0:
            raise ParseError(path, lineno, f"rotation is not a proper rotation (orthonormality error {err:.3e})")
        poses.append(TransformSE3(project_to_so3(m[:, :3]), m[:, 3]))
    return Trajectory(tuple(poses))


def _is_float(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_kitti_poses(path: Union[str, Path]) -> Trajectory:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, None, f"cannot read pose file ({exc.strerror})") from None
    traj = parse_kitti_poses(text, path)
    logger.debug("poses loaded", extra={"fields": {"path": str(path), "n_poses": len(traj)}})
    return traj


def format_kitti_poses(traj: Trajectory) -> str:
    rows = []
    for pose in traj:
        m = pose.matrix[:3, :]
        rows.append(" ".join(f"{v:.12e}" for v in m.reshape(-1)))
    return "\n".join(rows) + "\n"


def write_kitti_poses(traj: Trajectory, path: Union[str, Path]) -> None:
    atomic_write_text(path, format_kitti_poses(traj))
