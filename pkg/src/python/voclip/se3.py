"""
Rigid Motion Algebra
====================

SE(3) transforms, the 6-DoF pose vector used as regression target, and
conversions between relative motions and absolute trajectories.

Conventions:
- float64 everywhere.
- Rotations are parameterized by extrinsic XYZ Euler angles in radians,
  ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``.
- The 6-DoF vector layout is ``(rx, ry, rz, tx, ty, tz)``.
- Trajectories hold camera-to-world poses; ``poses[0]`` is the identity
  unless an explicit origin is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.linalg import polar

from .errors import InvalidArgumentError

FloatArray = npt.NDArray[np.float64]
RotationMatrix = FloatArray

GIMBAL_EPS = 1e-9
ORTHONORMAL_TOL = 1e-6
REPROJECT_TOL = 1e-10


def _as_vector3(values: npt.ArrayLike, what: str) -> FloatArray:
    vec = np.asarray(values, dtype=np.float64).reshape(-1)
    if vec.shape != (3,):
        msg = f"{what} must have 3 entries, got shape {vec.shape}"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(vec)):
        msg = f"{what} must be finite, got {vec.tolist()}"
        raise InvalidArgumentError(msg)
    return vec


def _frozen(array: FloatArray) -> FloatArray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def wrap_angle(angles: npt.ArrayLike) -> FloatArray:
    """Wrap angles into ``(-pi, pi]``."""
    a = np.asarray(angles, dtype=np.float64)
    wrapped = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(wrapped <= -math.pi, wrapped + 2.0 * math.pi, wrapped)


def orthonormality_error(r: npt.ArrayLike) -> float:
    """Largest absolute entry of ``R^T R - I``."""
    m = np.asarray(r, dtype=np.float64)
    return float(np.max(np.abs(m.T @ m - np.eye(3))))


def check_rotation(r: npt.ArrayLike, tol: float = ORTHONORMAL_TOL) -> RotationMatrix:
    """Validate a 3x3 rotation matrix and return it as float64."""
    m = np.asarray(r, dtype=np.float64)
    if m.shape != (3, 3):
        msg = f"rotation must be 3x3, got shape {m.shape}"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(m)):
        msg = "rotation has non-finite entries"
        raise InvalidArgumentError(msg)
    err = orthonormality_error(m)
    if err > tol:
        msg = f"rotation is not orthonormal (error {err:.3e} > {tol:.1e})"
        raise InvalidArgumentError(msg)
    det = float(np.linalg.det(m))
    if abs(det - 1.0) > tol:
        msg = f"rotation determinant is {det:.9f}, expected +1"
        raise InvalidArgumentError(msg)
    return m


def project_to_so3(r: npt.ArrayLike) -> RotationMatrix:
    """Nearest rotation in the Frobenius sense (polar decomposition)."""
    u, _ = polar(np.asarray(r, dtype=np.float64))
    if np.linalg.det(u) < 0.0:
        msg = "cannot project a reflection onto SO(3)"
        raise InvalidArgumentError(msg)
    return u


def euler_to_matrix(angles: npt.ArrayLike) -> RotationMatrix:
    """Rotation ``Rz(rz) @ Ry(ry) @ Rx(rx)`` for angles ``(rx, ry, rz)``."""
    rx, ry, rz = _as_vector3(angles, "angles")
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    return np.array(
        [
            [cy * cz, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [cy * sz, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ],
        dtype=np.float64,
    )


def matrix_to_euler(r: npt.ArrayLike) -> FloatArray:
    """Inverse of :func:`euler_to_matrix`.

    ``ry`` is recovered in ``[-pi/2, pi/2]``. At gimbal lock
    (``|cos ry| < 1e-9``) ``rx`` is fixed to 0 and ``rz`` absorbs the
    remaining rotation, so the returned angles still reproduce ``r``.
    """
    m = check_rotation(r)
    cy = math.hypot(m[0, 0], m[1, 0])
    ry = math.atan2(-m[2, 0], cy)
    if cy >= GIMBAL_EPS:
        rx = math.atan2(m[2, 1], m[2, 2])
        rz = math.atan2(m[1, 0], m[0, 0])
    else:
        rx = 0.0
        rz = math.atan2(-m[0, 1], m[1, 1])
    return wrap_angle(np.array([rx, ry, rz], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Pose6DoF:
    """Flattened 6-DoF motion ``(rx, ry, rz, tx, ty, tz)``."""

    angles: FloatArray
    translation: FloatArray

    def __post_init__(self) -> None:
        angles = wrap_angle(_as_vector3(self.angles, "angles"))
        object.__setattr__(self, "angles", _frozen(angles))
        translation = _as_vector3(self.translation, "translation")
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def zero(cls) -> Pose6DoF:
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: npt.ArrayLike) -> Pose6DoF:
        vec = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vec.shape != (6,):
            msg = f"6-DoF vector must have 6 entries, got shape {vec.shape}"
            raise InvalidArgumentError(msg)
        return cls(vec[:3], vec[3:])

    def as_vector(self) -> FloatArray:
        return np.concatenate([self.angles, self.translation])

    def __repr__(self) -> str:
        return f"Pose6DoF({np.array2string(self.as_vector(), precision=6)})"


@dataclass(frozen=True, eq=False)
class TransformSE3:
    """Rigid motion ``[R t; 0 1]``."""

    rotation: RotationMatrix
    translation: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", _frozen(check_rotation(self.rotation)))
        translation = _as_vector3(self.translation, "translation")
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> TransformSE3:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: npt.ArrayLike) -> TransformSE3:
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in ((4, 4), (3, 4)):
            msg = f"transform must be 4x4 or 3x4, got shape {m.shape}"
            raise InvalidArgumentError(msg)
        if m.shape == (4, 4) and not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            msg = f"bottom row must be (0, 0, 0, 1), got {m[3].tolist()}"
            raise InvalidArgumentError(msg)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, translation: npt.ArrayLike) -> TransformSE3:
        return cls(np.eye(3), translation)

    @property
    def matrix(self) -> FloatArray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def __repr__(self) -> str:
        return f"TransformSE3(\n{np.array2string(self.matrix, precision=6)})"


def pose_to_transform(pose: Pose6DoF) -> TransformSE3:
    return TransformSE3(euler_to_matrix(pose.angles), pose.translation)


def transform_to_pose(transform: TransformSE3) -> Pose6DoF:
    return Pose6DoF(matrix_to_euler(transform.rotation), transform.translation)


def compose(a: TransformSE3, b: TransformSE3) -> TransformSE3:
    """Homogeneous product ``a @ b``; re-projects the rotation onto SO(3)
    once its orthonormality error exceeds 1e-10."""
    rotation = a.rotation @ b.rotation
    if orthonormality_error(rotation) > REPROJECT_TOL:
        rotation = project_to_so3(rotation)
    translation = a.rotation @ b.translation + a.translation
    return TransformSE3(rotation, translation)


def invert(t: TransformSE3) -> TransformSE3:
    rt = t.rotation.T
    return TransformSE3(rt, -rt @ t.translation)


def rotation_angle(r: npt.ArrayLike) -> float:
    """Geodesic angle of a rotation, with the arccos argument clamped."""
    m = np.asarray(r, dtype=np.float64)
    cos = 0.5 * (float(np.trace(m)) - 1.0)
    return math.acos(max(min(cos, 1.0), -1.0))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered absolute camera-to-world poses indexed by frame."""

    poses: Tuple[TransformSE3, ...]

    def __post_init__(self) -> None:
        poses = tuple(self.poses)
        if not poses:
            msg = "a trajectory needs at least one pose"
            raise InvalidArgumentError(msg)
        object.__setattr__(self, "poses", poses)

    @classmethod
    def from_matrices(cls, matrices: Iterable[npt.ArrayLike]) -> Trajectory:
        return cls(tuple(TransformSE3.from_matrix(m) for m in matrices))

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self) -> Iterator[TransformSE3]:
        return iter(self.poses)

    def __getitem__(self, index: int) -> TransformSE3:
        return self.poses[index]

    @property
    def positions(self) -> FloatArray:
        """``(n, 3)`` array of camera centres."""
        return np.stack([p.translation for p in self.poses])

    def matrices(self) -> FloatArray:
        """``(n, 4, 4)`` stack of homogeneous matrices."""
        return np.stack([p.matrix for p in self.poses])


def relative_to_absolute(
    motions: Sequence[Pose6DoF], origin: Optional[TransformSE3] = None
) -> Trajectory:
    """Integrate relative motions: ``poses[k] = poses[k-1] @ T(motions[k-1])``."""
    current = origin if origin is not None else TransformSE3.identity()
    poses: List[TransformSE3] = [current]
    for motion in motions:
        current = compose(current, pose_to_transform(motion))
        poses.append(current)
    return Trajectory(tuple(poses))


def relative_transform(a: TransformSE3, b: TransformSE3) -> TransformSE3:
    """Motion taking pose ``a`` to pose ``b``: ``inv(a) @ b``."""
    return compose(invert(a), b)


def absolute_to_relative(traj: Trajectory) -> List[Pose6DoF]:
    if len(traj) < 2:
        msg = f"need at least 2 poses to form motions, got {len(traj)}"
        raise InvalidArgumentError(msg)
    return [
        transform_to_pose(relative_transform(traj[k], traj[k + 1]))
        for k in range(len(traj) - 1)
    ]
