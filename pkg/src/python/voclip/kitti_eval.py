"""
Trajectory Evaluation
=====================

KITTI-odometry style metrics for a predicted trajectory against ground
truth:

- ``t_err``: mean translational segment error in percent,
- ``r_err``: mean rotational segment error in degrees per 100 m,
- ``ate``: RMSE of positions,
- ``rpe_t`` / ``rpe_r``: mean frame-to-frame relative pose error.

Segments start every ``stride`` frames (default 10) and end at the first
frame whose ground-truth arc distance is strictly greater than the start
distance plus the segment length. When an alignment mode is selected it is
estimated once on positions and applied to the whole predicted trajectory
before any metric is computed.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateAlignmentError, InvalidArgumentError, ParseError
from .poses import read_kitti_poses
from .se3 import FloatArray, TransformSE3, Trajectory, project_to_so3

logger = logging.getLogger(__name__)

DEFAULT_LENGTHS: Tuple[int, ...] = (100, 200, 300, 400, 500, 600, 700, 800)
DEFAULT_STRIDE = 10
DEGENERACY_RATIO = 1e-10
METRICS = ("t_err", "r_err", "ate", "rpe_t", "rpe_r")


class AlignmentMode(enum.Enum):
    NONE = "none"
    RIGID_6DOF = "6dof"
    SIMILARITY_7DOF = "7dof"

    @classmethod
    def parse(cls, value: Union[str, AlignmentMode]) -> AlignmentMode:
        if isinstance(value, AlignmentMode):
            return value
        aliases = {"rigid_6dof": cls.RIGID_6DOF, "similarity_7dof": cls.SIMILARITY_7DOF}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            msg = f"unknown alignment mode {value!r}, expected none, 6dof or 7dof"
            raise InvalidArgumentError(msg) from None


@dataclass(frozen=True)
class Alignment:
    """Similarity ``p -> s * R @ p + t``."""

    scale: float
    rotation: FloatArray
    translation: FloatArray

    @classmethod
    def identity(cls) -> Alignment:
        return cls(1.0, np.eye(3), np.zeros(3))

    def to_dict(self) -> Dict[str, object]:
        return {
            "scale": self.scale,
            "rotation": np.asarray(self.rotation).tolist(),
            "translation": np.asarray(self.translation).tolist(),
        }


def _check_pair(pred: Trajectory, gt: Trajectory, minimum: int) -> None:
    if len(pred) != len(gt):
        msg = f"trajectory lengths differ: pred {len(pred)} vs gt {len(gt)}"
        raise InvalidArgumentError(msg)
    if len(gt) < minimum:
        msg = f"need at least {minimum} poses, got {len(gt)}"
        raise InvalidArgumentError(msg)


def umeyama_align(pred: Trajectory, gt: Trajectory, with_scale: bool = True) -> Alignment:
    """Closed-form least-squares ``(s, R, t)`` mapping pred positions onto gt."""
    _check_pair(pred, gt, 3)
    x = pred.positions
    y = gt.positions
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    dx = x - mu_x
    dy = y - mu_y
    sigma = dy.T @ dx / len(x)
    u, d, vt = np.linalg.svd(sigma)
    if d[0] <= 0.0 or d[1] <= DEGENERACY_RATIO * d[0]:
        msg = f"cross-covariance has rank < 2 (singular values {d.tolist()})"
        raise DegenerateAlignmentError(msg)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s_fix[2, 2] = -1.0
    rotation = u @ s_fix @ vt
    scale = 1.0
    if with_scale:
        var_x = float(dx.var(axis=0).sum())
        scale = float(np.sum(d * np.diag(s_fix)) / var_x)
    translation = mu_y - scale * rotation @ mu_x
    return Alignment(scale, rotation, translation)


def apply_alignment(traj: Trajectory, alignment: Alignment) -> Trajectory:
    """``R' = R R_k``, ``t' = s R t_k + t`` for every pose."""
    r = np.asarray(alignment.rotation)
    poses = [
        TransformSE3(
            project_to_so3(r @ pose.rotation),
            alignment.scale * r @ pose.translation + alignment.translation,
        )
        for pose in traj
    ]
    return Trajectory(tuple(poses))


def align_trajectory(
    pred: Trajectory, gt: Trajectory, mode: Union[str, AlignmentMode]
) -> Tuple[Trajectory, Alignment]:
    mode = AlignmentMode.parse(mode)
    if mode is AlignmentMode.NONE:
        _check_pair(pred, gt, 1)
        return pred, Alignment.identity()
    _check_pair(pred, gt, 3)
    if np.array_equal(pred.positions, gt.positions):
        # identity is the exact least-squares solution
        return pred, Alignment.identity()
    alignment = umeyama_align(pred, gt, with_scale=mode is AlignmentMode.SIMILARITY_7DOF)
    return apply_alignment(pred, alignment), alignment


def ate(pred: Trajectory, gt: Trajectory, mode: Union[str, AlignmentMode] = AlignmentMode.NONE) -> float:
    """Position RMSE after the chosen alignment, in meters."""
    aligned, _ = align_trajectory(pred, gt, mode)
    diff = aligned.positions - gt.positions
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def _rotation_error(pose_error: np.ndarray) -> float:
    d = 0.5 * (pose_error[0, 0] + pose_error[1, 1] + pose_error[2, 2] - 1.0)
    return float(np.arccos(max(min(d, 1.0), -1.0)))


def _translation_error(pose_error: np.ndarray) -> float:
    return float(np.linalg.norm(pose_error[:3, 3]))


def _relative(matrices: np.ndarray, i: int, j: int) -> np.ndarray:
    return np.linalg.inv(matrices[i]) @ matrices[j]


def _pose_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``inv(a) @ b``, exactly the identity when ``a == b``."""
    if np.array_equal(a, b):
        return np.eye(4)
    return np.linalg.inv(a) @ b


def rpe(pred: Trajectory, gt: Trajectory) -> Tuple[float, float]:
    """Mean frame-to-frame ``(translation m, rotation deg)`` error of
    ``inv(gt_rel) @ pred_rel``."""
    _check_pair(pred, gt, 2)
    pm = pred.matrices()
    gm = gt.matrices()
    t_errs: List[float] = []
    r_errs: List[float] = []
    for k in range(len(gt) - 1):
        err = _pose_error(_relative(gm, k, k + 1), _relative(pm, k, k + 1))
        t_errs.append(_translation_error(err))
        r_errs.append(_rotation_error(err))
    return float(np.mean(t_errs)), float(np.degrees(np.mean(r_errs)))


def trajectory_distances(gt: Trajectory) -> FloatArray:
    """Cumulative arc length per frame."""
    positions = gt.positions
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _last_frame(dist: FloatArray, first: int, length: float) -> int:
    for i in range(first, len(dist)):
        if dist[i] > dist[first] + length:
            return i
    return -1


@dataclass(frozen=True)
class SegmentErrors:
    """Averages over all segments; ``empty`` when no segment fits."""

    t_err: float
    r_err: float
    n_segments_per_length: Dict[int, int]

    @property
    def empty(self) -> bool:
        return sum(self.n_segments_per_length.values()) == 0


def _segments_from(
    first: int, dist: FloatArray, pm: np.ndarray, gm: np.ndarray, lengths: Sequence[float]
) -> List[Tuple[float, float, float]]:
    out = []
    for length in lengths:
        last = _last_frame(dist, first, length)
        if last == -1:
            continue
        delta_gt = _relative(gm, first, last)
        delta_pred = _relative(pm, first, last)
        err = _pose_error(delta_pred, delta_gt)
        out.append((float(length), _rotation_error(err) / length, _translation_error(err) / length))
    return out


def kitti_segment_errors(
    pred: Trajectory,
    gt: Trajectory,
    lengths: Sequence[float] = DEFAULT_LENGTHS,
    stride: int = DEFAULT_STRIDE,
    threads: int = 1,
) -> SegmentErrors:
    """``t_err`` in percent and ``r_err`` in degrees per 100 m.

    Start frames may be processed by a thread pool; per-start results are
    gathered in start order so the sums do not depend on ``threads``.
    """
    _check_pair(pred, gt, 1)
    if stride < 1:
        msg = f"stride must be >= 1, got {stride}"
        raise InvalidArgumentError(msg)
    dist = trajectory_distances(gt)
    pm = pred.matrices()
    gm = gt.matrices()
    starts = range(0, len(gt), stride)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_start = list(pool.map(lambda f: _segments_from(f, dist, pm, gm, lengths), starts))
    else:
        per_start = [_segments_from(f, dist, pm, gm, lengths) for f in starts]
    segments = [seg for chunk in per_start for seg in chunk]
    counts = {int(length): 0 for length in lengths}
    for length, _, _ in segments:
        counts[int(length)] += 1
    if not segments:
        logger.warning(
            "no segment fits the trajectory",
            extra={"fields": {"n_poses": len(gt), "distance": float(dist[-1]), "min_length": min(lengths)}},
        )
        return SegmentErrors(0.0, 0.0, counts)
    t_err = math.fsum(seg[2] for seg in segments) / len(segments)
    r_err = math.fsum(seg[1] for seg in segments) / len(segments)
    return SegmentErrors(t_err * 100.0, r_err / math.pi * 180.0 * 100.0, counts)


@dataclass(frozen=True)
class EvalReport:
    t_err: float
    r_err: float
    ate: float
    rpe_t: float
    rpe_r: float
    alignment: AlignmentMode = AlignmentMode.NONE
    n_segments_per_length: Dict[int, int] = field(default_factory=dict)

    @property
    def segments_empty(self) -> bool:
        return sum(self.n_segments_per_length.values()) == 0

    def metrics(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRICS}

    def to_text(self) -> str:
        """``key=value`` lines with metrics in 6-decimal fixed point."""
        lines = [f"alignment={self.alignment.value}"]
        lines += [f"{name}={value:.6f}" for name, value in self.metrics().items()]
        lines += [f"segments_{length}={count}" for length, count in sorted(self.n_segments_per_length.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path: Union[str, Path] = "<report>") -> EvalReport:
        values: Dict[str, float] = {}
        counts: Dict[int, int] = {}
        alignment = AlignmentMode.NONE
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ParseError(path, lineno, f"expected key=value, got {line!r}")
            key = key.strip()
            if key != "alignment" and key not in METRICS and not key.startswith("segments_"):
                raise ParseError(path, lineno, f"unknown key {key!r}")
            try:
                if key == "alignment":
                    alignment = AlignmentMode.parse(raw.strip())
                elif key in METRICS:
                    values[key] = float(raw)
                else:
                    counts[int(key[len("segments_") :])] = int(raw)
            except ValueError:
                raise ParseError(path, lineno, f"bad value for {key!r}: {raw.strip()!r}") from None
        missing = [m for m in METRICS if m not in values]
        if missing:
            raise ParseError(path, None, f"missing metrics {missing}")
        return cls(alignment=alignment, n_segments_per_length=counts, **values)

    def to_dict(self) -> Dict[str, object]:
        return {
            **self.metrics(),
            "alignment": self.alignment.value,
            "n_segments_per_length": {str(k): v for k, v in sorted(self.n_segments_per_length.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> EvalReport:
        counts = data.get("n_segments_per_length", {})
        return cls(
            alignment=AlignmentMode.parse(str(data.get("alignment", "none"))),
            n_segments_per_length={int(k): int(v) for k, v in dict(counts).items()},  # type: ignore[call-overload]
            **{name: float(data[name]) for name in METRICS},  # type: ignore[arg-type]
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def mean(cls, reports: Sequence[EvalReport]) -> EvalReport:
        """Per-metric mean over sequences; segment counts are summed."""
        if not reports:
            msg = "cannot average an empty list of reports"
            raise InvalidArgumentError(msg)
        counts: Dict[int, int] = {}
        for report in reports:
            for length, count in report.n_segments_per_length.items():
                counts[length] = counts.get(length, 0) + count
        values = {name: math.fsum(getattr(r, name) for r in reports) / len(reports) for name in METRICS}
        return cls(alignment=reports[0].alignment, n_segments_per_length=counts, **values)


def evaluate(
    pred: Trajectory,
    gt: Trajectory,
    mode: Union[str, AlignmentMode] = AlignmentMode.SIMILARITY_7DOF,
    lengths: Sequence[float] = DEFAULT_LENGTHS,
    stride: int = DEFAULT_STRIDE,
    threads: int = 1,
) -> EvalReport:
    mode = AlignmentMode.parse(mode)
    aligned, _ = align_trajectory(pred, gt, mode)
    segments = kitti_segment_errors(aligned, gt, lengths, stride, threads)
    diff = aligned.positions - gt.positions
    rpe_t, rpe_r = rpe(aligned, gt) if len(gt) >= 2 else (0.0, 0.0)
    report = EvalReport(
        t_err=segments.t_err,
        r_err=segments.r_err,
        ate=float(np.sqrt(np.mean(np.sum(diff * diff, axis=1)))),
        rpe_t=rpe_t,
        rpe_r=rpe_r,
        alignment=mode,
        n_segments_per_length=segments.n_segments_per_length,
    )
    logger.info("evaluated", extra={"fields": {"n_poses": len(gt), "alignment": mode.value, **report.metrics()}})
    return report


def evaluate_sequences(
    pred_dir: Union[str, Path],
    gt_dir: Union[str, Path],
    sequences: Sequence[str],
    mode: Union[str, AlignmentMode] = AlignmentMode.SIMILARITY_7DOF,
    lengths: Sequence[float] = DEFAULT_LENGTHS,
    stride: int = DEFAULT_STRIDE,
    threads: int = 1,
) -> Tuple[Dict[str, EvalReport], EvalReport]:
    """Evaluate ``<seq>.txt`` from both directories for every sequence and
    return the per-sequence reports plus their mean."""
    if not sequences:
        msg = "no sequences to evaluate"
        raise InvalidArgumentError(msg)
    reports: Dict[str, EvalReport] = {}
    for seq in sequences:
        pred_path = Path(pred_dir) / f"{seq}.txt"
        gt_path = Path(gt_dir) / f"{seq}.txt"
        for path in (pred_path, gt_path):
            if not path.is_file():
                raise ParseError(path, None, "pose file not found")
        reports[seq] = evaluate(read_kitti_poses(pred_path), read_kitti_poses(gt_path), mode, lengths, stride, threads)
    return reports, EvalReport.mean(list(reports.values()))

