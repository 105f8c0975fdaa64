"""
CSV Exports and Clip-Motion Files
=================================

CSV files always start with a header row:

- trajectories: ``frame,x,y,z``
- reports: ``metric,value`` with 6-decimal fixed-point values
- clip pairs: ``pair,first_start,second_start,shared_motions``

Clip-motion files hold one whitespace-separated line per motion estimate,
``clip frame0 w rx ry rz tx ty tz``, with clips in batch order.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .atomic import atomic_open, atomic_write_text
from .clips import Clip, ClipPair
from .errors import InvalidArgumentError, ParseError
from .kitti_eval import EvalReport
from .se3 import Trajectory

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CLIP_MOTION_HEADER = "# clip frame0 w rx ry rz tx ty tz"


def export_trajectory_csv(traj: Trajectory, path: PathLike) -> None:
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "x", "y", "z"])
        for k, pos in enumerate(traj.positions):
            writer.writerow([k, *(f"{v:.9f}" for v in pos)])


def export_report_csv(report: EvalReport, path: PathLike) -> None:
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in report.metrics().items():
            writer.writerow([name, f"{value:.6f}"])


def export_csv(obj: Union[Trajectory, EvalReport], path: PathLike) -> None:
    if isinstance(obj, Trajectory):
        export_trajectory_csv(obj, path)
    elif isinstance(obj, EvalReport):
        export_report_csv(obj, path)
    else:
        msg = f"cannot export {type(obj).__name__} to CSV"
        raise InvalidArgumentError(msg)
    logger.debug("csv exported", extra={"fields": {"path": str(path), "kind": type(obj).__name__}})


def read_trajectory_csv(path: PathLike) -> npt.NDArray[np.float64]:
    """Positions ``(n, 3)`` from a trajectory CSV."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame", "x", "y", "z"]:
        raise ParseError(path, 1, "expected header frame,x,y,z")
    positions = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(path, lineno, f"expected 4 columns, got {len(row)}")
        try:
            frame = int(row[0])
            positions.append([float(v) for v in row[1:]])
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric entry in {row}") from None
        if frame != lineno - 2:
            raise ParseError(path, lineno, f"frame index {frame} out of order")
    return np.array(positions, dtype=np.float64).reshape(-1, 3)


def read_report_csv(path: PathLike) -> Dict[str, float]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["metric", "value"]:
        raise ParseError(path, 1, "expected header metric,value")
    try:
        return {name: float(value) for name, value in rows[1:]}
    except ValueError:
        raise ParseError(path, None, "malformed metric row") from None


def export_clip_pairs_csv(pairs: Sequence[ClipPair], path: PathLike) -> None:
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair", "first_start", "second_start", "shared_motions"])
        for i, (first, second) in enumerate(pairs):
            shared = sorted(set(first.motion_indices) & set(second.motion_indices))
            writer.writerow([i, first.start, second.start, " ".join(str(m) for m in shared)])


def format_clip_motions(clips: Sequence[Clip], preds: npt.ArrayLike) -> str:
    arr = np.asarray(preds, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != len(clips) or arr.shape[-1] != 6:
        msg = f"predictions of shape {arr.shape} do not match {len(clips)} clips"
        raise InvalidArgumentError(msg)
    lines = [CLIP_MOTION_HEADER]
    for c, clip in enumerate(clips):
        if arr.shape[1] != clip.n_frames - 1:
            msg = f"clip {c} has {clip.n_frames - 1} motions, predictions have {arr.shape[1]}"
            raise InvalidArgumentError(msg)
        for w in range(arr.shape[1]):
            values = " ".join(f"{v:.12e}" for v in arr[c, w])
            lines.append(f"{c} {clip.start} {w} {values}")
    return "\n".join(lines) + "\n"


def write_clip_motions(path: PathLike, clips: Sequence[Clip], preds: npt.ArrayLike) -> None:
    atomic_write_text(path, format_clip_motions(clips, preds))


def parse_clip_motions(text: str, path: PathLike = "<string>") -> Tuple[List[Clip], npt.NDArray[np.float64]]:
    """Clips (by ``frame0`` and motion count) and ``(n_clips, N_f - 1, 6)``."""
    rows: Dict[int, Tuple[int, List[List[float]]]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 9:
            raise ParseError(path, lineno, f"expected 9 values, got {len(tokens)}")
        try:
            clip_id, frame0, w = (int(t) for t in tokens[:3])
            values = [float(t) for t in tokens[3:]]
        except ValueError:
            raise ParseError(path, lineno, "malformed clip motion line") from None
        if not np.all(np.isfinite(values)):
            raise ParseError(path, lineno, "non-finite motion value")
        if clip_id not in rows:
            if clip_id != len(rows):
                raise ParseError(path, lineno, f"clip {clip_id} out of order, expected {len(rows)}")
            rows[clip_id] = (frame0, [])
        start, motions = rows[clip_id]
        if clip_id != len(rows) - 1:
            raise ParseError(path, lineno, f"clip {clip_id} is not contiguous")
        if frame0 != start:
            raise ParseError(path, lineno, f"frame0 {frame0} differs from {start} for clip {clip_id}")
        if w != len(motions):
            raise ParseError(path, lineno, f"motion position {w} out of order, expected {len(motions)}")
        motions.append(values)
    if not rows:
        raise ParseError(path, None, "no clip motions")
    counts = {len(m) for _, m in rows.values()}
    if len(counts) != 1:
        raise ParseError(path, None, f"clips have different motion counts {sorted(counts)}")
    n_motions = counts.pop()
    clips = [Clip.starting_at(start, n_motions + 1) for start, _ in rows.values()]
    preds = np.array([m for _, m in rows.values()], dtype=np.float64)
    return clips, preds


def read_clip_motions(path: PathLike) -> Tuple[List[Clip], npt.NDArray[np.float64]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, None, f"cannot read clip motions ({exc.strerror})") from None
    return parse_clip_motions(text, path)
