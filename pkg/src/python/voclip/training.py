"""
Toy Training Runs
=================

Seeded end-to-end runs on a synthetic sequence: the first
``n_frames - test_frames`` frames are cut into overlapped clip pairs for
training, the remaining frames are held out and evaluated once after the
last step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .atomic import atomic_write_text
from .checkpoint import save_checkpoint
from .clips import Clip, ClipPairBatch, assemble_batches, sample_clip_pairs, target_array
from .config import RunConfig
from .errors import DegenerateAlignmentError, InvalidArgumentError
from .kitti_eval import AlignmentMode, EvalReport, evaluate
from .losses import LossBreakdown
from .model import ModelConfig, TrainState, forward_batch, init_params, param_arrays, train_step
from .optim import AdamState
from .poses import write_kitti_poses
from .se3 import Pose6DoF, Trajectory, absolute_to_relative, relative_to_absolute
from .synthetic import generate_synthetic_frames

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.npz"
REPORT_NAME = "report.txt"
PREDICTION_NAME = "pred_test.txt"
GT_NAME = "gt_test.txt"


@dataclass(frozen=True)
class TrainBatch:
    clips: Tuple[Clip, ...]
    frames: npt.NDArray[np.float64]
    targets: npt.NDArray[np.float64]
    pairs: List[Tuple[int, int]]


@dataclass
class TrainSummary:
    loss_log: List[LossBreakdown]
    report: EvalReport
    checkpoint: Path
    n_batches: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "steps": len(self.loss_log),
            "n_batches": self.n_batches,
            "first": self.loss_log[0].to_dict() if self.loss_log else None,
            "last": self.loss_log[-1].to_dict() if self.loss_log else None,
            "report": self.report.to_dict(),
            "checkpoint": str(self.checkpoint),
        }


def clip_frames(clips: Sequence[Clip], frames: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Stack the frames of every clip: ``(len(clips), N_f, C, H, W)``."""
    for clip in clips:
        if clip.start < 0 or clip.frame_indices[-1] >= len(frames):
            msg = f"clip frames {clip.frame_indices} outside {len(frames)} rendered frames"
            raise InvalidArgumentError(msg)
    return np.stack([frames[list(clip.frame_indices)] for clip in clips])


def make_train_batch(batch: ClipPairBatch, frames: npt.NDArray[np.float64], gt: Trajectory) -> TrainBatch:
    clips = batch.clips
    return TrainBatch(
        clips=clips,
        frames=clip_frames(clips, frames),
        targets=target_array(clips, gt),
        pairs=batch.pairs,
    )


def integrate_clip_predictions(
    clips: Sequence[Clip], preds: npt.ArrayLike, n_frames_total: int
) -> Trajectory:
    """Average every motion's estimates over the clips holding it and
    integrate the averaged motions from the identity pose.

    Every motion ``1 .. n_frames_total - 1`` must be covered by some clip.
    """
    arr = np.asarray(preds, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != len(clips) or arr.shape[-1] != 6:
        msg = f"predictions of shape {arr.shape} do not match {len(clips)} clips"
        raise InvalidArgumentError(msg)
    sums = np.zeros((n_frames_total - 1, 6))
    counts = np.zeros(n_frames_total - 1, dtype=np.int64)
    for c, clip in enumerate(clips):
        for w, motion in enumerate(clip.motion_indices):
            if not 1 <= motion < n_frames_total:
                msg = f"clip {clip.frame_indices} outside a sequence of {n_frames_total} frames"
                raise InvalidArgumentError(msg)
            sums[motion - 1] += arr[c, w]
            counts[motion - 1] += 1
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        msg = f"motions {(missing + 1).tolist()} are not covered by any clip"
        raise InvalidArgumentError(msg)
    averaged = sums / counts[:, np.newaxis]
    return relative_to_absolute([Pose6DoF.from_vector(v) for v in averaged])


def split_sequence(
    gt: Trajectory, frames: npt.NDArray[np.float64], test_frames: int
) -> Tuple[Tuple[Trajectory, npt.NDArray[np.float64]], Tuple[Trajectory, npt.NDArray[np.float64]]]:
    """``((train_gt, train_frames), (test_gt, test_frames))``; the test
    trajectory is re-based to start at the identity pose."""
    n_train = len(gt) - test_frames
    if n_train < 2 or test_frames < 2:
        msg = f"cannot hold out {test_frames} of {len(gt)} frames"
        raise InvalidArgumentError(msg)
    train_gt = Trajectory(gt.poses[:n_train])
    test_gt = relative_to_absolute(absolute_to_relative(Trajectory(gt.poses[n_train:])))
    return (train_gt, frames[:n_train]), (test_gt, frames[n_train:])


def predict_sequence(
    frames: npt.NDArray[np.float64], state: TrainState, cfg: ModelConfig
) -> Tuple[List[Clip], npt.NDArray[np.float64]]:
    """Run the model on every stride-1 window of ``frames``."""
    n = cfg.n_frames
    if len(frames) < n:
        msg = f"need at least {n} frames to predict, got {len(frames)}"
        raise InvalidArgumentError(msg)
    clips = [Clip.starting_at(s, n) for s in range(len(frames) - n + 1)]
    preds = forward_batch(clip_frames(clips, frames), state.params, cfg)
    return clips, preds.numpy().astype(np.float64)


def _final_report(pred: Trajectory, gt: Trajectory, cfg: RunConfig, threads: int) -> EvalReport:
    mode = AlignmentMode.parse(cfg.eval.align)
    try:
        return evaluate(pred, gt, mode, cfg.eval.lengths, cfg.eval.stride, threads)
    except DegenerateAlignmentError as exc:
        logger.warning(
            "alignment degenerate, evaluating unaligned",
            extra={"fields": {"alignment": mode.value, "reason": str(exc)}},
        )
        return evaluate(pred, gt, AlignmentMode.NONE, cfg.eval.lengths, cfg.eval.stride, threads)


def run_train_toy(cfg: RunConfig, out_dir: Union[str, Path], threads: int = 1) -> TrainSummary:
    """Train the toy model for ``cfg.optim.steps`` steps, cycling through the
    shuffled batches, then checkpoint and evaluate on the held-out frames."""
    out = Path(out_dir)
    gt, _, frames = generate_synthetic_frames(cfg.data.synthetic, cfg.model)
    (train_gt, train_frames), (test_gt, test_frames) = split_sequence(gt, frames, cfg.data.test_frames)
    pairs = sample_clip_pairs(len(train_gt), cfg.sampler, "synthetic")
    if pairs.too_short:
        msg = f"training split of {len(train_gt)} frames holds no clip pair of {cfg.model.n_frames} frames"
        raise InvalidArgumentError(msg)
    batches = assemble_batches(pairs, cfg.sampler)
    logger.info(
        "training started",
        extra={
            "fields": {
                "seed": cfg.seed,
                "alpha": cfg.loss.alpha,
                "steps": cfg.optim.steps,
                "n_batches": len(batches),
                "train_frames": len(train_gt),
                "test_frames": len(test_gt),
            }
        },
    )
    train_batches = [make_train_batch(b, train_frames, train_gt) for b in batches]
    params = init_params(cfg.model, cfg.seed, cfg.optim.dtype)
    state = TrainState(params, AdamState.zeros_like(param_arrays(params)))
    loss_log: List[LossBreakdown] = []
    for step in range(cfg.optim.steps):
        batch = train_batches[step % len(train_batches)]
        state, breakdown = train_step(
            state, batch.frames, batch.targets, cfg.model, cfg.loss, cfg.optim, batch.pairs
        )
        loss_log.append(breakdown)
        logger.info(
            "step",
            extra={"fields": {"step": step + 1, "mse": breakdown.mse, "mc": breakdown.mc, "total": breakdown.total}},
        )

    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / CHECKPOINT_NAME
    save_checkpoint(checkpoint, param_arrays(state.params), state.optimizer)
    clips, preds = predict_sequence(test_frames, state, cfg.model)
    pred_traj = integrate_clip_predictions(clips, preds, len(test_gt))
    write_kitti_poses(pred_traj, out / PREDICTION_NAME)
    write_kitti_poses(test_gt, out / GT_NAME)
    report = _final_report(pred_traj, test_gt, cfg, threads)
    atomic_write_text(out / REPORT_NAME, report.to_text())
    return TrainSummary(loss_log=loss_log, report=report, checkpoint=checkpoint, n_batches=len(batches))

