#!/usr/bin/env python3
"""
voclip command line
===================

Every subcommand shares ``--config``, ``--seed``, ``--threads``,
``--log-level`` and ``--out``. Exit codes: 0 on success, 1 on a usage or
validation error, 2 when a verification (gradient check, loss oracle)
fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, NoReturn, Optional, Sequence

from . import __version__
from .atomic import atomic_write_text
from .clips import ClipPairBatch, SamplerConfig, assemble_batches, overlap_map, sample_clip_pairs, target_array
from .config import RunConfig, read_config
from .errors import InvalidArgumentError, VerificationError, VoclipError
from .export import export_clip_pairs_csv, export_report_csv, export_trajectory_csv, read_clip_motions
from .gradcheck import run_gradcheck_suite
from .kitti_eval import EvalReport, align_trajectory, evaluate, evaluate_sequences
from .log import configure_logging, format_fields
from .losses import ORACLE_TOL, LossConfig, mc_loss_closed, mc_loss_oracle, total_loss
from .poses import read_kitti_poses, write_kitti_poses
from .synthetic import SHAPES, generate_synthetic
from .training import run_train_toy

logger = logging.getLogger(__name__)

THREADS_ENV = "VOCLIP_THREADS"
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VERIFICATION = 2


class VoclipArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        msg = f"{THREADS_ENV} must be an integer, got {raw!r}"
        raise InvalidArgumentError(msg) from None


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Run configuration file (key: value lines)")
    common.add_argument("--seed", type=int, help="Seed for every random choice (default: config seed)")
    common.add_argument(
        "--threads",
        type=int,
        help=f"Worker threads for segment errors (default: ${THREADS_ENV} or 1)",
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level for key=value logs on stderr",
    )
    common.add_argument("--out", type=Path, help="Output file or directory")
    return common


def _alignment_flag(parser: argparse.ArgumentParser, default: Optional[str]) -> None:
    parser.add_argument(
        "--align",
        choices=["none", "6dof", "7dof"],
        default=default,
        help="Trajectory alignment before scoring (default: config eval.align)",
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = VoclipArgumentParser(
        prog="voclip",
        description="Overlapped-clip motion consistency for monocular visual odometry",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=VoclipArgumentParser)
    sub.required = True

    synth = sub.add_parser("synth", parents=[common], help="Write synthetic gt/noisy pose files to --out DIR")
    synth.add_argument("--shape", choices=SHAPES, help="Trajectory shape")
    synth.add_argument("--n-frames", type=int, help="Number of poses")
    synth.add_argument("--step", type=float, help="Forward motion per frame in meters")
    synth.add_argument("--curvature", type=float, help="Heading change per meter in radians")
    synth.add_argument("--noise-std", type=float, help="Per-motion Gaussian noise of the noisy copy")

    sample = sub.add_parser("sample", parents=[common], help="List overlapped clip pairs (CSV to --out FILE)")
    sample.add_argument("--length", type=int, required=True, help="Sequence length in frames")
    sample.add_argument("--n-frames", type=int, help="Frames per clip (default: config model.n_frames)")
    sample.add_argument("--stride", type=int, help="Start offset between pairs")
    sample.add_argument("--batch-size", type=int, help="Pairs per batch")

    losscheck = sub.add_parser("losscheck", parents=[common], help="Loss breakdown of clip-motion predictions")
    losscheck.add_argument("--pred", type=Path, required=True, help="Predicted clip-motion file")
    target = losscheck.add_mutually_exclusive_group(required=True)
    target.add_argument("--target", type=Path, help="Target clip-motion file")
    target.add_argument("--gt", type=Path, help="Ground-truth KITTI pose file")
    _loss_flags(losscheck)

    sub.add_parser("gradcheck", parents=[common], help="Run the gradient-check suite")

    train = sub.add_parser("train-toy", parents=[common], help="Seeded toy training run into --out DIR")
    _loss_flags(train)
    train.add_argument("--steps", type=int, help="Optimizer steps (default: config optim.steps)")
    _alignment_flag(train, None)

    ev = sub.add_parser("evaluate", parents=[common], help="KITTI odometry metrics (report files to --out DIR)")
    ev.add_argument("--pred", type=Path, help="Predicted KITTI pose file")
    ev.add_argument("--gt", type=Path, help="Ground-truth KITTI pose file")
    ev.add_argument("--pred-dir", type=Path, help="Directory of predicted <seq>.txt files")
    ev.add_argument("--gt-dir", type=Path, help="Directory of ground-truth <seq>.txt files")
    ev.add_argument("--sequences", nargs="+", help="Sequences to evaluate (default: config test sequences)")
    _alignment_flag(ev, None)

    align = sub.add_parser("align", parents=[common], help="Align --pred onto --gt and write it to --out FILE")
    align.add_argument("--pred", type=Path, required=True, help="Predicted KITTI pose file")
    align.add_argument("--gt", type=Path, required=True, help="Ground-truth KITTI pose file")
    _alignment_flag(align, "7dof")

    export = sub.add_parser("export", parents=[common], help="Convert a pose file or report to CSV at --out FILE")
    source = export.add_mutually_exclusive_group(required=True)
    source.add_argument("--poses", type=Path, help="KITTI pose file")
    source.add_argument("--report", type=Path, help="Report written by evaluate")
    return parser


def _loss_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--alpha", type=float, help="Consistency weight (default: config alpha)")
    group.add_argument("--model", choices=["A", "B", "C"], help="Preset weight: A=0, B=1, C=10")


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = read_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if getattr(args, "model", None) is not None:
        cfg = cfg.with_overrides(alpha=LossConfig.for_model(args.model).alpha)
    if getattr(args, "alpha", None) is not None:
        cfg = cfg.with_overrides(alpha=args.alpha)
    return cfg


def _threads(args: argparse.Namespace) -> int:
    threads = args.threads if args.threads is not None else _default_threads()
    if threads < 1:
        msg = f"--threads must be >= 1, got {threads}"
        raise InvalidArgumentError(msg)
    return threads


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        msg = f"{args.command} needs --out"
        raise InvalidArgumentError(msg)
    return Path(args.out)


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    overrides = {
        "shape": args.shape,
        "n_frames": args.n_frames,
        "step": args.step,
        "curvature": args.curvature,
        "noise_std": args.noise_std,
    }
    spec = dataclasses.replace(cfg.data.synthetic, **{k: v for k, v in overrides.items() if v is not None})
    out = _require_out(args)
    gt, noisy = generate_synthetic(spec)
    out.mkdir(parents=True, exist_ok=True)
    write_kitti_poses(gt, out / "gt.txt")
    write_kitti_poses(noisy, out / "noisy.txt")
    logger.info("synthetic written", extra={"fields": {"out": str(out), "shape": spec.shape, "n_frames": len(gt)}})
    print(f"✅ gt: {out / 'gt.txt'}")
    print(f"✅ noisy: {out / 'noisy.txt'}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace, cfg: RunConfig) -> int:
    sampler = SamplerConfig(
        n_frames=args.n_frames if args.n_frames is not None else cfg.sampler.n_frames,
        stride=args.stride if args.stride is not None else cfg.sampler.stride,
        batch_size=args.batch_size if args.batch_size is not None else cfg.sampler.batch_size,
        shuffle_seed=cfg.sampler.shuffle_seed,
    )
    pairs = sample_clip_pairs(args.length, sampler)
    if pairs.too_short:
        print(f"0 clip pairs: {args.length} frames are too short for clips of {sampler.n_frames} frames")
        return EXIT_OK
    batches = assemble_batches(pairs, sampler)
    print(f"{len(pairs)} clip pairs in {len(batches)} batches")
    for b, batch in enumerate(batches):
        for first, second in zip(batch.first_half, batch.second_half):
            print(f"batch {b}: {list(first.frame_indices)} / {list(second.frame_indices)}")
    if args.out is not None:
        ordered = [pair for batch in batches for pair in zip(batch.first_half, batch.second_half)]
        export_clip_pairs_csv(ordered, args.out)
        print(f"✅ csv: {args.out}")
    return EXIT_OK


def cmd_losscheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    clips, preds = read_clip_motions(args.pred)
    if args.target is not None:
        target_clips, targets = read_clip_motions(args.target)
        if [c.frame_indices for c in target_clips] != [c.frame_indices for c in clips]:
            msg = "prediction and target files list different clips"
            raise InvalidArgumentError(msg)
    else:
        targets = target_array(clips, read_kitti_poses(args.gt))
    batch: Optional[ClipPairBatch] = None
    if len(clips) >= 2:
        half = len(clips) // 2
        batch = ClipPairBatch(tuple(clips[:half]), tuple(clips[half:]))
    breakdown = total_loss(preds, targets, cfg.loss)
    print(format_fields(breakdown.to_dict()))
    if batch is None:
        return EXIT_OK
    closed = sum(mc_loss_closed((preds[a], preds[b]), clips[0].n_frames) for a, b in batch.pairs)
    oracle = mc_loss_oracle(overlap_map(batch), preds)
    print(format_fields({"mc_closed": closed, "mc_oracle": oracle}))
    if abs(closed - oracle) > ORACLE_TOL * (1.0 + abs(oracle)):
        msg = f"closed-form consistency loss {closed!r} differs from oracle {oracle!r}"
        raise VerificationError(msg)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    results = run_gradcheck_suite(seed=cfg.seed, cfg=cfg.model)
    for result in results:
        print(result)
    failed = [r.name for r in results if not r.passed]
    if failed:
        msg = f"gradient checks failed: {', '.join(failed)}"
        raise VerificationError(msg)
    return EXIT_OK


def cmd_train_toy(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.steps is not None:
        cfg = cfg.with_overrides(optim=dataclasses.replace(cfg.optim, steps=args.steps))
    if args.align is not None:
        cfg = cfg.with_overrides(eval=dataclasses.replace(cfg.eval, align=args.align))
    summary = run_train_toy(cfg, _require_out(args), _threads(args))
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    mode = args.align or cfg.eval.align
    threads = _threads(args)
    single = args.pred is not None or args.gt is not None
    multi = args.pred_dir is not None or args.gt_dir is not None
    if single == multi:
        msg = "evaluate needs either --pred/--gt or --pred-dir/--gt-dir"
        raise InvalidArgumentError(msg)
    reports: Dict[str, EvalReport] = {}
    if single:
        if args.pred is None or args.gt is None:
            msg = "evaluate needs both --pred and --gt"
            raise InvalidArgumentError(msg)
        pred, gt = read_kitti_poses(args.pred), read_kitti_poses(args.gt)
        reports["report"] = evaluate(pred, gt, mode, cfg.eval.lengths, cfg.eval.stride, threads)
    else:
        if args.pred_dir is None or args.gt_dir is None:
            msg = "evaluate needs both --pred-dir and --gt-dir"
            raise InvalidArgumentError(msg)
        sequences = args.sequences or list(cfg.data.test_sequences)
        per_sequence, mean = evaluate_sequences(
            args.pred_dir, args.gt_dir, sequences, mode, cfg.eval.lengths, cfg.eval.stride, threads
        )
        reports.update({f"report_{seq}": report for seq, report in per_sequence.items()})
        reports["report_mean"] = mean
    for name, report in reports.items():
        if len(reports) > 1:
            print(f"[{name}]")
        print(report.to_text(), end="")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, report in reports.items():
            atomic_write_text(out / f"{name}.txt", report.to_text())
            export_report_csv(report, out / f"{name}.csv")
    return EXIT_OK


def cmd_align(args: argparse.Namespace, cfg: RunConfig) -> int:
    pred, gt = read_kitti_poses(args.pred), read_kitti_poses(args.gt)
    out = _require_out(args)
    aligned, alignment = align_trajectory(pred, gt, args.align)
    write_kitti_poses(aligned, out)
    print(json.dumps(alignment.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = _require_out(args)
    if args.poses is not None:
        export_trajectory_csv(read_kitti_poses(args.poses), out)
    else:
        text = Path(args.report).read_text(encoding="utf-8")
        export_report_csv(EvalReport.from_text(text, args.report), out)
    print(f"✅ csv: {out}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "losscheck": cmd_losscheck,
    "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy,
    "evaluate": cmd_evaluate,
    "align": cmd_align,
    "export": cmd_export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.log_level)
    try:
        cfg = _run_config(args)
        return COMMANDS[args.command](args, cfg)
    except VerificationError as exc:
        logger.error("verification failed", extra={"fields": {"command": args.command, "reason": str(exc)}})
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except (VoclipError, OSError) as exc:
        logger.error("command failed", extra={"fields": {"command": args.command, "error": type(exc).__name__}})
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
