"""
Motion Consistency Loss
=======================

The training objective combines the regression error of every predicted
motion with a penalty on disagreement between estimates of the same motion
made from overlapping clips::

    L = L_MSE + alpha * L_MC

Prediction arrays have shape ``(n_clips, N_f - 1, 6)`` (a single clip may be
given as ``(N_f - 1, 6)``); row ``w`` of clip ``c`` is the 6-DoF estimate of
the clip's ``w``-th motion. Clips are paired by index, by default with the
first-half/second-half batch layout produced by :mod:`voclip.clips`.

Closed form for a group of consecutive clips, newest clip at offset ``m = 0``::

    L_MC = sum_{j=1}^{2N_f-5} sum_{m=mu}^{lambda} sum_{n=m+1}^{gamma}
           || y[k-m][k-j] - y[k-n][k-j] ||^2
    mu = max(j - N_f + 2, 0), lambda = min(N_f - 3, j - 1), gamma = min(N_f - 2, j)

Iteration order is fixed to ``j`` outer, ``m`` middle, ``n`` inner.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .clips import Clip, Occurrence, OverlapMap, half_split_pairs, overlap_map
from .errors import InvalidArgumentError, ShapeError

logger = logging.getLogger(__name__)

PredictedMotions = npt.NDArray[np.float64]
Pairs = Sequence[Tuple[int, int]]

MC_REDUCTIONS = ("mean", "sum")
ORACLE_TOL = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    mc_reduction: str = "mean"

    def __post_init__(self) -> None:
        if not math.isfinite(self.alpha) or self.alpha < 0.0:
            msg = f"alpha must be a finite non-negative number, got {self.alpha}"
            raise InvalidArgumentError(msg)
        if self.mc_reduction not in MC_REDUCTIONS:
            msg = f"mc_reduction must be one of {MC_REDUCTIONS}, got {self.mc_reduction!r}"
            raise InvalidArgumentError(msg)

    @classmethod
    def model_a(cls) -> LossConfig:
        """MSE only."""
        return cls(alpha=0.0)

    @classmethod
    def model_b(cls) -> LossConfig:
        return cls(alpha=1.0)

    @classmethod
    def model_c(cls) -> LossConfig:
        return cls(alpha=10.0)

    @classmethod
    def for_model(cls, name: str) -> LossConfig:
        presets = {"A": cls.model_a, "B": cls.model_b, "C": cls.model_c}
        try:
            return presets[name.upper()]()
        except KeyError:
            msg = f"unknown model preset {name!r}, expected one of A, B, C"
            raise InvalidArgumentError(msg) from None


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    mc: float
    total: float
    n_consistency_pairs: int

    def to_dict(self) -> Dict[str, Union[float, int]]:
        return {
            "mse": self.mse,
            "mc": self.mc,
            "total": self.total,
            "n_consistency_pairs": self.n_consistency_pairs,
        }


def _as_batch(preds: npt.ArrayLike, what: str) -> PredictedMotions:
    arr = np.asarray(preds, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3 or arr.shape[-1] != 6 or arr.shape[1] < 1:
        msg = f"{what} must have shape (n_clips, N_f - 1, 6), got {arr.shape}"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(arr)):
        msg = f"{what} has non-finite entries"
        raise InvalidArgumentError(msg)
    return arr


def _targets_array(targets: object) -> npt.ArrayLike:
    if isinstance(targets, (list, tuple)) and targets and hasattr(targets[0], "as_vector"):
        return np.stack([t.as_vector() for t in targets])  # type: ignore[attr-defined]
    return targets  # type: ignore[return-value]


def default_pairs(n_clips: int) -> List[Tuple[int, int]]:
    """A lone clip has no partner; otherwise the half-split layout."""
    return [] if n_clips == 1 else half_split_pairs(n_clips)


def mse_loss(pred: npt.ArrayLike, target: object) -> float:
    """Mean over clips of ``(1 / (N_f - 1)) * sum_w ||y_w - y_hat_w||^2``."""
    p = _as_batch(pred, "pred")
    t = _as_batch(_targets_array(target), "target")
    if p.shape != t.shape:
        raise ShapeError("mse_loss", p.shape, t.shape)
    per_clip = np.sum((t - p) ** 2, axis=-1).mean(axis=-1)
    return float(per_clip.mean())


def closed_form_terms(
    n_frames: int, n_clips: Optional[int] = None
) -> List[Tuple[int, int, int, int, int]]:
    """Index tuples ``(j, m, n, w_m, w_n)`` of the closed-form sum.

    Offsets ``m``/``n`` count clips back from the newest one; ``w_m`` is the
    position of motion ``k - j`` inside clip ``k - m``. Terms referring to
    clips beyond ``n_clips`` (default ``N_f - 1``) are dropped.
    """
    group = n_frames - 1 if n_clips is None else n_clips
    terms = []
    for j in range(1, 2 * n_frames - 4):
        mu = max(j - n_frames + 2, 0)
        lam = min(n_frames - 3, j - 1)
        gamma = min(n_frames - 2, j)
        for m in range(mu, lam + 1):
            for n in range(m + 1, gamma + 1):
                if n >= group:
                    continue
                terms.append((j, m, n, m + n_frames - 2 - j, n + n_frames - 2 - j))
    return terms


def mc_loss_closed(pair_preds: Sequence[npt.ArrayLike], n_frames: int) -> float:
    """Closed-form consistency loss of one group of consecutive clips.

    ``pair_preds`` lists the clips oldest first, each shifted by one frame
    from the previous one (a designated pair is ``(first, second)``).
    Groups longer than ``N_f - 1`` clips are summed window by window: every
    clip is taken as the newest and compared with the older clips it
    overlaps, so each overlapping pair is counted once.
    """
    if n_frames < 3:
        return 0.0
    group = [np.asarray(p, dtype=np.float64) for p in pair_preds]
    for p in group:
        if p.shape != (n_frames - 1, 6):
            raise ShapeError("mc_loss_closed", p.shape, (n_frames - 1, 6))
    total = 0.0
    if len(group) <= n_frames - 1:
        newest = len(group) - 1
        for _, m, n, w_m, w_n in closed_form_terms(n_frames, len(group)):
            diff = group[newest - m][w_m] - group[newest - n][w_n]
            total += float(diff @ diff)
        return total
    for newest in range(1, len(group)):
        for _, m, n, w_m, w_n in closed_form_terms(n_frames, newest + 1):
            if m != 0:
                continue
            diff = group[newest][w_m] - group[newest - n][w_n]
            total += float(diff @ diff)
    return total


def mc_loss_oracle(
    overlaps: OverlapMap, preds: Union[npt.ArrayLike, Mapping[int, npt.ArrayLike]]
) -> float:
    """Brute force: for every motion seen at least twice inside one
    consistency group, sum ``||a - b||^2`` over unordered occurrence pairs."""
    total = 0.0
    for _, _, occs in overlaps.shared_groups():
        rows = [_lookup(preds, occ) for occ in occs]
        for a in range(len(rows)):
            for b in range(a + 1, len(rows)):
                diff = rows[a] - rows[b]
                total += float(diff @ diff)
    return total


def _lookup(
    preds: Union[npt.ArrayLike, Mapping[int, npt.ArrayLike]], occ: Occurrence
) -> np.ndarray:
    if isinstance(preds, Mapping):
        if occ.clip_id not in preds:
            msg = f"no prediction for clip {occ.clip_id}"
            raise InvalidArgumentError(msg)
        clip = np.asarray(preds[occ.clip_id], dtype=np.float64)
    else:
        arr = np.asarray(preds, dtype=np.float64)
        if occ.clip_id >= arr.shape[0]:
            msg = f"no prediction for clip {occ.clip_id}"
            raise InvalidArgumentError(msg)
        clip = arr[occ.clip_id]
    return clip[occ.w]


def pair_overlap_map(pairs: Pairs, n_frames: int, n_clips: int) -> OverlapMap:
    """Overlap map of a paired batch whose clips carry no frame indices:
    each pair is placed at frames ``0..N_f`` in its own group."""
    clips: List[Clip] = [Clip.starting_at(0, n_frames)] * n_clips
    for a, b in pairs:
        clips[a] = Clip.starting_at(0, n_frames)
        clips[b] = Clip.starting_at(1, n_frames)
    full = overlap_map(clips)
    group_of = {i: -1 - i for i in range(n_clips)}
    for group, (a, b) in enumerate(pairs):
        group_of[a] = group
        group_of[b] = group
    return OverlapMap(entries=full.entries, group_of=group_of)


def mc_loss_batch(
    preds: npt.ArrayLike,
    n_frames: int,
    pairs: Optional[Pairs] = None,
    reduction: str = "mean",
) -> Tuple[float, int]:
    """Consistency loss over the designated pairs of a batch.

    Returns ``(value, n_consistency_pairs)``. For ``N_f > 3`` the closed form
    is cross-checked against the brute-force oracle, which wins on mismatch.
    """
    p = _as_batch(preds, "preds")
    pairs = default_pairs(p.shape[0]) if pairs is None else list(pairs)
    if n_frames < 3 or not pairs:
        return 0.0, 0
    total = 0.0
    for a, b in pairs:
        total += mc_loss_closed((p[a], p[b]), n_frames)
    n_terms = len(closed_form_terms(n_frames, 2)) * len(pairs)
    if n_frames > 3:
        oracle = mc_loss_oracle(pair_overlap_map(pairs, n_frames, p.shape[0]), p)
        if abs(total - oracle) > ORACLE_TOL * (1.0 + abs(oracle)):
            logger.warning(
                "closed-form consistency loss disagrees with oracle",
                extra={"fields": {"closed": total, "oracle": oracle, "n_frames": n_frames}},
            )
            total = oracle
    if reduction == "mean":
        total /= len(pairs)
    return total, n_terms


def total_loss(
    preds: npt.ArrayLike,
    targets: object,
    cfg: LossConfig,
    pairs: Optional[Pairs] = None,
) -> LossBreakdown:
    """``total = mse + alpha * mc`` evaluated in that order."""
    p = _as_batch(preds, "preds")
    mse = mse_loss(p, targets)
    mc, n_terms = mc_loss_batch(p, p.shape[1] + 1, pairs, cfg.mc_reduction)
    return LossBreakdown(mse=mse, mc=mc, total=mse + cfg.alpha * mc, n_consistency_pairs=n_terms)


def loss_gradient(
    preds: npt.ArrayLike,
    targets: object,
    cfg: LossConfig,
    pairs: Optional[Pairs] = None,
) -> PredictedMotions:
    """Analytic ``dL/d y_hat`` with the shape of ``preds``.

    Contributions are accumulated clip by clip in pair order so the result is
    bitwise reproducible.
    """
    raw = np.asarray(preds, dtype=np.float64)
    p = _as_batch(raw, "preds")
    t = _as_batch(_targets_array(targets), "targets")
    if p.shape != t.shape:
        raise ShapeError("loss_gradient", p.shape, t.shape)
    n_clips, n_motions, _ = p.shape
    n_frames = n_motions + 1
    grad = 2.0 * (p - t) / (n_motions * n_clips)
    pairs = default_pairs(n_clips) if pairs is None else list(pairs)
    if cfg.alpha > 0.0 and n_frames >= 3 and pairs:
        scale = cfg.alpha / len(pairs) if cfg.mc_reduction == "mean" else cfg.alpha
        for a, b in pairs:
            # clip b is the newer clip of the pair (offset 0)
            for _, m, n, w_m, w_n in closed_form_terms(n_frames, 2):
                ia, wa = (b, w_m) if m == 0 else (a, w_m)
                ib, wb = (b, w_n) if n == 0 else (a, w_n)
                diff = p[ia, wa] - p[ib, wb]
                grad[ia, wa] += 2.0 * scale * diff
                grad[ib, wb] -= 2.0 * scale * diff
    return grad.reshape(raw.shape)
