"""
Overlapped Clip Sampling
========================

Consecutive clips of ``N_f`` frames shifted by one frame share ``N_f - 1``
frames and ``N_f - 2`` motions. Training batches are built from such pairs:
pairs are shuffled, grouped ``batch_size`` at a time, and each batch is laid
out as all first clips followed by all second clips, so clip ``i`` and clip
``i + batch_size`` of a batch form a designated pair.

Motion ``i`` maps frame ``i - 1`` to frame ``i``; a clip starting at frame
``s`` therefore holds motions ``s + 1 .. s + N_f - 1``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError
from .se3 import Pose6DoF, Trajectory, relative_transform, transform_to_pose

logger = logging.getLogger(__name__)

ClipPair = Tuple["Clip", "Clip"]


@dataclass(frozen=True)
class SamplerConfig:
    n_frames: int = 3
    stride: int = 1
    batch_size: int = 2
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_frames < 2:
            msg = f"n_frames must be >= 2, got {self.n_frames}"
            raise InvalidArgumentError(msg)
        if self.stride < 1:
            msg = f"stride must be >= 1, got {self.stride}"
            raise InvalidArgumentError(msg)
        if self.batch_size < 1:
            msg = f"batch_size must be >= 1, got {self.batch_size}"
            raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class Clip:
    """A window of consecutive frames from one sequence."""

    frame_indices: Tuple[int, ...]
    sequence: str = ""

    def __post_init__(self) -> None:
        frames = tuple(int(f) for f in self.frame_indices)
        if len(frames) < 2:
            msg = f"a clip needs at least 2 frames, got {len(frames)}"
            raise InvalidArgumentError(msg)
        if any(b != a + 1 for a, b in zip(frames, frames[1:])):
            msg = f"clip frames must be consecutive, got {frames}"
            raise InvalidArgumentError(msg)
        object.__setattr__(self, "frame_indices", frames)

    @classmethod
    def starting_at(cls, start: int, n_frames: int, sequence: str = "") -> Clip:
        return cls(tuple(range(start, start + n_frames)), sequence)

    @property
    def n_frames(self) -> int:
        return len(self.frame_indices)

    @property
    def start(self) -> int:
        return self.frame_indices[0]

    @property
    def motion_indices(self) -> Tuple[int, ...]:
        """Global motion index of each local position ``w``."""
        return self.frame_indices[1:]

    def shifted(self, offset: int = 1) -> Clip:
        return Clip(tuple(f + offset for f in self.frame_indices), self.sequence)


@dataclass(frozen=True)
class ClipPairBatch:
    """``first_half[i]`` and ``second_half[i]`` are consecutive clips."""

    first_half: Tuple[Clip, ...]
    second_half: Tuple[Clip, ...]

    def __post_init__(self) -> None:
        first, second = tuple(self.first_half), tuple(self.second_half)
        if len(first) != len(second):
            msg = f"halves differ in size: {len(first)} vs {len(second)}"
            raise InvalidArgumentError(msg)
        for a, b in zip(first, second):
            if b != a.shifted(1):
                msg = f"clips {a.frame_indices} and {b.frame_indices} are not consecutive"
                raise InvalidArgumentError(msg)
        object.__setattr__(self, "first_half", first)
        object.__setattr__(self, "second_half", second)

    def __len__(self) -> int:
        return len(self.first_half)

    @property
    def clips(self) -> Tuple[Clip, ...]:
        """All ``2 * len(self)`` clips in processing order."""
        return self.first_half + self.second_half

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        """Clip ids (positions in :attr:`clips`) of each designated pair."""
        return half_split_pairs(2 * len(self))


def half_split_pairs(n_clips: int) -> List[Tuple[int, int]]:
    """Pairs ``(i, i + n/2)`` of the first-half/second-half batch layout."""
    if n_clips % 2:
        msg = f"a paired batch needs an even number of clips, got {n_clips}"
        raise InvalidArgumentError(msg)
    half = n_clips // 2
    return [(i, i + half) for i in range(half)]


@dataclass(frozen=True)
class Occurrence:
    clip_id: int
    w: int


@dataclass(frozen=True)
class OverlapMap:
    """Where each motion index appears in a batch.

    ``group_of`` assigns clip ids to consistency groups (the designated pairs);
    only occurrences inside one group are compared. When it is empty every
    clip belongs to a single group.
    """

    entries: Mapping[int, Tuple[Occurrence, ...]]
    group_of: Mapping[int, int] = field(default_factory=dict)

    def occurrences(self, motion_index: int) -> Tuple[Occurrence, ...]:
        return self.entries.get(motion_index, ())

    def shared_groups(self) -> List[Tuple[int, int, Tuple[Occurrence, ...]]]:
        """``(group, motion_index, occurrences)`` for every motion seen at
        least twice inside one group, ordered by group then motion."""
        grouped: Dict[Tuple[int, int], List[Occurrence]] = defaultdict(list)
        for motion, occs in self.entries.items():
            for occ in occs:
                grouped[(self.group_of.get(occ.clip_id, 0), motion)].append(occ)
        return [
            (group, motion, tuple(occs))
            for (group, motion), occs in sorted(grouped.items())
            if len(occs) >= 2
        ]

    def validate(self, clips: Sequence[Clip]) -> None:
        """Check every listed occurrence re-derives its key."""
        for motion, occs in self.entries.items():
            if len(set(occs)) != len(occs):
                msg = f"duplicate occurrences for motion {motion}"
                raise InvalidArgumentError(msg)
            for occ in occs:
                if clips[occ.clip_id].motion_indices[occ.w] != motion:
                    msg = f"occurrence {occ} does not hold motion {motion}"
                    raise InvalidArgumentError(msg)


class ClipPairs(List[ClipPair]):
    """Sampled pairs in window order; ``too_short`` marks a sequence with no
    room for a single pair."""

    too_short: bool = False


def sample_clip_pairs(
    sequence_length: int, cfg: SamplerConfig, sequence: str = ""
) -> ClipPairs:
    """Sliding windows of ``N_f + 1`` frames, each split into the pair
    ``([s .. s+N_f-1], [s+1 .. s+N_f])``."""
    n = cfg.n_frames
    pairs = ClipPairs()
    if sequence_length < n + 1:
        logger.warning(
            "sequence too short for a clip pair",
            extra={"fields": {"sequence_length": sequence_length, "n_frames": n}},
        )
        pairs.too_short = True
        return pairs
    for start in range(0, sequence_length - n, cfg.stride):
        first = Clip.starting_at(start, n, sequence)
        pairs.append((first, first.shifted(1)))
    return pairs


def assemble_batches(
    pairs: Sequence[ClipPair], cfg: SamplerConfig
) -> List[ClipPairBatch]:
    """Shuffle pairs with PCG64 seeded by ``cfg.shuffle_seed`` and group them
    into batches of ``cfg.batch_size`` pairs; a short last batch is kept."""
    if not pairs:
        return []
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.shuffle_seed)))
    order = rng.permutation(len(pairs))
    shuffled = [pairs[int(i)] for i in order]
    batches: List[ClipPairBatch] = []
    for offset in range(0, len(shuffled), cfg.batch_size):
        chunk = shuffled[offset : offset + cfg.batch_size]
        batches.append(
            ClipPairBatch(
                first_half=tuple(p[0] for p in chunk),
                second_half=tuple(p[1] for p in chunk),
            )
        )
    return batches


def overlap_map(batch: Union[ClipPairBatch, Sequence[Clip]]) -> OverlapMap:
    """Index every motion occurrence of the batch.

    A plain clip sequence (no pair layout) puts each clip in its own group,
    so nothing in it is consistency-relevant.
    """
    clips: Sequence[Clip]
    group_of: Dict[int, int] = {}
    if isinstance(batch, ClipPairBatch):
        clips = batch.clips
        for group, (a, b) in enumerate(batch.pairs):
            group_of[a] = group
            group_of[b] = group
    else:
        clips = tuple(batch)
        group_of = {i: i for i in range(len(clips))}
    entries: Dict[int, List[Occurrence]] = defaultdict(list)
    for clip_id, clip in enumerate(clips):
        for w, motion in enumerate(clip.motion_indices):
            entries[motion].append(Occurrence(clip_id, w))
    return OverlapMap(
        entries={m: tuple(occ) for m, occ in sorted(entries.items())},
        group_of=group_of,
    )


def ground_truth_targets(clip: Clip, gt: Trajectory) -> List[Pose6DoF]:
    """Relative pose of every consecutive frame pair inside ``clip``."""
    last = clip.frame_indices[-1]
    if clip.start < 0 or last >= len(gt):
        msg = f"clip frames {clip.frame_indices} outside trajectory of length {len(gt)}"
        raise InvalidArgumentError(msg)
    return [
        transform_to_pose(relative_transform(gt[a], gt[b]))
        for a, b in zip(clip.frame_indices, clip.frame_indices[1:])
    ]


def target_array(clips: Sequence[Clip], gt: Trajectory) -> np.ndarray:
    """Stacked targets, shape ``(len(clips), N_f - 1, 6)``."""
    return np.stack(
        [
            np.stack([p.as_vector() for p in ground_truth_targets(clip, gt)])
            for clip in clips
        ]
    )
