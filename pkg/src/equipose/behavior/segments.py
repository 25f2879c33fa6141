"""Paired positive/negative segment extraction and subject-wise splitting."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParseError
from ..lifting import PoseSequence3D
from ..seeding import rng
from .annotations import AnnotationSet

log = logging.getLogger(__name__)

SEGMENT_LENGTH = 200
SEGMENT_HEADER = ["subject", "pain_state", "behavior", "pair_id", "label", "start_frame", "split"]
SPLITS = ("train", "val", "test")


@dataclass
class Segment:
    subject: str
    pain_state: str
    behavior: str
    label: int
    start: int
    pair_id: int = 0
    split: str = "train"
    length: int = SEGMENT_LENGTH
    features: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def stop(self) -> int:
        return self.start + self.length


def featurize_frame(position: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Concatenate (x, y, z) per keypoint; absent keypoints contribute zeros."""
    position = np.asarray(position, dtype=float)
    present = np.asarray(present, dtype=bool)
    return np.where(present[..., None], position, 0.0).reshape(*present.shape[:-1], -1)


def featurize(poses: PoseSequence3D, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Feature rows ``(frames, 3 * n_keypoints)`` for a frame range."""
    sl = slice(start, stop)
    return featurize_frame(poses.position[sl], poses.present[sl])


def _window_free_starts(covered: np.ndarray, length: int) -> np.ndarray:
    """Start frames whose ``length``-frame window touches no covered frame."""
    n = covered.size
    if n < length:
        return np.empty(0, dtype=int)
    csum = np.concatenate([[0], np.cumsum(covered.astype(int))])
    hits = csum[length:] - csum[:-length]
    return np.flatnonzero(hits == 0)


def extract_segments(ann: AnnotationSet, poses: PoseSequence3D, behavior: str, seed: int, *,
                     length: int = SEGMENT_LENGTH, with_features: bool = True):
    """Build (positive, negative) segment pairs for one subject and behavior.

    Every annotated interval at least ``length`` frames long yields one
    positive segment with a uniformly drawn start inside the interval, and
    one negative segment drawn uniformly among windows of the same subject
    that do not overlap any interval of the behavior. Returns
    ``(pairs, n_skipped)``; pairs without a feasible negative are skipped.
    """
    if length < 1:
        raise ConfigError("segment length must be positive")
    n_frames = poses.n_frames
    intervals = [(s, min(e, n_frames)) for s, e in ann.of(behavior)]
    covered = np.zeros(n_frames, dtype=bool)
    for s, e in intervals:
        covered[s:e] = True
    negative_starts = _window_free_starts(covered, length)
    gen = rng(seed, "segments", ann.subject, behavior)
    pairs = []
    skipped = 0
    for s, e in intervals:
        if e - s < length:
            continue
        pos_start = int(gen.integers(s, e - length + 1))
        if negative_starts.size == 0:
            skipped += 1
            continue
        neg_start = int(negative_starts[gen.integers(negative_starts.size)])
        pid = len(pairs)
        pair = tuple(
            Segment(ann.subject, ann.pain_state, behavior, label, start, pid, length=length)
            for label, start in ((1, pos_start), (0, neg_start))
        )
        if with_features:
            for seg in pair:
                seg.features = featurize(poses, seg.start, seg.stop)
        pairs.append(pair)
    if skipped:
        log.info("%s/%s: skipped %d pair(s) without a behavior-free window",
                 ann.subject, behavior, skipped)
    return pairs, skipped


def split_segments(pairs_by_subject: dict, seed: int) -> dict:
    """Assign whole pairs to train/val/test per subject.

    A subject with more than 5 pairs gives 1 random pair to validation and 3
    to test, drawn without replacement; all other pairs train. The split is
    written into each segment and returned as ``{subject: [split per pair]}``.
    """
    out = {}
    for subject in sorted(pairs_by_subject):
        pairs = pairs_by_subject[subject]
        k = len(pairs)
        splits = ["train"] * k
        if k > 5:
            gen = rng(seed, "split", subject)
            chosen = gen.choice(k, size=4, replace=False)
            splits[int(chosen[0])] = "val"
            for i in chosen[1:]:
                splits[int(i)] = "test"
        for pair, sp in zip(pairs, splits):
            for seg in pair:
                seg.split = sp
        out[subject] = splits
    return out


def split_counts(assignment: dict) -> dict:
    """``{subject: (val, test, train)}`` pair counts of a split assignment."""
    return {s: (sp.count("val"), sp.count("test"), sp.count("train")) for s, sp in assignment.items()}


def balance_by_group(segments, seed: int, key: str = "pain_state", groups=("healthy", "painful")):
    """Downsample the larger group uniformly to the size of the smaller one."""
    by_group = {g: [s for s in segments if getattr(s, key) == g] for g in groups}
    sizes = {g: len(v) for g, v in by_group.items()}
    if min(sizes.values()) == 0:
        raise ConfigError(f"cannot balance: empty group in {sizes}")
    target = min(sizes.values())
    gen = rng(seed, "balance", key)
    out = []
    for g in groups:
        members = by_group[g]
        if len(members) > target:
            keep = np.sort(gen.choice(len(members), size=target, replace=False))
            members = [members[i] for i in keep]
        out.extend(members)
    return out


def write_segments(segments, path) -> None:
    lines = [",".join(SEGMENT_HEADER)]
    for s in segments:
        lines.append(f"{s.subject},{s.pain_state},{s.behavior},{s.pair_id},{s.label},{s.start},{s.split}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_segments(path, length: int = SEGMENT_LENGTH) -> list[Segment]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"segment file not found: {path}")
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != SEGMENT_HEADER:
            raise ParseError(f"header must be {','.join(SEGMENT_HEADER)}", row=1, path=path)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                subject, pain, behavior, pid, label, start, split = rec
                seg = Segment(subject, pain, behavior, int(label), int(start), int(pid), split, length)
            except ValueError as exc:
                raise ParseError(str(exc), row=lineno, path=path) from exc
            if seg.label not in (0, 1) or seg.split not in SPLITS:
                raise ParseError(f"invalid segment {rec}", row=lineno, path=path)
            out.append(seg)
    return out


def attach_features(segments, poses_by_subject: dict) -> None:
    for seg in segments:
        if seg.subject not in poses_by_subject:
            raise ConfigError(f"no poses for subject {seg.subject!r}")
        poses = poses_by_subject[seg.subject]
        if seg.stop > poses.n_frames:
            raise ConfigError(f"segment {seg.subject}:{seg.start} exceeds the pose sequence")
        seg.features = featurize(poses, seg.start, seg.stop)
