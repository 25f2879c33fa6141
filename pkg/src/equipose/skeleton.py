"""Skeleton definitions and pose-quality statistics."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

# keypoint group sizes of the bundled horse skeleton, in report order
HORSE28_GROUPS = {
    "Nostrils": 2,
    "Ears": 2,
    "Eyes": 2,
    "Head Top": 1,
    "Withers": 1,
    "Croup": 1,
    "Tail": 3,
    "Legs": 16,
}

HEAD_GROUPS = ("Nostrils", "Ears", "Eyes", "Head Top")


@dataclass(frozen=True)
class SkeletonDefinition:
    name: str
    keypoints: tuple[str, ...]
    groups: dict[str, str]
    edges: tuple[tuple[str, str], ...] = ()
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if len(set(self.keypoints)) != len(self.keypoints):
            dupes = sorted(k for k, n in Counter(self.keypoints).items() if n > 1)
            raise ConfigError(f"duplicate keypoint names: {dupes}")
        if set(self.groups) != set(self.keypoints):
            raise ConfigError("every keypoint needs exactly one group")
        for a, b in self.edges:
            if a not in self.groups or b not in self.groups:
                raise ConfigError(f"edge ({a}, {b}) references an undefined keypoint")
        if self.name == "horse-28":
            sizes = Counter(self.groups.values())
            if dict(sizes) != HORSE28_GROUPS:
                raise ConfigError(
                    f"skeleton claims horse-28 but group sizes are {dict(sizes)}"
                )
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.keypoints)})

    def __len__(self) -> int:
        return len(self.keypoints)

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def group_names(self) -> list[str]:
        """Groups in first-appearance order, with the horse-28 ordering preferred."""
        seen = list(dict.fromkeys(self.groups[k] for k in self.keypoints))
        known = [g for g in HORSE28_GROUPS if g in seen]
        return known + [g for g in seen if g not in HORSE28_GROUPS]

    def members(self, group: str) -> list[int]:
        return [i for i, k in enumerate(self.keypoints) if self.groups[k] == group]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "keypoints": list(self.keypoints),
            "groups": dict(self.groups),
            "edges": [list(e) for e in self.edges],
        }


def load_skeleton(path=None) -> SkeletonDefinition:
    """Load a skeleton JSON file; ``None`` loads the bundled horse-28 definition."""
    if path is None:
        text = resources.files("equipose").joinpath("data/horse-28.json").read_text()
        source = "horse-28.json"
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"skeleton file not found: {path}")
        text = path.read_text()
        source = path
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", row=exc.lineno, path=source) from exc
    unknown = set(doc) - {"name", "keypoints", "groups", "edges"}
    if unknown:
        raise ParseError(f"unknown skeleton field(s): {sorted(unknown)}", path=source)
    try:
        return SkeletonDefinition(
            name=doc["name"],
            keypoints=doc["keypoints"],
            groups=doc["groups"],
            edges=doc.get("edges", []),
        )
    except KeyError as exc:
        raise ParseError(f"missing skeleton field {exc}", path=source) from exc


_default = None


def default_skeleton() -> SkeletonDefinition:
    global _default
    if _default is None:
        _default = load_skeleton()
    return _default


# -- statistics -----------------------------------------------------------------


@dataclass
class GroupStats:
    group: str
    mean_err: float | None
    std_err: float | None
    kpp: float
    kp_no: int


@dataclass
class PoseStats:
    n_frames: int
    n_present: int
    mean_err: float | None
    std_err: float | None
    median_err: float | None
    count_mean: float
    count_std: float
    groups: list[GroupStats]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "mean_err", "std_err", "kpp", "kp_no"])
        for g in self.groups:
            w.writerow([g.group, _fmt(g.mean_err), _fmt(g.std_err), _fmt(g.kpp), g.kp_no])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"frames: {self.n_frames}   present keypoints: {self.n_present}",
            f"reprojection error [px]: {_pm(self.mean_err, self.std_err)}   "
            f"median {_num(self.median_err)}",
            f"keypoints per pose: {self.count_mean:.2f}±{self.count_std:.2f}",
            "",
            f"{'group':<10} {'Repr. Err. [px]':>18} {'KPP':>9} {'KP_no':>6}",
        ]
        for g in self.groups:
            lines.append(
                f"{g.group:<10} {_pm(g.mean_err, g.std_err):>18} {100 * g.kpp:>8.2f}% {g.kp_no:>6}"
            )
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def _pm(m, s) -> str:
    return "n/a" if m is None else f"{m:.2f}±{s:.2f}"


def _mean_std(values: np.ndarray):
    if values.size == 0:
        return None, None
    return float(values.mean()), float(values.std())


def pose_statistics(seq) -> PoseStats:
    """Aggregate reprojection error and keypoint presence of a lifted sequence.

    Standard deviations are population (ddof=0) values. KPP of a group is the
    mean over its members of the fraction of frames in which the member is
    present.
    """
    present = np.asarray(seq.present, dtype=bool)
    if present.ndim != 2 or present.shape[0] == 0:
        raise ConfigError("cannot compute statistics of an empty pose sequence")
    err = np.asarray(seq.reproj_error, dtype=float)
    n_frames = present.shape[0]
    present_err = err[present]
    mean, std = _mean_std(present_err)
    median = float(np.median(present_err)) if present_err.size else None
    counts = present.sum(axis=1)
    skel = seq.skeleton
    groups = []
    for g in skel.group_names:
        idx = skel.members(g)
        sub = present[:, idx]
        gm, gs = _mean_std(err[:, idx][sub])
        kpp = float(np.mean(sub.sum(axis=0) / n_frames))
        groups.append(GroupStats(g, gm, gs, kpp, len(idx)))
    return PoseStats(
        n_frames=n_frames,
        n_present=int(present.sum()),
        mean_err=mean,
        std_err=std,
        median_err=median,
        count_mean=float(counts.mean()),
        count_std=float(counts.std()),
        groups=groups,
    )
