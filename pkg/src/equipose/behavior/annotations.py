from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, ParseError

BEHAVIORS = ("eating", "movement", "standing")
PAIN_STATES = ("healthy", "painful")
ANNOTATION_HEADER = ["subject", "pain_state", "behavior", "start_frame", "end_frame"]


@dataclass
class AnnotationSet:
    """Behavior intervals of one subject; ``end`` is exclusive."""

    subject: str
    pain_state: str
    intervals: list[tuple[str, int, int]] = field(default_factory=list)
    labels: tuple[str, ...] = BEHAVIORS

    def __post_init__(self):
        if self.pain_state not in PAIN_STATES:
            raise ConfigError(f"pain_state must be one of {PAIN_STATES}, got {self.pain_state!r}")
        for label, start, end in self.intervals:
            if label not in self.labels:
                raise ConfigError(f"unknown behavior {label!r}")
            if not start < end:
                raise ConfigError(f"interval start {start} must precede end {end}")

    def of(self, behavior: str) -> list[tuple[int, int]]:
        return sorted((s, e) for b, s, e in self.intervals if b == behavior)


def read_annotations(path, labels=BEHAVIORS) -> dict[str, AnnotationSet]:
    """Read the annotation CSV into one :class:`AnnotationSet` per subject."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"annotation file not found: {path}")
    out: dict[str, AnnotationSet] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ANNOTATION_HEADER:
            raise ParseError(f"header must be {','.join(ANNOTATION_HEADER)}", row=1, path=path)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise ParseError(f"expected 5 fields, got {len(rec)}", row=lineno, path=path)
            subject, pain, behavior = rec[0], rec[1], rec[2]
            try:
                start, end = int(rec[3]), int(rec[4])
            except ValueError as exc:
                raise ParseError(f"unparseable frame: {exc}", row=lineno, path=path) from exc
            if pain not in PAIN_STATES or behavior not in labels or not 0 <= start < end:
                raise ParseError(f"invalid annotation {rec}", row=lineno, path=path)
            ann = out.setdefault(subject, AnnotationSet(subject, pain, [], tuple(labels)))
            if ann.pain_state != pain:
                raise ParseError(f"subject {subject!r} has conflicting pain states", row=lineno, path=path)
            ann.intervals.append((behavior, start, end))
    return out


def write_annotations(annotations, path) -> None:
    lines = [",".join(ANNOTATION_HEADER)]
    for ann in annotations:
        for behavior, start, end in sorted(ann.intervals, key=lambda r: (r[1], r[0])):
            lines.append(f"{ann.subject},{ann.pain_state},{behavior},{start},{end}")
    Path(path).write_text("\n".join(lines) + "\n")
