"""Shared builders for test fixtures."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from equipose.lifting import PoseSequence3D
from equipose.skeleton import default_skeleton

from .fixtures.make_stats_fixture import fixture_pattern

FIXTURES = Path(__file__).parent / "fixtures"


def stats_fixture():
    """The 4-frame pose fixture and its brute-force expected statistics."""
    skel = default_skeleton()
    present, error = fixture_pattern(skel.keypoints)
    present = np.array(present, dtype=bool)
    err = np.array(error)
    F, K = present.shape
    seq = PoseSequence3D(
        skeleton=skel,
        position=np.zeros((F, K, 3)),
        reproj_error=np.where(present, err, np.nan),
        n_cams=np.where(present, 2, 0),
        present=present,
    )
    expected = json.loads((FIXTURES / "stats_fixture.json").read_text())
    return seq, expected


# criterion number -> one-line verdict, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(n: int, title: str, ok: bool, detail: str) -> None:
    """Store and print the verdict of one acceptance criterion, then assert it."""
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line
