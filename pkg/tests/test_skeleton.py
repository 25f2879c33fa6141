from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equipose.errors import ConfigError, ParseError
from equipose.lifting import PoseSequence3D
from equipose.skeleton import (HORSE28_GROUPS, SkeletonDefinition, default_skeleton, load_skeleton,
                               pose_statistics)

from .helpers import stats_fixture


def test_bundled_horse_group_sizes():
    skel = load_skeleton()
    assert skel.name == "horse-28" and len(skel) == 28
    sizes = tuple(len(skel.members(g)) for g in skel.group_names)
    assert skel.group_names == list(HORSE28_GROUPS)
    assert sizes == (2, 2, 2, 1, 1, 1, 3, 16)
    names = set(skel.keypoints)
    assert all(a in names and b in names for a, b in skel.edges)


def test_horse28_claim_with_27_keypoints_rejected(tmp_path):
    doc = default_skeleton().to_dict()
    dropped = doc["keypoints"].pop()
    del doc["groups"][dropped]
    doc["edges"] = [e for e in doc["edges"] if dropped not in e]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="horse-28"):
        load_skeleton(path)


def test_empty_edges_are_valid(tmp_path):
    doc = default_skeleton().to_dict()
    doc["edges"] = []
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert load_skeleton(path).edges == ()


def test_skeleton_errors(tmp_path):
    with pytest.raises(ConfigError, match="duplicate"):
        SkeletonDefinition("x", ("a", "a"), {"a": "G"})
    with pytest.raises(ConfigError, match="group"):
        SkeletonDefinition("x", ("a", "b"), {"a": "G"})
    with pytest.raises(ConfigError, match="edge"):
        SkeletonDefinition("x", ("a",), {"a": "G"}, (("a", "z"),))
    path = tmp_path / "s.json"
    path.write_text('{"name": "x", "keypoints": ["a"], "groups": {"a": "G"}, "colour": 1}')
    with pytest.raises(ParseError):
        load_skeleton(path)
    path.write_text('{"name": "x"')
    with pytest.raises(ParseError):
        load_skeleton(path)
    with pytest.raises(ConfigError):
        load_skeleton(tmp_path / "missing.json")


# -- statistics ---------------------------------------------------------------------


def seq_from(present, err, skel):
    present = np.asarray(present, dtype=bool)
    F, K = present.shape
    return PoseSequence3D(skel, np.zeros((F, K, 3)), np.where(present, err, np.nan),
                          np.where(present, 2, 0), present)


MINI = SkeletonDefinition("mini", ("a", "b", "c"), {"a": "A", "b": "A", "c": "B"})


def test_hand_computed_mini_fixture():
    # frame 0: a=1 b=3 c=2 | frame 1: a=2 | frame 2: a=3 b=5 c=6 | frame 3: b=7
    present = [[1, 1, 1], [1, 0, 0], [1, 1, 1], [0, 1, 0]]
    err = [[1, 3, 2], [2, 0, 0], [3, 5, 6], [0, 7, 0]]
    st_ = pose_statistics(seq_from(present, err, MINI))
    assert st_.n_present == 8
    assert st_.mean_err == 3.625 and st_.median_err == 3.0
    assert st_.std_err == pytest.approx(math.sqrt(31.875 / 8), abs=1e-15)
    assert (st_.count_mean, st_.count_std) == (2.0, 1.0)
    a, b = st_.groups
    assert (a.group, a.kp_no, a.kpp, a.mean_err) == ("A", 2, 0.75, 3.5)
    assert a.std_err == pytest.approx(math.sqrt(23.5 / 6), abs=1e-15)
    assert (b.group, b.kp_no, b.kpp, b.mean_err, b.std_err) == ("B", 1, 0.5, 4.0, 2.0)


def test_brute_force_fixture():
    seq, exp = stats_fixture()
    s = pose_statistics(seq)
    assert s.n_frames == exp["n_frames"] and s.n_present == exp["n_present"]
    for key in ("mean_err", "std_err", "median_err", "count_mean", "count_std"):
        assert getattr(s, key) == pytest.approx(exp[key], abs=1e-12), key
    for g in s.groups:
        e = exp["groups"][g.group]
        assert g.kp_no == e["kp_no"] and g.kpp == pytest.approx(e["kpp"], abs=1e-15)
        assert g.mean_err == pytest.approx(e["mean_err"], abs=1e-12)
        assert g.std_err == pytest.approx(e["std_err"], abs=1e-12)


def test_keypoint_present_three_of_four_frames():
    skel = default_skeleton()
    present = np.ones((4, 28), bool)
    present[2, skel.index("withers")] = False
    s = pose_statistics(seq_from(present, np.ones((4, 28)), skel))
    kpp = {g.group: g.kpp for g in s.groups}
    assert kpp["Withers"] == 0.75 and kpp["Croup"] == 1.0


def test_all_present_gives_full_kpp():
    skel = default_skeleton()
    s = pose_statistics(seq_from(np.ones((5, 28)), np.full((5, 28), 2.0), skel))
    assert all(g.kpp == 1.0 for g in s.groups)
    assert (s.count_mean, s.count_std) == (28.0, 0.0)


def test_empty_sequence_rejected():
    with pytest.raises(ConfigError):
        pose_statistics(seq_from(np.zeros((0, 3)), np.zeros((0, 3)), MINI))


def test_nothing_present_reports_absent_errors():
    s = pose_statistics(seq_from(np.zeros((2, 3)), np.zeros((2, 3)), MINI))
    assert s.mean_err is None and s.groups[0].mean_err is None and s.groups[0].kpp == 0.0
    assert ",," in s.to_csv().splitlines()[1]
    assert "n/a" in s.to_text()


def test_report_formats():
    seq, _ = stats_fixture()
    s = pose_statistics(seq)
    lines = s.to_csv().splitlines()
    assert lines[0] == "group,mean_err,std_err,kpp,kp_no"
    assert lines[1].startswith("Nostrils,") and lines[-1].endswith(",16")
    assert "Repr. Err. [px]" in s.to_text()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_statistics_invariant_to_frame_order(n, seed):
    g = np.random.default_rng(seed)
    present = g.random((n, 3)) < 0.7
    err = g.uniform(0, 50, (n, 3))
    a = pose_statistics(seq_from(present, err, MINI))
    perm = g.permutation(n)
    b = pose_statistics(seq_from(present[perm], err[perm], MINI))
    assert 0 <= a.count_mean <= 3
    for x, y in zip(a.groups, b.groups):
        assert x.kpp == y.kpp and 0 <= x.kpp <= 1
        if x.mean_err is not None:
            assert x.mean_err == pytest.approx(y.mean_err, rel=1e-12)
    assert a.count_std == pytest.approx(b.count_std, rel=1e-12, abs=1e-15)
