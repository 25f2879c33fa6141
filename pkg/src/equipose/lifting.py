"""Multi-view triangulation of 2D tracks into 3D poses."""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_min_cams, check_odd_window, check_positive
from .errors import ConfigError, DegenerateGeometryError, ParseError
from .geometry import CameraModel, Rig, project_points, projection_matrix, undistort_points
from .skeleton import SkeletonDefinition, default_skeleton
from .tracks import TrackSet, median_filter_series

log = logging.getLogger(__name__)

POSE_HEADER = ["frame", "keypoint", "x", "y", "z", "reproj_error_px", "n_cams", "present"]
# relative singular-value floor below which the DLT system is treated as rank deficient
DEGENERACY_TOL = 1e-12
# subset scores closer than this (px) count as tied; the earlier (larger) subset wins
SCORE_TIE_TOL = 1e-6
# subsets whose mean reprojection error is at most this (px) form a consensus;
# the largest consensus subset is preferred over smaller, lower-scoring ones
INLIER_THRESHOLD_PX = 10.0
_CHUNK = 100_000


@dataclass(frozen=True)
class Keypoint3D:
    position: np.ndarray
    reproj_error: float
    n_cams: int
    present: bool


@dataclass
class PoseSequence3D:
    """Lifted keypoints of one video.

    Arrays are indexed ``[frame, keypoint]``; ``position`` carries a trailing
    axis of 3. Entries with ``present == False`` carry no meaning.
    """

    skeleton: SkeletonDefinition
    position: np.ndarray
    reproj_error: np.ndarray
    n_cams: np.ndarray
    present: np.ndarray
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.present.shape[0]

    def keypoint(self, frame: int, keypoint: str | int) -> Keypoint3D:
        k = keypoint if isinstance(keypoint, int) else self.skeleton.index(keypoint)
        return Keypoint3D(
            self.position[frame, k].copy(),
            float(self.reproj_error[frame, k]),
            int(self.n_cams[frame, k]),
            bool(self.present[frame, k]),
        )


# -- single-point triangulation --------------------------------------------------


def _dlt_batch(uv: np.ndarray, P: np.ndarray):
    """Solve the stacked DLT system for ``N`` points seen by ``n`` cameras.

    ``uv`` has shape ``(N, n, 2)`` (undistorted pixels) and ``P`` shape
    ``(n, 3, 4)``. Returns ``(points (N, 3), ok (N,))``.
    """
    N, n, _ = uv.shape
    A = np.empty((N, 2 * n, 4))
    A[:, 0::2] = uv[:, :, 0, None] * P[None, :, 2] - P[None, :, 0]
    A[:, 1::2] = uv[:, :, 1, None] * P[None, :, 2] - P[None, :, 1]
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    X = vt[:, -1]
    w = X[:, 3]
    ok = (s[:, -2] > DEGENERACY_TOL * s[:, 0]) & (np.abs(w) > 1e-15 * np.linalg.norm(X, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = X[:, :3] / np.where(ok, w, 1.0)[:, None]
    pts[~ok] = np.nan
    return pts, ok


def triangulate_dlt(obs, cams: Sequence[CameraModel]) -> np.ndarray:
    """Triangulate one point from undistorted pixel observations in two or more cameras."""
    uv = np.asarray(obs, dtype=float).reshape(-1, 2)
    if uv.shape[0] < 2 or uv.shape[0] != len(cams):
        raise ConfigError("need one observation per camera and at least two cameras")
    names = [c.name for c in cams]
    if len(set(names)) != len(names):
        raise ConfigError("cameras must be distinct")
    P = np.stack([projection_matrix(c) for c in cams])
    pts, ok = _dlt_batch(uv[None], P)
    if not ok[0]:
        raise DegenerateGeometryError("rank-deficient DLT system (near-parallel rays)")
    return pts[0]


def reprojection_error(p, obs, cams: Sequence[CameraModel]):
    """Pixel distance between the projection of ``p`` and each observation.

    Returns ``(per_camera, mean)``. A camera in which ``p`` is unprojectable
    contributes ``+inf``.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    obs = np.asarray(obs, dtype=float).reshape(-1, 2)
    errs = np.array([
        float(np.linalg.norm(project_points(p[None], cam, check=False)[0] - o))
        for o, cam in zip(obs, cams)
    ])
    return errs, float(errs.mean())


def _check_inlier_threshold(value):
    if value is not None:
        check_positive(value, "inlier_threshold", strict=False)
    return value


def camera_subsets(names: Sequence[str], min_cams: int):
    """All camera index subsets of size >= ``min_cams`` in preference order.

    Larger subsets come first; equal sizes are ordered by their sorted camera
    names. Scoring keeps the first minimum, which implements the tie-break.
    """
    C = len(names)
    out = []
    for size in range(C, min_cams - 1, -1):
        combos = list(itertools.combinations(range(C), size))
        combos.sort(key=lambda s: sorted(names[i] for i in s))
        out.extend(combos)
    return out


def _ransac_batch(raw, undist, observed, cams, P, min_cams, inlier_threshold=INLIER_THRESHOLD_PX):
    """Exhaustive subset triangulation for ``N`` points.

    A subset scoring at most ``inlier_threshold`` is a consensus set. The
    largest consensus set wins, lower score breaking ties within a size;
    without any consensus set the lowest score wins. ``None`` disables the
    consensus rule, leaving the plain minimum-score choice.

    Returns best position ``(N, 3)``, best score ``(N,)`` (inf if none) and
    the inlier mask ``(N, C)``, plus the number of degenerate subset solves.
    """
    N, C, _ = raw.shape
    best_pos = np.full((N, 3), np.nan)
    best_score = np.full(N, np.inf)
    best_set = np.zeros((N, C), dtype=bool)
    best_size = np.zeros(N, dtype=int)
    best_consensus = np.zeros(N, dtype=bool)
    degenerate = 0
    names = [c.name for c in cams]
    for subset in camera_subsets(names, min_cams):
        idx = list(subset)
        rows = np.flatnonzero(observed[:, idx].all(axis=1))
        if rows.size == 0:
            continue
        pts, ok = _dlt_batch(undist[rows][:, idx], P[idx])
        degenerate += int(np.count_nonzero(~ok))
        score = np.zeros(rows.size)
        for j in idx:
            proj = project_points(pts, cams[j], check=False)
            score += np.linalg.norm(proj - raw[rows, j], axis=-1)
        score /= len(idx)
        score[~ok | ~np.isfinite(score)] = np.inf
        lower = score < best_score[rows] - SCORE_TIE_TOL
        if inlier_threshold is None:
            better = lower
        else:
            # subsets arrive largest first, so a held consensus set is never smaller
            consensus = score <= inlier_threshold
            held = best_consensus[rows]
            better = np.where(held, consensus & (best_size[rows] == len(idx)) & lower,
                              consensus | lower)
            best_consensus[rows[better]] = consensus[better]
        r = rows[better]
        best_size[r] = len(idx)
        best_score[r] = score[better]
        best_pos[r] = pts[better]
        best_set[r] = False
        best_set[np.ix_(r, idx)] = True
    return best_pos, best_score, best_set, degenerate


def triangulate_ransac(obs, cams: Sequence[CameraModel], min_cams: int = 2,
                       inlier_threshold: float | None = INLIER_THRESHOLD_PX):
    """Pick the best camera subset for one keypoint by exhaustive search.

    ``obs`` holds one raw (distorted) pixel observation per camera, ``None``
    or NaN marking a missing one. Every subset of at least ``min_cams``
    observing cameras is triangulated and scored by the mean reprojection
    error over its own cameras. The largest subset scoring at most
    ``inlier_threshold`` px wins; if none does, or the threshold is ``None``,
    the lowest score wins. Returns ``(Keypoint3D, inlier_camera_names)``.
    """
    min_cams = check_min_cams(min_cams)
    C = len(cams)
    raw = np.full((1, C, 2), np.nan)
    for j, o in enumerate(obs):
        if o is not None:
            raw[0, j] = np.asarray(o, dtype=float).reshape(2)
    observed = np.all(np.isfinite(raw), axis=-1)
    undist = np.full_like(raw, np.nan)
    for j, cam in enumerate(cams):
        if observed[0, j]:
            u, conv = undistort_points(raw[:, j], cam, raise_on_failure=False)
            undist[:, j] = u
            observed[:, j] &= conv
    P = np.stack([projection_matrix(c) for c in cams])
    pos, score, inl, _ = _ransac_batch(raw, undist, observed, list(cams), P, min_cams,
                                       _check_inlier_threshold(inlier_threshold))
    if not np.isfinite(score[0]):
        return Keypoint3D(np.full(3, np.nan), float("nan"), 0, False), ()
    chosen = tuple(cams[j].name for j in np.flatnonzero(inl[0]))
    return Keypoint3D(pos[0], float(score[0]), len(chosen), True), chosen


# -- sequence lifting ------------------------------------------------------------


class Triangulator(TransformerMixin, BaseEstimator):
    """Lift per-camera 2D tracks of one video to a 3D pose sequence.

    Per frame and keypoint: undistort, exhaustive-subset DLT triangulation,
    then a temporal median filter on each world coordinate, a reprojection
    error recomputed for the smoothed point over the chosen cameras, and a
    drop of keypoints whose error exceeds ``reproj_threshold``.

    Parameters
    ----------
    rig : Rig
        Calibrated cameras; tracks are matched to cameras by name.
    min_cams : int, default=2
    reproj_threshold : float, default=200.0
        Keypoints with error strictly greater than this (px) are dropped.
    medfilt_window : int, default=13
        Odd window of the temporal median filter; 1 disables smoothing.
    n_jobs : int or None
        Worker threads for the triangulation stage.
    inlier_threshold : float or None, default=10.0
        Consensus bound (px) of the subset search; see :func:`triangulate_ransac`.
    """

    def __init__(self, rig: Rig | None = None, min_cams=2, reproj_threshold=200.0,
                 medfilt_window=13, n_jobs=None, inlier_threshold=INLIER_THRESHOLD_PX):
        self.rig = rig
        self.min_cams = min_cams
        self.reproj_threshold = reproj_threshold
        self.medfilt_window = medfilt_window
        self.n_jobs = n_jobs
        self.inlier_threshold = inlier_threshold

    def fit(self, X=None, y=None):
        if not isinstance(self.rig, Rig):
            raise ConfigError("Triangulator needs a Rig")
        check_min_cams(self.min_cams)
        if self.min_cams > len(self.rig):
            raise ConfigError(f"min_cams={self.min_cams} exceeds rig size {len(self.rig)}")
        check_positive(self.reproj_threshold, "reproj_threshold", strict=False)
        check_odd_window(self.medfilt_window)
        _check_inlier_threshold(self.inlier_threshold)
        self.camera_names_ = self.rig.names
        self.projection_matrices_ = np.stack([projection_matrix(c) for c in self.rig])
        return self

    def _check_tracks(self, tracks: Sequence[TrackSet]) -> list[TrackSet]:
        by_name = {}
        for t in tracks:
            if t.camera in by_name:
                raise ConfigError(f"duplicate track for camera {t.camera!r}")
            by_name[t.camera] = t
        if set(by_name) != set(self.camera_names_):
            raise ConfigError(
                f"track cameras {sorted(by_name)} do not match rig cameras {sorted(self.camera_names_)}"
            )
        ordered = [by_name[n] for n in self.camera_names_]
        frames = {t.n_frames for t in ordered}
        if len(frames) != 1:
            raise ConfigError(f"tracks are not frame-aligned: frame counts {sorted(frames)}")
        if len({t.keypoints for t in ordered}) != 1:
            raise ConfigError("tracks disagree on keypoint names")
        for t, cam in zip(ordered, self.rig):
            if tuple(t.resolution) != tuple(cam.image_size):
                raise ConfigError(
                    f"track {t.camera!r} resolution {t.resolution} differs from calibration "
                    f"image size {cam.image_size}; rescale first"
                )
        return ordered

    def transform(self, X: Sequence[TrackSet], skeleton: SkeletonDefinition | None = None) -> PoseSequence3D:
        if not hasattr(self, "camera_names_"):
            self.fit()
        tracks = self._check_tracks(X)
        skeleton = skeleton or default_skeleton()
        if tuple(skeleton.keypoints) != tracks[0].keypoints:
            raise ConfigError("track keypoints do not match the skeleton")
        cams = list(self.rig)
        C = len(cams)
        F, K = tracks[0].missing.shape
        N = F * K

        raw = np.stack([t.xy.reshape(N, 2) for t in tracks], axis=1)
        observed = np.stack([~t.missing.reshape(N) for t in tracks], axis=1)
        raw = np.where(observed[..., None], raw, np.nan)
        undist = np.full_like(raw, np.nan)
        undistort_failures = 0
        for j, cam in enumerate(cams):
            u, conv = undistort_points(raw[:, j], cam, raise_on_failure=False)
            bad = observed[:, j] & ~conv
            undistort_failures += int(np.count_nonzero(bad))
            observed[bad, j] = False
            undist[:, j] = u

        P = self.projection_matrices_
        chunks = [slice(a, min(a + _CHUNK, N)) for a in range(0, N, _CHUNK)]

        def work(sl):
            return _ransac_batch(raw[sl], undist[sl], observed[sl], cams, P, self.min_cams,
                                 self.inlier_threshold)

        if self.n_jobs and self.n_jobs > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.n_jobs) as ex:
                results = list(ex.map(work, chunks))
        else:
            results = [work(sl) for sl in chunks]
        pos = np.concatenate([r[0] for r in results]) if results else np.empty((0, 3))
        score = np.concatenate([r[1] for r in results]) if results else np.empty(0)
        inliers = np.concatenate([r[2] for r in results]) if results else np.empty((0, C), bool)
        degenerate = sum(r[3] for r in results)

        triangulated = np.isfinite(score)
        pos = pos.reshape(F, K, 3)
        pos[~triangulated.reshape(F, K)] = np.nan
        smooth = median_filter_series(pos, self.medfilt_window, axis=0).reshape(N, 3)

        err_sum = np.zeros(N)
        n_cams = inliers.sum(axis=1)
        for j, cam in enumerate(cams):
            use = inliers[:, j] & triangulated
            if not np.any(use):
                continue
            proj = project_points(smooth[use], cam, check=False)
            err_sum[use] += np.linalg.norm(proj - raw[use, j], axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.where(triangulated, err_sum / np.maximum(n_cams, 1), np.nan)
        present = triangulated & (err <= self.reproj_threshold)

        log.info("lifted %d frames x %d keypoints: %d present, %d degenerate solves",
                 F, K, int(present.sum()), degenerate)
        return PoseSequence3D(
            skeleton=skeleton,
            position=smooth.reshape(F, K, 3),
            reproj_error=err.reshape(F, K),
            n_cams=np.where(triangulated, n_cams, 0).reshape(F, K),
            present=present.reshape(F, K),
            provenance={
                "cameras": list(self.camera_names_),
                "min_cams": int(self.min_cams),
                "reproj_threshold_px": float(self.reproj_threshold),
                "medfilt_window": int(self.medfilt_window),
                "inlier_threshold_px": (None if self.inlier_threshold is None
                                        else float(self.inlier_threshold)),
            },
            diagnostics={"degenerate": degenerate, "undistort_failures": undistort_failures},
        )


@dataclass
class LiftConfig:
    reproj_threshold: float = 200.0
    min_cams: int = 2
    medfilt_window: int = 13
    n_jobs: int | None = None
    inlier_threshold: float | None = INLIER_THRESHOLD_PX


def lift_sequence(tracks: Sequence[TrackSet], rig: Rig, cfg: LiftConfig | None = None,
                  skeleton: SkeletonDefinition | None = None) -> PoseSequence3D:
    cfg = cfg or LiftConfig()
    est = Triangulator(rig, cfg.min_cams, cfg.reproj_threshold, cfg.medfilt_window, cfg.n_jobs,
                       cfg.inlier_threshold)
    return est.fit().transform(tracks, skeleton=skeleton)


# -- pose CSV --------------------------------------------------------------------


def write_pose_csv(seq: PoseSequence3D, path, *, reproj_fields: bool = True) -> None:
    """Write one row per (frame, keypoint); absent keypoints keep empty numeric fields.

    With ``reproj_fields=False`` (ground truth), positions are always written
    and the error/camera-count columns are left empty.
    """
    lines = [",".join(POSE_HEADER)]
    names = seq.skeleton.keypoints
    F, K = seq.present.shape
    for f in range(F):
        for k in range(K):
            pres = bool(seq.present[f, k])
            if reproj_fields and not pres:
                lines.append(f"{f},{names[k]},,,,,,0")
                continue
            x, y, z = (repr(float(v)) for v in seq.position[f, k])
            if reproj_fields:
                tail = f"{float(seq.reproj_error[f, k])!r},{int(seq.n_cams[f, k])}"
            else:
                tail = ","
            lines.append(f"{f},{names[k]},{x},{y},{z},{tail},{int(pres)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_csv(path, skeleton: SkeletonDefinition | None = None) -> PoseSequence3D:
    path = Path(path)
    skeleton = skeleton or default_skeleton()
    if not path.exists():
        raise ConfigError(f"pose file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != POSE_HEADER:
            raise ParseError(f"header must be {','.join(POSE_HEADER)}", row=1, path=path)
        records = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 8:
                raise ParseError(f"expected 8 fields, got {len(rec)}", row=lineno, path=path)
            if rec[1] not in skeleton._index:
                raise ParseError(f"unknown keypoint {rec[1]!r}", row=lineno, path=path)
            try:
                f = int(rec[0])
                pres = rec[7] == "1"
                if rec[7] not in ("0", "1"):
                    raise ValueError(f"present must be 0 or 1, got {rec[7]!r}")
                xyz = [float(v) if v else np.nan for v in rec[2:5]]
                err = float(rec[5]) if rec[5] else np.nan
                nc = int(rec[6]) if rec[6] else 0
            except ValueError as exc:
                raise ParseError(str(exc), row=lineno, path=path) from exc
            if pres and not np.all(np.isfinite(xyz)):
                raise ParseError("present keypoint without coordinates", row=lineno, path=path)
            records.append((f, skeleton.index(rec[1]), xyz, err, nc, pres))
    F = max((r[0] for r in records), default=-1) + 1
    K = len(skeleton)
    seq = PoseSequence3D(
        skeleton=skeleton,
        position=np.full((F, K, 3), np.nan),
        reproj_error=np.full((F, K), np.nan),
        n_cams=np.zeros((F, K), dtype=int),
        present=np.zeros((F, K), dtype=bool),
        provenance={"source": path.name},
    )
    for f, k, xyz, err, nc, pres in records:
        seq.position[f, k] = xyz
        seq.reproj_error[f, k] = err
        seq.n_cams[f, k] = nc
        seq.present[f, k] = pres
    return seq
