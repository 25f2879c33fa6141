"""Per-camera 2D keypoint tracks: I/O, likelihood gating, smoothing, rescaling."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_odd_window, check_probability
from .errors import ConfigError, NumericError, ParseError
from .skeleton import SkeletonDefinition, default_skeleton

log = logging.getLogger(__name__)

TRACK_HEADER = ["frame", "keypoint", "x", "y", "likelihood"]
_SIDECAR_FIELDS = {"camera", "resolution", "fps", "n_frames"}


@dataclass(frozen=True)
class Observation2D:
    x: float
    y: float
    likelihood: float
    missing: bool


@dataclass(frozen=True)
class TrackSet:
    """Dense 2D observations of one camera.

    ``xy`` has shape ``(n_frames, n_keypoints, 2)``, ``likelihood`` and
    ``missing`` have shape ``(n_frames, n_keypoints)``. Coordinates of missing
    cells are NaN and must not be read.
    """

    camera: str
    resolution: tuple[int, int]
    keypoints: tuple[str, ...]
    xy: np.ndarray
    likelihood: np.ndarray
    missing: np.ndarray
    fps: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        F, K = self.missing.shape
        if self.xy.shape != (F, K, 2) or self.likelihood.shape != (F, K):
            raise ConfigError(f"track {self.camera!r}: inconsistent array shapes")
        if K != len(self.keypoints):
            raise ConfigError(f"track {self.camera!r}: keypoint count mismatch")
        if min(self.resolution) <= 0:
            raise ConfigError(f"track {self.camera!r}: resolution must be positive")

    @property
    def n_frames(self) -> int:
        return self.missing.shape[0]

    def observation(self, frame: int, keypoint: str | int) -> Observation2D:
        k = keypoint if isinstance(keypoint, int) else self.keypoints.index(keypoint)
        x, y = self.xy[frame, k]
        return Observation2D(float(x), float(y), float(self.likelihood[frame, k]),
                             bool(self.missing[frame, k]))


def empty_trackset(camera, resolution, keypoints, n_frames, fps=20.0) -> TrackSet:
    K = len(keypoints)
    return TrackSet(
        camera=camera,
        resolution=resolution,
        keypoints=keypoints,
        xy=np.full((n_frames, K, 2), np.nan),
        likelihood=np.zeros((n_frames, K)),
        missing=np.ones((n_frames, K), dtype=bool),
        fps=fps,
    )


# -- I/O -----------------------------------------------------------------------


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_tracks(path, skeleton: SkeletonDefinition | None = None) -> TrackSet:
    """Read a 2D track CSV and its JSON sidecar into a dense :class:`TrackSet`."""
    path = Path(path)
    skeleton = skeleton or default_skeleton()
    if not path.exists():
        raise ConfigError(f"track file not found: {path}")
    side = sidecar_path(path)
    if not side.exists():
        raise ConfigError(f"track sidecar not found: {side}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", row=exc.lineno, path=side) from exc
    unknown = set(meta) - _SIDECAR_FIELDS
    if unknown or not {"camera", "resolution"} <= set(meta):
        raise ParseError(f"bad sidecar fields {sorted(meta)}", path=side)

    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_HEADER:
            raise ParseError(f"header must be {','.join(TRACK_HEADER)}", row=1, path=path)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise ParseError(f"expected 5 fields, got {len(rec)}", row=lineno, path=path)
            try:
                frame = int(rec[0])
                x, y, lik = float(rec[2]), float(rec[3]), float(rec[4])
            except ValueError as exc:
                raise ParseError(f"unparseable number: {exc}", row=lineno, path=path) from exc
            if frame < 0:
                raise ParseError("negative frame index", row=lineno, path=path)
            if rec[1] not in skeleton._index:
                raise ParseError(f"unknown keypoint {rec[1]!r}", row=lineno, path=path)
            if not (0.0 <= lik <= 1.0):
                raise ParseError(f"likelihood {lik} outside [0, 1]", row=lineno, path=path)
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ParseError("non-finite coordinate", row=lineno, path=path)
            rows.append((lineno, frame, skeleton.index(rec[1]), x, y, lik))

    n_frames = max((r[1] for r in rows), default=-1) + 1
    if "n_frames" in meta:
        if int(meta["n_frames"]) < n_frames:
            raise ParseError(f"frame index beyond n_frames={meta['n_frames']}", path=path)
        n_frames = int(meta["n_frames"])
    ts = empty_trackset(meta["camera"], tuple(meta["resolution"]), skeleton.keypoints,
                        n_frames, float(meta.get("fps", 20.0)))
    for lineno, f, k, x, y, lik in rows:
        if not ts.missing[f, k]:
            raise ParseError(f"duplicate row for frame {f}, keypoint {skeleton.keypoints[k]!r}",
                             row=lineno, path=path)
        ts.xy[f, k] = (x, y)
        ts.likelihood[f, k] = lik
        ts.missing[f, k] = False
    return ts


def write_tracks(ts: TrackSet, path) -> None:
    path = Path(path)
    lines = [",".join(TRACK_HEADER)]
    F, K = ts.missing.shape
    for f in range(F):
        for k in range(K):
            if ts.missing[f, k]:
                continue
            x, y = ts.xy[f, k]
            lines.append(f"{f},{ts.keypoints[k]},{float(x)!r},{float(y)!r},{float(ts.likelihood[f, k])!r}")
    path.write_text("\n".join(lines) + "\n")
    meta = {"camera": ts.camera, "resolution": list(ts.resolution), "fps": ts.fps, "n_frames": F}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_track_dir(directory, skeleton: SkeletonDefinition | None = None) -> list[TrackSet]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"track directory not found: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ConfigError(f"no track CSV files in {directory}")
    return [read_tracks(f, skeleton) for f in files]


# -- gating and filters ----------------------------------------------------------


def threshold_likelihood(t: TrackSet, tau: float = 0.6) -> TrackSet:
    """Mark observations with likelihood strictly below ``tau`` as missing."""
    check_probability(tau, "tau")
    missing = t.missing | (t.likelihood < tau)
    xy = t.xy.copy()
    xy[missing] = np.nan
    return replace(t, xy=xy, missing=missing)


def rescale(t: TrackSet, target) -> TrackSet:
    tw, th = (int(v) for v in target)
    if tw <= 0 or th <= 0:
        raise ConfigError("target resolution must be positive")
    sw, sh = t.resolution
    xy = t.xy * np.array([tw / sw, th / sh])
    return replace(t, xy=xy, resolution=(tw, th))


def _runs(mask: np.ndarray):
    """Yield ``(start, stop)`` of contiguous True stretches."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def _ma_invertible(theta: np.ndarray) -> bool:
    if theta.size == 0:
        return True
    roots = np.roots(np.concatenate([[1.0], theta]))
    return bool(np.all(np.abs(roots) < 1.0))


def _pad_runs(runs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack runs into a zero-padded ``(n_runs, max_len)`` matrix plus validity mask."""
    L = max(z.size for z in runs)
    Z = np.zeros((len(runs), L))
    valid = np.zeros((len(runs), L), dtype=bool)
    for i, z in enumerate(runs):
        Z[i, :z.size] = z
        valid[i, :z.size] = True
    return Z, valid


def _lag(Z: np.ndarray, i: int) -> np.ndarray:
    out = np.zeros_like(Z)
    out[:, i:] = Z[:, :-i]
    return out


def _residuals(Z: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Conditional ARMA innovations along the last axis.

    The first ``max(p, q)`` values of each row are known history with zero
    innovations; the recursion starts from them.
    """
    Z = np.atleast_2d(Z)
    start = max(phi.size, theta.size)
    u = Z.copy()
    for i, c in enumerate(phi, start=1):
        u -= c * _lag(Z, i)
    u[:, :start] = 0.0
    if theta.size:
        u = lfilter([1.0], np.concatenate([[1.0], theta]), u, axis=-1)
    return u


def fit_arma(runs: Sequence[np.ndarray], p: int, q: int, n_iter: int = 8):
    """Conditional least-squares ARMA(p, q) coefficients of zero-mean runs.

    Iterated regression: innovations are estimated with the current
    coefficients, then ``z_t`` is regressed on ``p`` lagged values and ``q``
    lagged innovations pooled over all runs. Starting from the pure AR(p)
    fit, the invertible iterate with the smallest conditional sum of squared
    innovations is returned.
    """
    start = max(p, q)
    runs = [np.asarray(z, dtype=float) for z in runs if len(z) > start]
    phi, theta = np.zeros(p), np.zeros(q)
    if not runs or p + q == 0:
        return phi, theta
    Z, valid = _pad_runs(runs)
    rows = valid.copy()
    rows[:, :start] = False
    z_lags = [_lag(Z, i)[rows] for i in range(1, p + 1)]
    target = Z[rows]

    def ssr(ph, th):
        return float(np.sum(_residuals(Z, ph, th)[rows] ** 2))

    best, best_ssr = (phi, theta), np.inf
    for it in range(n_iter + 1 if q else 1):
        cols = list(z_lags)
        if q:
            E = _residuals(Z, phi, theta) if it else np.zeros_like(Z)
            cols += [_lag(E, i)[rows] for i in range(1, q + 1)]
        coef, *_ = np.linalg.lstsq(np.column_stack(cols), target, rcond=None)
        new_phi, new_theta = coef[:p], coef[p:]
        if not (np.all(np.isfinite(coef)) and _ma_invertible(new_theta)):
            break
        phi, theta = new_phi, new_theta
        value = ssr(phi, theta)
        if value < best_ssr:
            best, best_ssr = (phi, theta), value
    return best


def arma_filter(t: TrackSet, p: int = 3, q: int = 1) -> TrackSet:
    """Replace each coordinate series by its in-sample one-step ARMA(p, q) predictions.

    One model (mean plus coefficients) is fit per keypoint and coordinate,
    pooled over the contiguous runs of non-missing frames; predictions restart
    at every run, and the first ``max(p, q)`` frames of a run are kept as
    observed. Runs shorter than ``p + q + 2`` pass through unchanged.
    """
    if p < 0 or q < 0:
        raise ConfigError("ARMA orders must be non-negative")
    xy = t.xy.copy()
    F, K = t.missing.shape
    for k in range(K):
        valid = ~t.missing[:, k]
        bad = valid & ~np.all(np.isfinite(t.xy[:, k]), axis=-1)
        if np.any(bad):
            f = int(np.flatnonzero(bad)[0])
            raise NumericError(f"non-finite coordinate for keypoint {t.keypoints[k]!r} at frame {f}")
        if p + q == 0:
            continue
        runs = [(a, b) for a, b in _runs(valid) if b - a >= p + q + 2]
        if not runs:
            continue
        for c in range(2):
            series = [t.xy[a:b, k, c] for a, b in runs]
            values = np.concatenate(series)
            mu = values.mean()
            scale = np.max(np.abs(values - mu))
            if scale <= 1e-12 * max(1.0, abs(mu)):
                continue
            phi, theta = fit_arma([(s - mu) / scale for s in series], p, q)
            Z, mask = _pad_runs([(s - mu) / scale for s in series])
            pred = (Z - _residuals(Z, phi, theta)) * scale + mu
            xy[:, k, c][np.concatenate([np.arange(a, b) for a, b in runs])] = pred[mask]
    return replace(t, xy=xy)


def median_filter_series(s, w: int, axis: int = 0) -> np.ndarray:
    """Centered running median over ``w`` samples, ignoring missing (NaN) entries.

    Near the ends the window shrinks symmetrically so it stays centered: the
    half-width at index ``i`` of an ``n``-sample series is
    ``min(w // 2, i, n - 1 - i)``, hence the first and last samples keep
    their value. Missing entries stay missing. Works on arrays of any rank
    along ``axis``.
    """
    check_odd_window(w)
    s = np.asarray(s, dtype=float)
    n = s.shape[axis]
    if w == 1 or n == 0:
        return s.copy()
    x = np.moveaxis(s, axis, 0)
    h = w // 2
    idx = np.arange(n)
    half = np.minimum(h, np.minimum(idx, n - 1 - idx))
    out = np.empty_like(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for hw in np.unique(half):
            rows = np.flatnonzero(half == hw)
            if hw == 0:
                out[rows] = x[rows]
                continue
            windows = np.lib.stride_tricks.sliding_window_view(x, 2 * hw + 1, axis=0)
            out[rows] = np.nanmedian(windows[rows - hw], axis=-1)
    out[np.isnan(x)] = np.nan
    return np.moveaxis(out, 0, axis)


class TrackPreprocessor(TransformerMixin, BaseEstimator):
    """Smooth, gate and rescale per-camera tracks ahead of lifting.

    Steps run in a fixed order: ARMA smoothing, likelihood gating, rescaling.

    Parameters
    ----------
    likelihood_threshold : float
        Observations below this likelihood become missing.
    arma_order : tuple of int or None
        ``(p, q)`` of the smoothing model; ``None`` skips smoothing.
    target_resolution : tuple, dict, Rig or None
        Output resolution. A dict maps camera name to ``(w, h)``; a rig uses
        each camera's calibration image size; ``None`` keeps the input.
    """

    def __init__(self, likelihood_threshold=0.6, arma_order=(3, 1), target_resolution=None):
        self.likelihood_threshold = likelihood_threshold
        self.arma_order = arma_order
        self.target_resolution = target_resolution

    def fit(self, X=None, y=None):
        check_probability(self.likelihood_threshold, "likelihood_threshold")
        return self

    def _target(self, t: TrackSet):
        target = self.target_resolution
        if target is None:
            return None
        if isinstance(target, dict):
            return target[t.camera]
        if hasattr(target, "cameras"):
            return target[t.camera].image_size
        return target

    def transform_one(self, t: TrackSet) -> TrackSet:
        if self.arma_order is not None:
            t = arma_filter(t, *self.arma_order)
        t = threshold_likelihood(t, self.likelihood_threshold)
        target = self._target(t)
        if target is not None:
            t = rescale(t, target)
        return t

    def transform(self, X: TrackSet | Sequence[TrackSet]):
        check_probability(self.likelihood_threshold, "likelihood_threshold")
        if isinstance(X, TrackSet):
            return self.transform_one(X)
        return [self.transform_one(t) for t in X]
