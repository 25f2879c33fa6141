"""Pinhole camera model with radial-tangential distortion.

Pixel conventions follow OpenCV: camera frame x right, y down, z forward;
distortion coefficients are ``(k1, k2, p1, p2, k3)`` applied in normalized
image coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, ParseError, UnprojectableError

# camera-frame depth below which a point counts as on the focal plane
MIN_DEPTH = 1e-9
UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-10

_CAMERA_FIELDS = {
    "name", "image_size", "fx", "fy", "cx", "cy", "dist", "rotation", "translation",
}


def rodrigues_to_matrix(r) -> np.ndarray:
    """Convert an axis-angle vector (radians times unit axis) to a rotation matrix."""
    r = np.asarray(r, dtype=float).reshape(3)
    theta = float(np.linalg.norm(r))
    if theta < 1e-12:
        # second-order expansion keeps R orthonormal to machine precision
        kx = np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
        return np.eye(3) + kx + 0.5 * kx @ kx
    k = r / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def matrix_to_rodrigues(R) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def check_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    if not np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0):
        raise ConfigError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ConfigError("rotation matrix determinant is not 1")


@dataclass(frozen=True)
class CameraModel:
    name: str
    image_size: tuple[int, int]
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "dist", tuple(float(v) for v in self.dist))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ConfigError(f"camera {self.name!r}: image_size must be two positive ints")
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"camera {self.name!r}: focal lengths must be positive")
        if len(self.dist) != 5:
            raise ConfigError(f"camera {self.name!r}: dist needs 5 coefficients")
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ConfigError(f"camera {self.name!r}: rotation/translation must be 3-vectors")
        values = (self.fx, self.fy, self.cx, self.cy, *self.dist, *self.rotation, *self.translation)
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"camera {self.name!r}: non-finite parameter")
        check_rotation(self.R)

    @cached_property
    def R(self) -> np.ndarray:
        return rodrigues_to_matrix(self.rotation)

    @cached_property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=float)

    @cached_property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    @property
    def has_distortion(self) -> bool:
        return any(d != 0.0 for d in self.dist)

    def without_distortion(self) -> CameraModel:
        return CameraModel(
            self.name, self.image_size, self.fx, self.fy, self.cx, self.cy,
            (0.0,) * 5, self.rotation, self.translation,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "image_size": list(self.image_size),
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "dist": list(self.dist),
            "rotation": list(self.rotation),
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraModel:
        unknown = set(d) - _CAMERA_FIELDS
        if unknown:
            raise ParseError(f"unknown camera field(s): {sorted(unknown)}")
        missing = _CAMERA_FIELDS - set(d)
        if missing:
            raise ParseError(f"missing camera field(s): {sorted(missing)}")
        try:
            return cls(
                name=str(d["name"]),
                image_size=tuple(d["image_size"]),
                fx=float(d["fx"]),
                fy=float(d["fy"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                dist=tuple(float(v) for v in d["dist"]),
                rotation=tuple(float(v) for v in d["rotation"]),
                translation=tuple(float(v) for v in d["translation"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ParseError(f"bad camera {d.get('name')!r}: {exc}") from exc


@dataclass(frozen=True)
class Rig:
    cameras: tuple[CameraModel, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.cameras) < 2:
            raise ConfigError("a rig needs at least 2 cameras")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ConfigError(f"camera names must be unique, got {names}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self) -> Iterator[CameraModel]:
        return iter(self.cameras)

    def __getitem__(self, key) -> CameraModel:
        if isinstance(key, str):
            return self.cameras[self._index[key]]
        return self.cameras[key]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.cameras]

    def index(self, name: str) -> int:
        return self._index[name]


def load_calibration(path) -> Rig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"calibration file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", row=exc.lineno, path=path) from exc
    if not isinstance(doc, dict) or set(doc) != {"cameras"}:
        raise ParseError("calibration must be an object with exactly one key 'cameras'", path=path)
    return Rig(tuple(CameraModel.from_dict(c) for c in doc["cameras"]))


def save_calibration(rig: Rig, path) -> None:
    doc = {"cameras": [c.to_dict() for c in rig]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# -- projection ---------------------------------------------------------------


def world_to_camera(points, cam: CameraModel) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points @ cam.R.T + cam.t


def distort_normalized(xy, dist) -> np.ndarray:
    """Apply the radial-tangential polynomial to normalized coordinates ``(..., 2)``."""
    k1, k2, p1, p2, k3 = dist
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _distortion_jacobian(xy, dist):
    k1, k2, p1, p2, k3 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
    j00 = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x
    j11 = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x
    j01 = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
    return j00, j01, j01, j11


def project_points(points, cam: CameraModel, *, check: bool = True) -> np.ndarray:
    """Project world points ``(..., 3)`` to distorted pixels ``(..., 2)``.

    With ``check=True`` any point at camera depth <= ``MIN_DEPTH`` raises
    :class:`UnprojectableError`; otherwise those entries come back as ``inf``.
    """
    pc = world_to_camera(points, cam)
    z = pc[..., 2]
    bad = ~(z > MIN_DEPTH)
    if check and np.any(bad):
        raise UnprojectableError(
            f"{int(np.count_nonzero(bad))} point(s) behind or on the focal plane of camera {cam.name!r}"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = pc[..., :2] / np.where(bad, 1.0, z)[..., None]
    if cam.has_distortion:
        xy = distort_normalized(xy, cam.dist)
    px = np.stack([cam.fx * xy[..., 0] + cam.cx, cam.fy * xy[..., 1] + cam.cy], axis=-1)
    if np.any(bad):
        px[bad] = np.inf
    return px


def project(p, cam: CameraModel) -> np.ndarray:
    """Project a single world point to a pixel 2-vector."""
    p = np.asarray(p, dtype=float).reshape(3)
    return project_points(p[None], cam)[0]


def _jacobian_det(u, dist) -> np.ndarray:
    a, b, c, d = _distortion_jacobian(u, dist)
    return a * d - b * c


def fold_radius2(dist) -> float:
    """Squared normalized radius where the radial map ``r * f(r)`` stops increasing.

    Smallest positive root ``s`` of ``1 + 3 k1 s + 5 k2 s^2 + 7 k3 s^3``;
    ``inf`` when the map is monotone for every radius.
    """
    k1, k2, _, _, k3 = dist
    coef = np.array([7.0 * k3, 5.0 * k2, 3.0 * k1, 1.0])
    scale = np.max(np.abs(coef))
    while coef.size > 1 and abs(coef[0]) < 1e-12 * scale:
        coef = coef[1:]
    roots = np.roots(coef)
    real = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and r.real > 0]
    return min(real) if real else np.inf


def undistort_points(px, cam: CameraModel, *, raise_on_failure: bool = True):
    """Invert lens distortion for pixel coordinates ``(..., 2)``.

    Safeguarded Newton iteration in normalized coordinates: every step is
    halved until it lowers the residual while staying inside the fold radius
    of the radial polynomial with a positive Jacobian determinant. This keeps
    the iterate on the branch that contains the principal point, so folded
    preimages are never returned. Capped at
    ``UNDISTORT_MAX_ITER`` iterations with tolerance ``UNDISTORT_TOL``.
    Returns ``(undistorted_px, converged)``.
    """
    px = np.asarray(px, dtype=float)
    if not cam.has_distortion:
        return px.copy(), np.ones(px.shape[:-1], dtype=bool)
    dist = cam.dist
    target = np.stack([(px[..., 0] - cam.cx) / cam.fx, (px[..., 1] - cam.cy) / cam.fy], axis=-1)
    finite = np.all(np.isfinite(target), axis=-1)
    r2_max = fold_radius2(dist)

    def admissible(v):
        return (np.sum(v * v, axis=-1) < r2_max) & (_jacobian_det(v, dist) > 0)

    u = np.where(finite[..., None], target, 0.0)
    for _ in range(60):
        outside = ~admissible(u)
        if not np.any(outside):
            break
        u = np.where(outside[..., None], 0.5 * u, u)

    def residual(v):
        return distort_normalized(v, dist) - target

    resid = residual(u)
    err = np.max(np.abs(resid), axis=-1)
    done = ~finite | (err <= UNDISTORT_TOL)
    stalled = np.zeros_like(done)
    it = 0
    for it in range(1, UNDISTORT_MAX_ITER + 1):
        active = ~(done | stalled)
        if not np.any(active):
            break
        a, b, c, d = _distortion_jacobian(u, dist)
        det = a * d - b * c
        safe = np.where(np.abs(det) > 1e-300, det, 1.0)
        step = np.stack([(d * resid[..., 0] - b * resid[..., 1]) / safe,
                         (a * resid[..., 1] - c * resid[..., 0]) / safe], axis=-1)
        norm = np.linalg.norm(resid, axis=-1)
        alpha = np.ones(u.shape[:-1])
        pending = active.copy()
        new_u = u.copy()
        for _ in range(40):
            cand = u - alpha[..., None] * step
            r_c = residual(cand)
            ok = pending & (np.linalg.norm(r_c, axis=-1) < norm) & admissible(cand)
            new_u[ok] = cand[ok]
            pending &= ~ok
            if not np.any(pending):
                break
            alpha = np.where(pending, 0.5 * alpha, alpha)
        stalled |= pending
        u = new_u
        resid = residual(u)
        done |= np.max(np.abs(resid), axis=-1) <= UNDISTORT_TOL
    converged = done & finite
    if raise_on_failure and not np.all(converged | ~finite):
        raise ConvergenceError(
            f"undistortion did not converge for {int(np.count_nonzero(~converged & finite))} point(s) "
            f"in camera {cam.name!r}",
            iterations=it,
        )
    out = np.stack([cam.fx * u[..., 0] + cam.cx, cam.fy * u[..., 1] + cam.cy], axis=-1)
    out[~converged] = np.nan
    return out, converged


def undistort_point(px, cam: CameraModel) -> np.ndarray:
    out, _ = undistort_points(np.asarray(px, dtype=float).reshape(1, 2), cam)
    return out[0]


def projection_matrix(cam: CameraModel) -> np.ndarray:
    """``K [R | t]`` (valid for undistorted pixels)."""
    return cam.K @ np.hstack([cam.R, cam.t[:, None]])


def look_at(name: str, position: Sequence[float], target: Sequence[float], *,
            image_size=(2688, 1520), focal: float = 1344.0, up=(0.0, 0.0, 1.0),
            dist=(0.0,) * 5) -> CameraModel:
    """Build a camera at ``position`` whose optical axis passes through ``target``."""
    c = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - c
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ConfigError("camera position and target coincide")
    forward /= norm
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-12:
        raise ConfigError("viewing direction parallel to up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.vstack([right, down, forward])
    t = -R @ c
    w, h = image_size
    return CameraModel(
        name=name, image_size=(w, h), fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0,
        dist=tuple(dist), rotation=tuple(matrix_to_rodrigues(R)), translation=tuple(t),
    )
