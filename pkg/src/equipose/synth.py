"""Synthetic four-corner camera rig and horse-like motion with known ground truth.

The generator stands in for real recordings: it produces the exact 3D
trajectory, per-camera 2D tracks with controlled corruption, and behavior
annotations that hold by construction.

Behavior semantics (documented constants, not biology):

* eating: mean height of the head keypoints below ``EATING_HEIGHT_FRACTION``
  of the withers height;
* movement: trunk centroid (midpoint of withers and croup) moving faster
  than ``MOVEMENT_SPEED`` world units per second;
* standing: trunk centroid at or below that speed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .behavior.annotations import AnnotationSet, write_annotations
from .errors import ConfigError
from .geometry import Rig, look_at, project_points, save_calibration
from .lifting import PoseSequence3D, write_pose_csv
from .seeding import int_seed, rng
from .skeleton import HEAD_GROUPS, SkeletonDefinition, default_skeleton
from .tracks import TrackSet, rescale, write_tracks

EATING_HEIGHT_FRACTION = 0.5
MOVEMENT_SPEED = 0.1
WALK_SPEED = 0.6
BOUT_FRAMES = (260, 600)
# horizontal reach of any keypoint from the body origin, plus margin
BODY_REACH = 1.7
BODY_HEIGHT = 2.4

_BOUT_WEIGHTS = {
    "healthy": {"stand": 0.40, "eat": 0.35, "move": 0.25},
    "painful": {"stand": 0.30, "eat": 0.30, "move": 0.40},
}
_LEGS = {"front_left": (0.55, 0.22, "carpus", 0.0), "front_right": (0.55, -0.22, "carpus", np.pi),
         "hind_left": (-0.55, 0.22, "tarsus", np.pi), "hind_right": (-0.55, -0.22, "tarsus", 0.0)}


def make_default_rig(box=(6.0, 5.0, 3.0), image_size=(2688, 1520), focal: float = 1344.0) -> Rig:
    """Four cameras at the upper corners of the box, each aimed at the box center."""
    L, W, H = (float(v) for v in box)
    if min(L, W, H) <= 0:
        raise ConfigError(f"box dimensions must be positive, got {box}")
    center = (L / 2, W / 2, H / 2)
    corners = [(0.0, 0.0, H), (L, 0.0, H), (L, W, H), (0.0, W, H)]
    return Rig(tuple(
        look_at(f"cam{i + 1}", c, center, image_size=image_size, focal=focal)
        for i, c in enumerate(corners)
    ))


@dataclass
class SynthScenario:
    box: tuple[float, float, float] = (6.0, 5.0, 3.0)
    n_frames: int = 500
    seed: int = 0
    noise_sigma: float = 0.0
    occlusion_prob: float = 0.0
    # fraction of occluded observations still emitted with likelihood < 0.6
    occluded_emit_prob: float = 0.5
    outlier_cameras: tuple[str, ...] = ()
    outlier_offset_px: float = 300.0
    outlier_prob: float = 0.0
    fps: float = 20.0
    pain_state: str = "healthy"
    track_resolution: tuple[int, int] | None = None
    focal: float = 1344.0
    rig: Rig | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("occlusion_prob", "occluded_emit_prob", "outlier_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be at least 1")
        if self.rig is None:
            self.rig = make_default_rig(self.box, focal=self.focal)
        unknown = set(self.outlier_cameras) - set(self.rig.names)
        if unknown:
            raise ConfigError(f"unknown outlier cameras {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(replace(self, rig=None))
        d.pop("rig")
        return d


@dataclass
class GroundTruth:
    skeleton: SkeletonDefinition
    position: np.ndarray
    annotations: list[tuple[str, int, int]]
    trunk_speed: np.ndarray
    head_height: np.ndarray
    fps: float

    @property
    def n_frames(self) -> int:
        return self.position.shape[0]

    def as_pose_sequence(self, visible=None) -> PoseSequence3D:
        F, K, _ = self.position.shape
        present = np.ones((F, K), dtype=bool) if visible is None else np.asarray(visible, bool)
        return PoseSequence3D(
            skeleton=self.skeleton,
            position=self.position.copy(),
            reproj_error=np.full((F, K), np.nan),
            n_cams=np.zeros((F, K), dtype=int),
            present=present,
            provenance={"source": "ground truth"},
        )


def _ramp(indicator: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width) / width
    padded = np.concatenate([np.full(width, indicator[0]), indicator, np.full(width, indicator[-1])])
    return np.convolve(padded, kernel, mode="same")[width:-width]


def _runs(mask: np.ndarray):
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def _bout_schedule(n_frames: int, pain_state: str, gen: np.random.Generator):
    weights = _BOUT_WEIGHTS[pain_state]
    state = "stand"
    states = np.empty(n_frames, dtype=object)
    t = 0
    while t < n_frames:
        d = int(gen.integers(BOUT_FRAMES[0], BOUT_FRAMES[1] + 1))
        states[t:t + d] = state
        t += d
        others = [s for s in weights if s != state]
        p = np.array([weights[s] for s in others])
        state = others[int(gen.choice(len(others), p=p / p.sum()))]
    return states


def synth_motion(skel: SkeletonDefinition | None = None, frames: int = 500, seed: int = 0, *,
                 box=(6.0, 5.0, 3.0), fps: float = 20.0, pain_state: str = "healthy") -> GroundTruth:
    """Generate a horse-like trajectory inside ``box`` plus its behavior intervals."""
    skel = skel or default_skeleton()
    if frames < 1:
        raise ConfigError("frames must be at least 1")
    L, W, H = (float(v) for v in box)
    radius = min(L, W) / 2 - BODY_REACH
    if radius < 0.2 or H < BODY_HEIGHT:
        raise ConfigError(f"box {box} too small for the synthetic animal")
    gen = rng(seed, "motion")
    t = np.arange(frames) / fps

    states = _bout_schedule(frames, pain_state, gen)
    moving = _ramp((states == "move").astype(float), 15)
    head_down = _ramp((states == "eat").astype(float), 20)
    direction = 1.0 if gen.random() < 0.5 else -1.0
    phi0 = gen.uniform(0, 2 * np.pi)
    phases = gen.uniform(0, 2 * np.pi, size=3)

    speed = WALK_SPEED * moving
    arc = np.concatenate([[0.0], np.cumsum(speed[1:] / fps)])
    phi = phi0 + direction * arc / radius
    root = np.stack([L / 2 + radius * np.cos(phi), W / 2 + radius * np.sin(phi)], axis=-1)
    heading = phi + direction * np.pi / 2
    gait = np.concatenate([[0.0], np.cumsum(2 * np.pi * 1.6 * moving[1:] / fps)])

    alpha = 0.9 + 0.1 * moving - 1.8 * head_down + 0.08 * np.sin(2 * np.pi * 0.1 * t + phases[0])
    beta = 0.35 * alpha - 1.1
    base = np.array([0.65, 0.0, 1.45])
    zero = np.zeros(frames)
    head_top = base + 0.8 * np.stack([np.cos(alpha), zero, np.sin(alpha)], axis=-1)
    d = np.stack([np.cos(beta), zero, np.sin(beta)], axis=-1)
    n = np.stack([-np.sin(beta), zero, np.cos(beta)], axis=-1)
    y = np.array([0.0, 1.0, 0.0])
    sway = 0.08 * np.sin(2 * np.pi * 0.3 * t + phases[1])

    local = {
        "head_top": head_top,
        "nostril_left": head_top + 0.55 * d + 0.05 * y,
        "nostril_right": head_top + 0.55 * d - 0.05 * y,
        "eye_left": head_top + 0.18 * d + 0.04 * n + 0.09 * y,
        "eye_right": head_top + 0.18 * d + 0.04 * n - 0.09 * y,
        "ear_left": head_top - 0.05 * d + 0.12 * n + 0.07 * y,
        "ear_right": head_top - 0.05 * d + 0.12 * n - 0.07 * y,
        "withers": np.tile([0.55, 0.0, 1.6], (frames, 1)),
        "croup": np.tile([-0.55, 0.0, 1.55], (frames, 1)),
        "tail_base": np.tile([-0.7, 0.0, 1.45], (frames, 1)),
        "tail_mid": np.stack([np.full(frames, -0.8), 0.5 * sway, np.full(frames, 1.1)], axis=-1),
        "tail_tip": np.stack([np.full(frames, -0.85), sway, np.full(frames, 0.75)], axis=-1),
    }
    for leg, (lx, ly, joint, offset) in _LEGS.items():
        swing = 0.35 * moving * np.sin(gait + offset)
        lift = 0.18 * moving * np.maximum(0.0, np.sin(gait + offset))
        for part, depth, w in (("upper", 0.0, 0.0), (joint, 0.55, 0.5), ("fetlock", 0.85, 1.0),
                               ("hoof", 1.0, 1.0)):
            local[f"{leg}_{part}"] = np.stack([
                lx + depth * np.sin(swing),
                np.full(frames, ly),
                1.05 - depth * np.cos(swing) + w * lift,
            ], axis=-1)

    missing = [k for k in skel.keypoints if k not in local]
    if missing:
        raise ConfigError(f"motion generator has no model for keypoints {missing}")
    body = np.stack([local[k] for k in skel.keypoints], axis=1)
    c, s = np.cos(heading)[:, None], np.sin(heading)[:, None]
    world = np.empty_like(body)
    world[..., 0] = c * body[..., 0] - s * body[..., 1] + root[:, None, 0]
    world[..., 1] = s * body[..., 0] + c * body[..., 1] + root[:, None, 1]
    world[..., 2] = body[..., 2]

    trunk = 0.5 * (world[:, skel.index("withers")] + world[:, skel.index("croup")])
    trunk_speed = np.zeros(frames)
    if frames > 1:
        trunk_speed[1:] = np.linalg.norm(np.diff(trunk, axis=0), axis=-1) * fps
        trunk_speed[0] = trunk_speed[1]
    head_idx = [i for g in HEAD_GROUPS for i in skel.members(g)]
    head_height = world[:, head_idx, 2].mean(axis=1)
    withers_z = world[:, skel.index("withers"), 2]

    labels = {
        "eating": head_height < EATING_HEIGHT_FRACTION * withers_z,
        "movement": trunk_speed > MOVEMENT_SPEED,
    }
    labels["standing"] = ~labels["movement"]
    annotations = sorted(
        ((b, s_, e) for b, m in labels.items() for s_, e in _runs(m)),
        key=lambda r: (r[1], r[0]),
    )
    return GroundTruth(skel, world, annotations, trunk_speed, head_height, fps)


def observe(truth: GroundTruth, scenario: SynthScenario, *, return_info: bool = False):
    """Project ground truth into every camera of the scenario rig and corrupt it.

    Clean observations get likelihood 1. Occluded cells are either omitted or,
    with probability ``occluded_emit_prob``, emitted at a displaced position
    with likelihood drawn from [0, 0.6). Outlier frames shift every keypoint
    of an outlier camera by ``outlier_offset_px`` in a random direction.
    Points projecting outside the image are missing.
    """
    rig = scenario.rig
    F, K, _ = truth.position.shape
    noise_rng = rng(scenario.seed, "noise")
    occl_rng = rng(scenario.seed, "occlusion")
    out_rng = rng(scenario.seed, "outliers")
    tracks = []
    outlier_frames = {}
    for cam in rig:
        exact = project_points(truth.position, cam, check=False)
        w, h = cam.image_size
        in_image = (np.all(np.isfinite(exact), axis=-1) & (exact[..., 0] >= 0) & (exact[..., 0] < w)
                    & (exact[..., 1] >= 0) & (exact[..., 1] < h))
        noise = noise_rng.standard_normal((F, K, 2))
        xy = exact + scenario.noise_sigma * noise if scenario.noise_sigma > 0 else exact.copy()

        occluded = occl_rng.random((F, K)) < scenario.occlusion_prob
        emitted = occluded & (occl_rng.random((F, K)) < scenario.occluded_emit_prob)
        likelihood = np.where(emitted, 0.6 * occl_rng.random((F, K)), 1.0)
        displacement = 25.0 * occl_rng.standard_normal((F, K, 2))
        xy = np.where(emitted[..., None], xy + displacement, xy)

        hit = out_rng.random(F) < scenario.outlier_prob
        angle = out_rng.uniform(0, 2 * np.pi, F)
        if cam.name in scenario.outlier_cameras:
            offset = scenario.outlier_offset_px * np.stack([np.cos(angle), np.sin(angle)], axis=-1)
            xy = xy + np.where(hit[:, None], offset, 0.0)[:, None, :]
            outlier_frames[cam.name] = hit
        else:
            outlier_frames[cam.name] = np.zeros(F, dtype=bool)

        missing = ~in_image | (occluded & ~emitted)
        xy[missing] = np.nan
        likelihood = np.where(missing, 0.0, likelihood)
        ts = TrackSet(cam.name, cam.image_size, truth.skeleton.keypoints, xy, likelihood,
                      missing, scenario.fps)
        if scenario.track_resolution is not None:
            ts = rescale(ts, scenario.track_resolution)
        tracks.append(ts)
    if return_info:
        return tracks, {"outlier_frames": outlier_frames}
    return tracks


def true_visibility(tracks, tau: float = 0.6, min_cams: int = 2) -> np.ndarray:
    """Cells observed (with likelihood >= ``tau``) by at least ``min_cams`` cameras."""
    count = sum((~t.missing & (t.likelihood >= tau)).astype(int) for t in tracks)
    return count >= min_cams


@dataclass
class TruthReport:
    rms: float
    per_keypoint_rms: dict[str, float]
    n_evaluated: int
    tp: int
    fp: int
    fn: int
    tn: int

    def to_text(self) -> str:
        lines = [
            f"3D RMS over {self.n_evaluated} present keypoints: {self.rms:.6g}",
            f"presence vs visibility: TP={self.tp} FP={self.fp} FN={self.fn} TN={self.tn}",
        ]
        lines += [f"  {k:<22} {v:.6g}" for k, v in self.per_keypoint_rms.items()]
        return "\n".join(lines) + "\n"


def evaluate_against_truth(estimate: PoseSequence3D, truth, visible=None) -> TruthReport:
    """3D RMS error of present estimated keypoints and presence confusion.

    ``truth`` is a :class:`GroundTruth` or a ground-truth pose sequence; when
    ``visible`` is omitted the truth's ``present`` mask is used (all cells for
    a :class:`GroundTruth`).
    """
    true_pos = np.asarray(truth.position, dtype=float)
    if true_pos.shape[0] != estimate.n_frames:
        raise ConfigError(f"frame count mismatch: estimate {estimate.n_frames}, truth {true_pos.shape[0]}")
    if visible is None:
        visible = getattr(truth, "present", np.ones(true_pos.shape[:2], dtype=bool))
    visible = np.asarray(visible, dtype=bool)
    present = estimate.present
    sq = np.sum((estimate.position - true_pos) ** 2, axis=-1)
    n = int(present.sum())
    rms = float(np.sqrt(sq[present].mean())) if n else float("nan")
    per_kp = {}
    for k, name in enumerate(estimate.skeleton.keypoints):
        m = present[:, k]
        per_kp[name] = float(np.sqrt(sq[m, k].mean())) if m.any() else float("nan")
    return TruthReport(
        rms=rms, per_keypoint_rms=per_kp, n_evaluated=n,
        tp=int((present & visible).sum()), fp=int((present & ~visible).sum()),
        fn=int((~present & visible).sum()), tn=int((~present & ~visible).sum()),
    )


# -- dataset on disk ------------------------------------------------------------------


def subject_ids(n_subjects: int) -> list[tuple[str, str]]:
    """Subject ids with pain states; about 9 of every 13 subjects are painful."""
    n_painful = int(round(n_subjects * 9 / 13))
    return [(f"S{i + 1:02d}", "painful" if i < n_painful else "healthy") for i in range(n_subjects)]


def write_dataset(out_dir, scenario: SynthScenario, n_subjects: int = 1,
                  skel: SkeletonDefinition | None = None) -> dict:
    """Write calibration, per-subject tracks and truth, and annotations under ``out_dir``.

    Each subject derives its own seed from ``scenario.seed``. Returns a
    manifest of the files written.
    """
    if n_subjects < 1:
        raise ConfigError("n_subjects must be at least 1")
    skel = skel or default_skeleton()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_calibration(scenario.rig, out / "calibration.json")
    (out / "skeleton.json").write_text(json.dumps(skel.to_dict(), indent=2) + "\n")
    annotations = []
    manifest = {"calibration": "calibration.json", "annotations": "annotations.csv", "subjects": {}}
    for subject, pain in subject_ids(n_subjects):
        sub_seed = int_seed(scenario.seed, "subject", subject)
        sc = replace(scenario, seed=sub_seed, pain_state=pain)
        truth = synth_motion(skel, sc.n_frames, sub_seed, box=sc.box, fps=sc.fps, pain_state=pain)
        tracks = observe(truth, sc)
        sdir = out / "subjects" / subject
        tdir = sdir / "tracks"
        tdir.mkdir(parents=True, exist_ok=True)
        for ts in tracks:
            write_tracks(ts, tdir / f"{ts.camera}.csv")
        write_pose_csv(truth.as_pose_sequence(true_visibility(tracks)), sdir / "truth.csv",
                       reproj_fields=False)
        annotations.append(AnnotationSet(subject, pain, list(truth.annotations)))
        manifest["subjects"][subject] = {"pain_state": pain, "seed": sub_seed}
    write_annotations(annotations, out / "annotations.csv")
    return manifest
