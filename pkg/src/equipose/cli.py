"""Command-line pipeline: synthetic data, lifting, statistics and behavior protocol.

Every subcommand reads a JSON config (``--config``) whose values are
overridden by explicit flags, validates the merged :class:`PipelineConfig`,
writes it to ``<output_dir>/config.resolved.json`` and runs one stage.
Stages exchange data only through files in the output directory::

    poses/<subject>.csv          lift
    stats/<subject>.{csv,txt}    lift, stats
    segments.csv                 segments
    models/<behavior>.json       train
    reports/eval.{csv,txt}       eval
    models/bias/<behavior>.json  bias
    reports/bias.{csv,txt}       bias

Errors are reported on stderr as one line ``error[<kind>]: <message>`` and
mapped to exit codes 2 (config), 3 (parse), 4 (numeric) and 5 (state).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import synth as synth_mod
from ._validation import check_min_cams, check_odd_window, check_positive, check_probability
from .behavior.annotations import BEHAVIORS, read_annotations
from .behavior.model import (ForestModel, bias_table, eval_table, evaluate, prediction_distribution,
                             train_forest)
from .behavior.segments import (attach_features, balance_by_group, extract_segments, read_segments,
                                split_segments, write_segments)
from .errors import ConfigError, EquiposeError, StateError
from .geometry import load_calibration
from .lifting import INLIER_THRESHOLD_PX, LiftConfig, lift_sequence, read_pose_csv, write_pose_csv
from .seeding import int_seed
from .skeleton import default_skeleton, load_skeleton, pose_statistics
from .tracks import TrackPreprocessor, read_track_dir

log = logging.getLogger("equipose")

COMMANDS = ("synth", "lift", "stats", "segments", "train", "eval", "bias")


@dataclass
class PipelineConfig:
    """All pipeline settings; the resolved snapshot of one run re-runs any stage."""

    output_dir: str = "out"
    calibration: str | None = None
    tracks_dir: str | None = None
    annotations: str | None = None
    skeleton: str | None = None
    likelihood_threshold: float = 0.6
    reproj_threshold_px: float = 200.0
    min_cams: int = 2
    inlier_threshold_px: float | None = INLIER_THRESHOLD_PX
    medfilt_window: int = 13
    arma_order: tuple[int, int] | None = (3, 1)
    segment_length: int = 200
    n_trees: int = 100
    seed: int = 0
    threads: int | None = None
    # synthetic scenario
    n_subjects: int = 4
    n_frames: int = 500
    noise_sigma: float = 1.0
    occlusion_prob: float = 0.0
    outlier_prob: float = 0.0
    outlier_cameras: list[str] = field(default_factory=list)
    box: tuple[float, float, float] = (6.0, 5.0, 3.0)

    def validate(self) -> PipelineConfig:
        check_probability(self.likelihood_threshold, "likelihood_threshold")
        check_positive(self.reproj_threshold_px, "reproj_threshold_px", strict=False)
        check_min_cams(self.min_cams)
        if self.inlier_threshold_px == "off":
            self.inlier_threshold_px = None
        if self.inlier_threshold_px is not None:
            check_positive(self.inlier_threshold_px, "inlier_threshold_px", strict=False)
        check_odd_window(self.medfilt_window)
        if self.arma_order is not None:
            if len(self.arma_order) != 2 or any(int(v) < 0 for v in self.arma_order):
                raise ConfigError(f"arma_order must be two non-negative integers, got {self.arma_order}")
            self.arma_order = (int(self.arma_order[0]), int(self.arma_order[1]))
            if self.arma_order == (0, 0):
                self.arma_order = None
        for name in ("segment_length", "n_trees", "n_subjects", "n_frames"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError(f"threads must be a positive integer, got {self.threads!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        check_positive(self.noise_sigma, "noise_sigma", strict=False)
        check_probability(self.occlusion_prob, "occlusion_prob")
        check_probability(self.outlier_prob, "outlier_prob")
        self.box = tuple(float(v) for v in self.box)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arma_order"] = list(self.arma_order) if self.arma_order else None
        d["box"] = list(self.box)
        return d

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def n_jobs(self) -> int:
        return self.threads or os.cpu_count() or 1

    def path(self, name: str) -> Path:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required for this command")
        return Path(value)


_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values = load_config(args.config) if args.config else {}
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if "arma_order" in values and values["arma_order"] is not None:
        values["arma_order"] = tuple(values["arma_order"])
    return PipelineConfig(**values).validate()


def write_snapshot(cfg: PipelineConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.resolved.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# -- stages -----------------------------------------------------------------------


def _skeleton(cfg: PipelineConfig):
    return load_skeleton(cfg.skeleton) if cfg.skeleton else default_skeleton()


def cmd_synth(cfg: PipelineConfig) -> None:
    scenario = synth_mod.SynthScenario(
        box=cfg.box, n_frames=cfg.n_frames, seed=cfg.seed, noise_sigma=cfg.noise_sigma,
        occlusion_prob=cfg.occlusion_prob, outlier_prob=cfg.outlier_prob,
        outlier_cameras=tuple(cfg.outlier_cameras),
    )
    synth_mod.write_dataset(cfg.out, scenario, cfg.n_subjects, _skeleton(cfg))
    log.info("wrote %d synthetic subject(s) to %s", cfg.n_subjects, cfg.out)


def _subject_track_dirs(root: Path) -> dict[str, Path]:
    if not root.is_dir():
        raise ConfigError(f"track directory not found: {root}")
    if any(root.glob("*.csv")):
        return {root.name: root}
    found = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        for cand in (sub / "tracks", sub):
            if cand.is_dir() and any(cand.glob("*.csv")):
                found[sub.name] = cand
                break
    if not found:
        raise ConfigError(f"no track CSV files under {root}")
    return found


def cmd_lift(cfg: PipelineConfig) -> None:
    rig = load_calibration(cfg.path("calibration"))
    skel = _skeleton(cfg)
    prep = TrackPreprocessor(cfg.likelihood_threshold, cfg.arma_order, target_resolution=rig).fit()
    lift_cfg = LiftConfig(cfg.reproj_threshold_px, cfg.min_cams, cfg.medfilt_window, cfg.n_jobs,
                          cfg.inlier_threshold_px)
    (cfg.out / "poses").mkdir(parents=True, exist_ok=True)
    for subject, tdir in _subject_track_dirs(cfg.path("tracks_dir")).items():
        tracks = prep.transform(read_track_dir(tdir, skel))
        if tracks[0].n_frames == 0:
            raise ConfigError(f"subject {subject}: tracks contain zero frames")
        poses = lift_sequence(tracks, rig, lift_cfg, skel)
        write_pose_csv(poses, cfg.out / "poses" / f"{subject}.csv")
        _write_stats(cfg, subject, poses)
        log.info("%s: %d frames lifted", subject, poses.n_frames)


def _write_stats(cfg: PipelineConfig, subject: str, poses) -> None:
    stats = pose_statistics(poses)
    sdir = cfg.out / "stats"
    sdir.mkdir(parents=True, exist_ok=True)
    (sdir / f"{subject}.csv").write_text(stats.to_csv())
    (sdir / f"{subject}.txt").write_text(stats.to_text())


def _load_poses(cfg: PipelineConfig) -> dict:
    pdir = cfg.out / "poses"
    files = sorted(pdir.glob("*.csv")) if pdir.is_dir() else []
    if not files:
        raise StateError(f"no pose files in {pdir} (run lift first)")
    skel = _skeleton(cfg)
    return {f.stem: read_pose_csv(f, skel) for f in files}


def cmd_stats(cfg: PipelineConfig) -> None:
    for subject, poses in _load_poses(cfg).items():
        _write_stats(cfg, subject, poses)


def cmd_segments(cfg: PipelineConfig) -> None:
    annotations = read_annotations(cfg.path("annotations"))
    poses = _load_poses(cfg)
    missing = sorted(set(annotations) - set(poses))
    if missing:
        log.warning("annotated subjects without poses are skipped: %s", ", ".join(missing))
    segments = []
    for behavior in BEHAVIORS:
        pairs = {}
        for subject in sorted(set(annotations) & set(poses)):
            pairs[subject], _ = extract_segments(annotations[subject], poses[subject], behavior,
                                                 cfg.seed, length=cfg.segment_length,
                                                 with_features=False)
        split_segments(pairs, int_seed(cfg.seed, "split", behavior))
        segments.extend(seg for subject in sorted(pairs) for pair in pairs[subject] for seg in pair)
    write_segments(segments, cfg.out / "segments.csv")


def _segments_with_features(cfg: PipelineConfig):
    path = cfg.out / "segments.csv"
    if not path.exists():
        raise StateError(f"{path} not found (run segments first)")
    segments = read_segments(path, cfg.segment_length)
    attach_features(segments, _load_poses(cfg))
    return segments


def _select(segments, behavior: str, split: str):
    return [s for s in segments if s.behavior == behavior and s.split == split]


def cmd_train(cfg: PipelineConfig) -> None:
    segments = _segments_with_features(cfg)
    mdir = cfg.out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    for behavior in BEHAVIORS:
        train = _select(segments, behavior, "train")
        model = train_forest(train, cfg.n_trees, int_seed(cfg.seed, "forest", behavior),
                             behavior=behavior, n_jobs=cfg.n_jobs)
        model.save(mdir / f"{behavior}.json")


def _write_report(cfg: PipelineConfig, name: str, tables: tuple[str, str]) -> None:
    rdir = cfg.out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / f"{name}.csv").write_text(tables[0])
    (rdir / f"{name}.txt").write_text(tables[1])
    sys.stdout.write(tables[1])


def cmd_eval(cfg: PipelineConfig) -> None:
    reports = []
    for behavior in BEHAVIORS:
        path = cfg.out / "models" / f"{behavior}.json"
        if not path.exists():
            raise StateError(f"model not found: {path} (run train first)")
    segments = _segments_with_features(cfg)
    for behavior in BEHAVIORS:
        model = ForestModel.load(cfg.out / "models" / f"{behavior}.json")
        reports.append(evaluate(model, _select(segments, behavior, "test")))
    _write_report(cfg, "eval", eval_table(reports))


def cmd_bias(cfg: PipelineConfig) -> None:
    segments = _segments_with_features(cfg)
    mdir = cfg.out / "models" / "bias"
    mdir.mkdir(parents=True, exist_ok=True)
    reports = []
    for behavior in BEHAVIORS:
        train = balance_by_group(_select(segments, behavior, "train"),
                                 int_seed(cfg.seed, "bias", behavior))
        model = train_forest(train, cfg.n_trees, int_seed(cfg.seed, "bias-forest", behavior),
                             behavior=behavior, n_jobs=cfg.n_jobs)
        model.save(mdir / f"{behavior}.json")
        test = _select(segments, behavior, "test")
        report = evaluate(model, test)
        report.distribution = prediction_distribution(model, test)
        reports.append(report)
    _write_report(cfg, "bias", bias_table(reports))


HANDLERS = {
    "synth": cmd_synth, "lift": cmd_lift, "stats": cmd_stats, "segments": cmd_segments,
    "train": cmd_train, "eval": cmd_eval, "bias": cmd_bias,
}


# -- argument parsing -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _threshold_or_off(text: str):
    return "off" if text.strip().lower() == "off" else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("pipeline")
    g.add_argument("--config", help="JSON config; explicit flags override its values")
    g.add_argument("-o", "--output-dir", dest="output_dir")
    g.add_argument("--calibration")
    g.add_argument("--tracks-dir", dest="tracks_dir")
    g.add_argument("--annotations")
    g.add_argument("--skeleton")
    g.add_argument("--likelihood-threshold", dest="likelihood_threshold", type=float)
    g.add_argument("--reproj-threshold-px", dest="reproj_threshold_px", type=float)
    g.add_argument("--min-cams", dest="min_cams", type=int)
    g.add_argument("--inlier-threshold-px", dest="inlier_threshold_px", type=_threshold_or_off,
                   help="consensus bound of the camera-subset search; 'off' keeps the lowest score")
    g.add_argument("--medfilt-window", dest="medfilt_window", type=int)
    g.add_argument("--arma-order", dest="arma_order", type=int, nargs=2, metavar=("P", "Q"),
                   help="ARMA orders; 0 0 disables smoothing")
    g.add_argument("--segment-length", dest="segment_length", type=int)
    g.add_argument("--n-trees", dest="n_trees", type=int)
    g.add_argument("--seed", type=int, help="master seed for every randomized stage")
    g.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    g.add_argument("-v", "--verbose", action="store_true", default=None)
    s = common.add_argument_group("synthetic data")
    s.add_argument("--n-subjects", dest="n_subjects", type=int)
    s.add_argument("--n-frames", dest="n_frames", type=int)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    s.add_argument("--occlusion-prob", dest="occlusion_prob", type=float)
    s.add_argument("--outlier-prob", dest="outlier_prob", type=float)
    s.add_argument("--outlier-cameras", dest="outlier_cameras", nargs="+")
    s.add_argument("--box", type=float, nargs=3, metavar=("L", "W", "H"))

    parser = _Parser(prog="equipose", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "write a synthetic multi-camera dataset with ground truth",
        "lift": "preprocess tracks, triangulate 3D poses, write pose CSVs and statistics",
        "stats": "recompute pose statistics from lifted pose CSVs",
        "segments": "extract paired behavior segments and split them per subject",
        "train": "train one forest per behavior on the training split",
        "eval": "evaluate trained forests on the test split",
        "bias": "retrain on pain-balanced data and report prediction rates per group",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        write_snapshot(cfg)
        HANDLERS[args.command](cfg)
    except EquiposeError as exc:
        msg = " ".join(str(exc).split())
        print(f"error[{exc.kind}]: {msg}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
