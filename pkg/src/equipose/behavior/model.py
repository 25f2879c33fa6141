"""Segment classification by per-frame forest votes, and its evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import ConfigError, StateError
from .annotations import PAIN_STATES
from .forest import RandomForest

MODEL_FORMAT = "equipose.forest"


def vote(frame_probabilities) -> int:
    """Average per-frame class-1 probabilities and round; 0.5 rounds up."""
    p = np.asarray(frame_probabilities, dtype=float)
    return int(p.mean() >= 0.5)


def _stack_segments(X) -> np.ndarray:
    X = np.asarray(X, dtype=float) if not isinstance(X, np.ndarray) else X
    if X.ndim != 3:
        raise ConfigError(f"expected segments shaped (n_segments, frames, features), got {X.shape}")
    return X


class SegmentVotingClassifier(ClassifierMixin, BaseEstimator):
    """Forest trained on frames, predicting whole segments by vote.

    Each training segment contributes all its frames as rows carrying the
    segment label. A segment is predicted positive when the mean per-frame
    class-1 probability is at least 0.5.
    """

    def __init__(self, n_estimators=100, max_features="sqrt", min_samples_split=2,
                 min_samples_leaf=1, random_state=None, n_jobs=None):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X = _stack_segments(X)
        y = np.asarray(y, dtype=int)
        if y.shape != (X.shape[0],):
            raise ConfigError("one label per segment required")
        rows = X.reshape(-1, X.shape[2])
        labels = np.repeat(y, X.shape[1])
        self.forest_ = RandomForest(
            n_estimators=self.n_estimators, max_features=self.max_features,
            min_samples_split=self.min_samples_split, min_samples_leaf=self.min_samples_leaf,
            random_state=self.random_state, n_jobs=self.n_jobs,
        ).fit(rows, labels)
        self.classes_ = self.forest_.classes_
        self.n_features_in_ = X.shape[2]
        return self

    def frame_probabilities(self, X) -> np.ndarray:
        check_is_fitted(self, "forest_")
        X = _stack_segments(X)
        if X.shape[2] != self.n_features_in_:
            raise ConfigError(f"expected {self.n_features_in_} features per frame, got {X.shape[2]}")
        p = self.forest_.predict_proba(X.reshape(-1, X.shape[2]))[:, 1]
        return p.reshape(X.shape[:2])

    def predict_proba(self, X) -> np.ndarray:
        p1 = self.frame_probabilities(X).mean(axis=1)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return np.array([vote(p) for p in self.frame_probabilities(X)], dtype=int)


@dataclass
class ForestModel:
    behavior: str
    seed: int
    classifier: SegmentVotingClassifier

    @property
    def n_features(self) -> int:
        return self.classifier.n_features_in_

    @property
    def trees(self):
        return self.classifier.forest_.trees_

    def to_dict(self) -> dict:
        params = self.classifier.get_params()
        params.pop("n_jobs")
        return {
            "format": MODEL_FORMAT,
            "version": 1,
            "behavior": self.behavior,
            "seed": self.seed,
            "n_features": self.n_features,
            "n_trees": len(self.trees),
            "params": params,
            "trees": [t.to_dict() for t in self.trees],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> ForestModel:
        path = Path(path)
        if not path.exists():
            raise StateError(f"model not found: {path} (run train first)")
        d = json.loads(path.read_text())
        if d.get("format") != MODEL_FORMAT:
            raise ConfigError(f"{path} is not a forest model")
        clf = SegmentVotingClassifier(**d["params"])
        clf.forest_ = RandomForest.from_dict({
            "params": dict(d["params"]),
            "n_features": d["n_features"],
            "classes": [0, 1],
            "trees": d["trees"],
        })
        clf.classes_ = clf.forest_.classes_
        clf.n_features_in_ = int(d["n_features"])
        if len(clf.forest_.trees_) != d["n_trees"]:
            raise ConfigError("tree count does not match the model header")
        return cls(d["behavior"], int(d["seed"]), clf)


def _segment_arrays(segments):
    if any(s.features is None for s in segments):
        raise ConfigError("segments carry no features")
    X = np.stack([s.features for s in segments])
    y = np.array([s.label for s in segments], dtype=int)
    return X, y


def train_forest(segments, n_trees: int = 100, seed: int = 0, *, behavior: str | None = None,
                 n_jobs=None, **forest_params) -> ForestModel:
    segments = list(segments)
    if not segments:
        raise ConfigError("no training segments")
    X, y = _segment_arrays(segments)
    behavior = behavior or segments[0].behavior
    clf = SegmentVotingClassifier(n_estimators=n_trees, random_state=seed, n_jobs=n_jobs,
                                  **forest_params).fit(X, y)
    return ForestModel(behavior, seed, clf)


def predict_segment_voting(model: ForestModel, segment) -> int:
    features = segment.features if hasattr(segment, "features") else segment
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != model.n_features:
        raise ConfigError(
            f"segment features shaped {features.shape}; model expects (frames, {model.n_features})"
        )
    return int(model.classifier.predict(features[None])[0])


@dataclass
class EvalReport:
    behavior: str
    tp: int
    fp: int
    fn: int
    tn: int
    distribution: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None


def confusion(y_true, y_pred, behavior: str = "") -> EvalReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    return EvalReport(
        behavior,
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
    )


def evaluate(model: ForestModel, segments) -> EvalReport:
    segments = list(segments)
    if not segments:
        raise ConfigError("empty test set")
    X, y = _segment_arrays(segments)
    pred = model.classifier.predict(X)
    report = confusion(y, pred, model.behavior)
    report.distribution = prediction_rates(pred, [s.pain_state for s in segments])
    return report


def prediction_rates(predictions, groups, group_names=PAIN_STATES) -> dict:
    """Fraction of positive predictions per group; ``None`` for an empty group."""
    predictions = np.asarray(predictions, dtype=int)
    groups = np.asarray(groups)
    out = {}
    for g in group_names:
        m = groups == g
        out[g] = float(predictions[m].mean()) if m.any() else None
    return out


def prediction_distribution(model: ForestModel, segments, key: str = "pain_state",
                            group_names=PAIN_STATES) -> dict:
    segments = list(segments)
    if not segments:
        return {g: None for g in group_names}
    X, _ = _segment_arrays(segments)
    pred = model.classifier.predict(X)
    return prediction_rates(pred, [getattr(s, key) for s in segments], group_names)


# -- report files -----------------------------------------------------------------


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def eval_table(reports) -> tuple[str, str]:
    """CSV and text renderings of evaluation reports, one row per behavior."""
    csv_lines = ["behavior,tp,fp,fn,tn,precision,recall"]
    text = [f"{'behavior':<10} {'TP':>4} {'FP':>4} {'FN':>4} {'TN':>4} {'precision':>10} {'recall':>8}"]
    for r in reports:
        csv_lines.append(f"{r.behavior},{r.tp},{r.fp},{r.fn},{r.tn},{_cell(r.precision)},{_cell(r.recall)}")
        p = "n/a" if r.precision is None else f"{100 * r.precision:.1f}%"
        rc = "n/a" if r.recall is None else f"{100 * r.recall:.1f}%"
        text.append(f"{r.behavior:<10} {r.tp:>4} {r.fp:>4} {r.fn:>4} {r.tn:>4} {p:>10} {rc:>8}")
    return "\n".join(csv_lines) + "\n", "\n".join(text) + "\n"


def bias_table(reports) -> tuple[str, str]:
    """Prediction distribution per pain group next to precision and recall."""
    csv_lines = ["behavior,healthy,painful,precision,recall"]
    text = [f"{'behavior':<10} {'healthy':>8} {'painful':>8} {'precision':>10} {'recall':>8}"]
    for r in reports:
        h, pn = r.distribution.get("healthy"), r.distribution.get("painful")
        csv_lines.append(f"{r.behavior},{_cell(h)},{_cell(pn)},{_cell(r.precision)},{_cell(r.recall)}")
        fmt = lambda v: "n/a" if v is None else f"{v:.2f}"  # noqa: E731
        pct = lambda v: "n/a" if v is None else f"{100 * v:.1f}%"  # noqa: E731
        text.append(f"{r.behavior:<10} {fmt(h):>8} {fmt(pn):>8} {pct(r.precision):>10} {pct(r.recall):>8}")
    return "\n".join(csv_lines) + "\n", "\n".join(text) + "\n"
