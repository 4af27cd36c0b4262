"""File scoring, ROC analysis, score fusion and the two-stage three-class decision."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import Category
from .neural import BlstmModel, segment_file

THREE_CLASSES = (Category.HEALTHY, Category.DELTA, Category.OMICRON)


@dataclass(frozen=True)
class FileScore:
    subject_id: str
    sound_category: str
    probability: float
    n_segments: int


def score_file(model: BlstmModel, fm: np.ndarray, subject_id: str = "", sound_category: str = "") -> FileScore:
    """Mean segment probability of one feature matrix."""
    segs = segment_file(fm)
    probs = model.predict(segs)
    return FileScore(subject_id, sound_category, float(np.mean(probs, dtype=np.float64)), len(segs))


@dataclass
class EvalReport:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[k] produced point k+1; point 0 is the "reject all" corner
    auc: float
    per_file_scores: list[FileScore] = field(default_factory=list)

    @property
    def roc_points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    @property
    def sensitivity_at_95_specificity(self) -> float:
        return sensitivity_at_specificity(self, 0.95)

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "sensitivity_at_95_specificity": self.sensitivity_at_95_specificity,
            "fpr": self.fpr.tolist(),
            "tpr": self.tpr.tolist(),
            "thresholds": self.thresholds.tolist(),
        }


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC points at every distinct score, highest threshold first.

    Tied scores enter the curve together, which makes the trapezoidal area
    equal to the pair-counting AUC with ties worth one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC analysis needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return fpr, tpr, s[last_of_group]


def trapezoid_area(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(scores: Sequence[float], labels: Sequence[int], per_file_scores: Sequence[FileScore] = ()) -> EvalReport:
    fpr, tpr, thr = roc_curve(scores, labels)
    return EvalReport(fpr, tpr, thr, trapezoid_area(fpr, tpr), list(per_file_scores))


def sensitivity_at_specificity(report: EvalReport, specificity: float = 0.95) -> float:
    """Largest TPR over ROC points whose FPR does not exceed ``1 - specificity``; no interpolation."""
    ok = report.fpr <= (1.0 - specificity) + 1e-12
    return float(report.tpr[ok].max())


def youden_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Decision threshold maximising TPR - FPR on calibration data.

    Scores ``>= threshold`` are called positive. The returned value sits
    halfway between the lowest accepted score and the next lower score.
    """
    fpr, tpr, thr = roc_curve(scores, labels)
    j = tpr[1:] - fpr[1:]
    k = int(np.argmax(j))
    if k + 1 < len(thr):
        return float((thr[k] + thr[k + 1]) / 2.0)
    return float(thr[k])


def fuse(probabilities: Iterable[float | None]) -> float:
    """Mean of the available per-modality probabilities (``None`` entries are skipped)."""
    vals = [float(p) for p in probabilities if p is not None and not np.isnan(p)]
    if not vals:
        raise ValueError("no modality scores to fuse")
    return float(np.mean(vals))


def fuse_scores(scores: Iterable[FileScore]) -> dict[str, float]:
    by_subject: dict[str, list[float]] = {}
    for fs in scores:
        by_subject.setdefault(fs.subject_id, []).append(fs.probability)
    return {sid: fuse(v) for sid, v in sorted(by_subject.items())}


def hierarchical_classify(pos_score: float, variant_score: float, theta1: float = 0.5, theta2: float = 0.5) -> Category:
    """Healthy if the positive-vs-healthy score is below ``theta1``; otherwise Omicron
    when the omicron-vs-delta score reaches ``theta2`` and Delta when it does not."""
    if pos_score < theta1:
        return Category.HEALTHY
    return Category.OMICRON if variant_score >= theta2 else Category.DELTA


@dataclass
class ConfusionMatrix3:
    counts: np.ndarray  # rows: true class, columns: predicted class, in THREE_CLASSES order

    @property
    def diagonally_dominant(self) -> bool:
        """Each diagonal entry strictly exceeds every other entry of its row."""
        for i in range(3):
            off = np.delete(self.counts[i], i)
            if not np.all(self.counts[i, i] > off):
                return False
        return True

    def as_dict(self) -> dict:
        return {
            "labels": [c.value for c in THREE_CLASSES],
            "counts": self.counts.tolist(),
            "diagonally_dominant": self.diagonally_dominant,
        }


def _as_category(label) -> Category:
    cat = label if isinstance(label, Category) else Category(str(label).lower())
    if cat not in THREE_CLASSES:
        raise ValueError(f"label {label!r} is not one of healthy/delta/omicron")
    return cat


def confusion_3class(predictions: Sequence, truths: Sequence) -> ConfusionMatrix3:
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must have equal length")
    pos = {c: i for i, c in enumerate(THREE_CLASSES)}
    counts = np.zeros((3, 3), dtype=np.int64)
    for p, t in zip(predictions, truths):
        counts[pos[_as_category(t)], pos[_as_category(p)]] += 1
    return ConfusionMatrix3(counts)


# -- persistence ------------------------------------------------------------------

SCORES_HEADER = ("subject_id", "category", "modality", "probability", "n_segments", "label")


def write_scores_csv(rows: Iterable[Mapping], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORES_HEADER)
        for r in rows:
            w.writerow([r["subject_id"], r["category"], r["modality"], repr(float(r["probability"])), r["n_segments"], r["label"]])


def read_scores_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            r["probability"] = float(r["probability"])
            r["n_segments"] = int(r["n_segments"])
            out.append(r)
        return out


def write_json(payload, path: str | Path) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True, allow_nan=True) + "\n")
