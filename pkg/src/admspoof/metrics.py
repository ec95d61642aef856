"""Score-level evaluation: confusion counts, F1/P/R, ROC AUC and EER.

Scores are probabilities of the positive class (label 1); a sample is
predicted positive when ``score >= threshold``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError

REPORT_KEYS = ("f1", "precision", "recall", "eer", "auc", "eer_threshold", "n_pos", "n_neg")


@dataclass(frozen=True, eq=False)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).ravel().astype(np.int64)
        if s.shape != y.shape:
            raise MetricError(f"{len(s)} scores but {len(y)} labels")
        if not np.isin(y, (0, 1)).all():
            raise MetricError("labels must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_pairs(cls, items) -> "ScoreSet":
        items = list(items)
        return cls([s for s, _ in items], [y for _, y in items])

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    def _require_both(self):
        if self.n_pos == 0 or self.n_neg == 0:
            raise MetricError("metric undefined: score set must contain both labels")


def confusion_at(s: ScoreSet, threshold: float) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with positive prediction at ``score >= threshold``."""
    pred = s.scores >= threshold
    pos = s.labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_precision_recall(s: ScoreSet, threshold: float = 0.5) -> tuple[float, float, float]:
    tp, fp, _, fn = confusion_at(s, threshold)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return _ratio(2 * precision * recall, precision + recall), precision, recall


def auc(s: ScoreSet) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ordered correctly, ties count half."""
    s._require_both()
    order = np.argsort(s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    ranks = np.empty(len(s), dtype=np.float64)
    # average 1-based ranks over runs of tied scores
    _, start, counts = np.unique(sorted_scores, return_index=True, return_counts=True)
    avg = start + (counts + 1) / 2.0
    ranks[order] = np.repeat(avg, counts)
    n_pos, n_neg = s.n_pos, s.n_neg
    u = ranks[s.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(s: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, FPR, FNR) for thresholds below, between and above all unique scores."""
    s._require_both()
    u = np.unique(s.scores)
    spread = max(1.0, float(u[-1] - u[0]))
    thresholds = np.concatenate(([u[0] - spread], (u[:-1] + u[1:]) / 2.0, [u[-1] + spread]))
    pos = np.sort(s.scores[s.labels == 1])
    neg = np.sort(s.scores[s.labels == 0])
    fnr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    fpr = 1.0 - np.searchsorted(neg, thresholds, side="left") / len(neg)
    return thresholds, fpr, fnr


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold, linearly interpolated where FPR - FNR changes sign."""
    thresholds, fpr, fnr = roc_points(s)
    diff = fpr - fnr  # +1 at the lowest threshold, -1 at the highest, non-increasing
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return float(fpr[i]), float(thresholds[i])
    a = diff[i - 1] / (diff[i - 1] - diff[i])
    rate = fpr[i - 1] + a * (fpr[i] - fpr[i - 1])
    return float(rate), float(thresholds[i - 1] + a * (thresholds[i] - thresholds[i - 1]))


def evaluate(s: ScoreSet, threshold: float = 0.5) -> dict:
    f1, precision, recall = f1_precision_recall(s, threshold)
    e, t = eer(s)
    return {"f1": f1, "precision": precision, "recall": recall, "eer": e, "auc": auc(s),
            "eer_threshold": t, "n_pos": s.n_pos, "n_neg": s.n_neg}


def format_table(result: dict, positive_class: str = "label 1") -> str:
    lines = [f"positive class: {positive_class}  (threshold 0.5 for F1/P/R)",
             f"{'F1':>8} {'Prec.':>8} {'Rec.':>8} {'EER':>8} {'AUC':>8}",
             " ".join(f"{result[k]:8.4f}" for k in ("f1", "precision", "recall", "eer", "auc")),
             f"EER threshold {result['eer_threshold']:.6f}; n_pos {result['n_pos']}, n_neg {result['n_neg']}"]
    return "\n".join(lines) + "\n"


def report(s: ScoreSet, out_path, positive_class: str = "label 1") -> dict:
    """Write ``<out_path>`` (JSON) and a ``.txt`` table beside it; returns the metric dict."""
    result = evaluate(s)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    out_path.with_suffix(".txt").write_text(format_table(result, positive_class))
    return result


# -------------------------------------------------------------------- CSV I/O


def write_scores(path, ids, scores, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file_id", "score", "label"])
        for i, s, y in zip(ids, scores, labels):
            w.writerow([i, repr(float(s)), int(y)])


def read_scores(path) -> tuple[list[str], ScoreSet]:
    ids, scores, labels = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["file_id"])
            scores.append(float(row["score"]))
            labels.append(int(row["label"]))
    return ids, ScoreSet(scores, labels)


def write_embeddings(path, ids, labels, vectors) -> None:
    """CSV ``file_id, label, e0..e{d-1}`` for external t-SNE or similar tools."""
    vectors = np.asarray(vectors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file_id", "label"] + [f"e{i}" for i in range(vectors.shape[1])])
        for i, y, v in zip(ids, labels, vectors):
            w.writerow([i, int(y)] + [repr(float(x)) for x in v])
