"""Exact evaluation: IoU, ROC/AUROC, PR/AUPR, sensitivity/specificity.

AUROC is computed two structurally different ways — the Mann–Whitney pairwise
statistic (via tie-averaged ranks) and the trapezoidal area under the ROC
curve — which must agree; tests cross-check both against brute force. AUPR is
tie-grouped average precision. Undefined metrics raise, never silently 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError, UndefinedMetricError
from .lunggrid import Mask


@dataclass(frozen=True)
class ScoredItem:
    """One scored patch with its ground truth and provenance."""

    score: float
    truth: bool
    case_id: str = ""
    patch_index: int = 0
    difficult: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ShapeError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


@dataclass(frozen=True)
class EvalReport:
    """Metrics for one item group; rank metrics are None when undefined."""

    auroc: float | None
    aupr: float | None
    sensitivity: float | None
    specificity: float | None
    confusion: Confusion
    n_cases: int
    n_patches: int

    def to_json(self) -> dict:
        return {
            "auroc": self.auroc,
            "aupr": self.aupr,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "confusion": {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "tn": self.confusion.tn,
                "fn": self.confusion.fn,
            },
            "n_cases": self.n_cases,
            "n_patches": self.n_patches,
        }


def iou(a: Mask, b: Mask) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    if a.bits.shape != b.bits.shape:
        raise ShapeError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    inter = np.logical_and(a.bits, b.bits).sum()
    union = np.logical_or(a.bits, b.bits).sum()
    return 1.0 if union == 0 else float(inter) / float(union)


def _scores_truths(items: Sequence[ScoredItem]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([it.score for it in items], dtype=np.float64)
    truths = np.array([it.truth for it in items], dtype=bool)
    return scores, truths


def auroc(items: Sequence[ScoredItem]) -> float:
    """Mann–Whitney AUROC: P(score_pos > score_neg) with ties counted 1/2.

    Computed through tie-averaged ranks, which is algebraically identical to
    the pairwise statistic.
    """
    scores, truths = _scores_truths(items)
    n_pos = int(truths.sum())
    n_neg = len(items) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC needs both classes, got {n_pos} positives / {n_neg} negatives"
        )
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = ranks[truths].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(items: Sequence[ScoredItem]) -> list[tuple[float, float]]:
    """ROC curve as (fpr, tpr) points from (0,0) to (1,1), one per distinct score."""
    scores, truths = _scores_truths(items)
    n_pos = int(truths.sum())
    n_neg = len(items) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs both classes")
    order = np.argsort(-scores, kind="stable")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(order):
        j = i
        s = scores[order[i]]
        while j < len(order) and scores[order[j]] == s:
            tp += int(truths[order[j]])
            fp += int(not truths[order[j]])
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def auroc_trapezoid(items: Sequence[ScoredItem]) -> float:
    """Trapezoidal area under the ROC curve; must equal `auroc` exactly."""
    pts = roc_points(items)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def aupr(items: Sequence[ScoredItem]) -> float:
    """Average precision with ties grouped: sum of dRecall * precision per block."""
    scores, truths = _scores_truths(items)
    n_pos = int(truths.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPR needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    ap = 0.0
    tp = seen = 0
    i = 0
    while i < len(order):
        j = i
        s = scores[order[i]]
        block_tp = 0
        while j < len(order) and scores[order[j]] == s:
            block_tp += int(truths[order[j]])
            j += 1
        tp += block_tp
        seen += j - i
        ap += (block_tp / n_pos) * (tp / seen)
        i = j
    return ap


def confusion_at(items: Sequence[ScoredItem], threshold: float) -> Confusion:
    """Counts with predicted positive iff score > threshold (strict)."""
    tp = fp = tn = fn = 0
    for it in items:
        predicted = it.score > threshold
        if it.truth:
            tp, fn = tp + predicted, fn + (not predicted)
        else:
            fp, tn = fp + predicted, tn + (not predicted)
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


def sens_spec(
    items: Sequence[ScoredItem], threshold: float
) -> tuple[float, float, Confusion]:
    """(sensitivity, specificity, confusion) at a strict `>` threshold."""
    c = confusion_at(items, threshold)
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise UndefinedMetricError(
            "sensitivity/specificity need both classes present"
        )
    return c.tp / (c.tp + c.fn), c.tn / (c.tn + c.fp), c


def evaluate(items: Sequence[ScoredItem], threshold: float) -> EvalReport:
    """Full report for one group; rank metrics None when the group is single-class."""
    c = confusion_at(items, threshold)
    n_pos, n_neg = c.tp + c.fn, c.tn + c.fp
    both = n_pos > 0 and n_neg > 0
    return EvalReport(
        auroc=auroc(items) if both else None,
        aupr=aupr(items) if n_pos > 0 else None,
        sensitivity=c.tp / n_pos if n_pos > 0 else None,
        specificity=c.tn / n_neg if n_neg > 0 else None,
        confusion=c,
        n_cases=len({it.case_id for it in items}),
        n_patches=len(items),
    )


def subgroup_report(
    items: Sequence[ScoredItem], threshold: float
) -> dict[str, EvalReport]:
    """Overall plus difficult / non-difficult subgroup reports.

    The subgroups partition the items, so the overall confusion equals the sum
    of the subgroup confusions.
    """
    easy = [it for it in items if not it.difficult]
    hard = [it for it in items if it.difficult]
    report = {"overall": evaluate(items, threshold)}
    if easy:
        report["not_difficult"] = evaluate(easy, threshold)
    if hard:
        report["difficult"] = evaluate(hard, threshold)
    return report


_ROW_TITLES = {
    "overall": "All Cases",
    "not_difficult": "w/o Difficult Cases",
    "difficult": "Difficult Cases only",
}


def format_report_table(reports: dict[str, EvalReport]) -> str:
    """Human-readable table with the columns # of Case, AUROC, Sensitivity, Specificity."""

    def fmt(v: float | None) -> str:
        return "undefined" if v is None else f"{v:.4f}"

    rows = [("", "# of Case", "AUROC", "Sensitivity", "Specificity")]
    for key in ("overall", "not_difficult", "difficult"):
        if key in reports:
            r = reports[key]
            rows.append(
                (_ROW_TITLES[key], str(r.n_cases), fmt(r.auroc), fmt(r.sensitivity), fmt(r.specificity))
            )
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    return "\n".join(lines)


def write_report_jsonl(reports: dict[str, EvalReport], path) -> None:
    from pathlib import Path

    lines = [
        json.dumps({"group": key, **reports[key].to_json()}, sort_keys=True)
        for key in ("overall", "not_difficult", "difficult")
        if key in reports
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
