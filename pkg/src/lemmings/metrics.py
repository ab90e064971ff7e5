"""Bag-level classification and ranking metrics.

All areas are computed in exact rational arithmetic (``fractions.Fraction``)
from the integer tie-block counts of the sorted scores and converted to
float once at the end.  This makes ``auc_roc`` agree exactly with
brute-force pair counting (half credit for score ties) and makes
``auc_roc_partial(cap=1)`` reduce to ``auc_roc`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import groupby

import numpy as np


@dataclass(frozen=True)
class ScoredBag:
    """One bag's true label and the score a model assigned to it."""

    bag_id: str
    true_label: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"bag {self.bag_id!r} has non-finite score {self.score}")


def _check_binary(scored: list[ScoredBag], need_both: bool) -> tuple[int, int]:
    labels = {s.true_label for s in scored}
    if not labels <= {-1, 1}:
        raise ValueError(f"metrics need -1/+1 labels, got {sorted(labels)}")
    pos = sum(1 for s in scored if s.true_label == 1)
    neg = len(scored) - pos
    if need_both and (pos == 0 or neg == 0):
        raise ValueError("metric undefined for single-class input")
    return pos, neg


def accuracy(scored: list[ScoredBag], threshold: float = 0.0) -> float:
    """Fraction of bags whose thresholded sign matches the label.

    A score exactly equal to the threshold counts as a positive prediction.
    """
    if not scored:
        raise ValueError("accuracy of an empty list is undefined")
    _check_binary(scored, need_both=False)
    correct = sum(
        1 for s in scored if (1 if s.score >= threshold else -1) == s.true_label
    )
    return correct / len(scored)


def _tie_blocks(scored: list[ScoredBag]) -> list[tuple[int, int]]:
    """(positives, negatives) per distinct score, descending by score."""
    ordered = sorted(scored, key=lambda s: -s.score)
    blocks = []
    for _, grp in groupby(ordered, key=lambda s: s.score):
        grp = list(grp)
        p = sum(1 for s in grp if s.true_label == 1)
        blocks.append((p, len(grp) - p))
    return blocks


def auc_roc(scored: list[ScoredBag]) -> float:
    """Concordant-pair probability: P(score_pos > score_neg) + half ties."""
    pos, neg = _check_binary(scored, need_both=True)
    twice_credit = 0  # 2*concordant + ties, per positive/negative pair
    neg_below = neg
    for p_b, n_b in _tie_blocks(scored):
        neg_below -= n_b
        twice_credit += p_b * (2 * neg_below + n_b)
    return float(Fraction(twice_credit, 2 * pos * neg))


def _roc_vertices(scored: list[ScoredBag], pos: int, neg: int) -> list[tuple[Fraction, Fraction]]:
    """Empirical ROC polyline vertices from (0,0) through each tie block."""
    pts = [(Fraction(0), Fraction(0))]
    tp = fp = 0
    for p_b, n_b in _tie_blocks(scored):
        tp += p_b
        fp += n_b
        pts.append((Fraction(fp, neg), Fraction(tp, pos)))
    return pts


def auc_roc_partial(scored: list[ScoredBag], fpr_cap: float = 0.1) -> float:
    """Area under the ROC polyline for FPR in [0, cap], normalized by cap.

    Linear interpolation at the cap; a perfect classifier scores 1.0 for any
    cap.  ``fpr_cap=1`` equals ``auc_roc`` exactly.
    """
    if not 0.0 < fpr_cap <= 1.0:
        raise ValueError(f"fpr_cap must be in (0, 1], got {fpr_cap}")
    pos, neg = _check_binary(scored, need_both=True)
    cap = Fraction(fpr_cap)
    pts = _roc_vertices(scored, pos, neg)
    area = Fraction(0)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if x1 <= cap:
            area += (x1 - x0) * (y0 + y1) / 2
            continue
        if x0 < cap:  # segment crosses the cap: integrate the partial piece
            y_cap = y0 + (y1 - y0) * (cap - x0) / (x1 - x0)
            area += (cap - x0) * (y0 + y_cap) / 2
        break
    return float(area / cap)


def auc_pr(scored: list[ScoredBag]) -> float:
    """Area under the precision-recall staircase.

    Precision is evaluated at each distinct score level and recall jumps
    contribute rectangles (no trapezoids): area = sum dRecall * precision.
    """
    pos, _ = _check_binary(scored, need_both=False)
    if pos == 0:
        raise ValueError("precision-recall area needs at least one positive bag")
    area = Fraction(0)
    tp = seen = 0
    prev_recall = Fraction(0)
    for p_b, n_b in _tie_blocks(scored):
        tp += p_b
        seen += p_b + n_b
        recall = Fraction(tp, pos)
        if recall > prev_recall:
            area += (recall - prev_recall) * Fraction(tp, seen)
            prev_recall = recall
    return float(area)
