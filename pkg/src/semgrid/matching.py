"""Instance/point matching between predicted and ground-truth vector maps, and the loss stack.

Losses are plain scalar evaluations (no autograd): they serve as diagnostics
for a vectorizer and as reference values in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import DimensionMismatch, NonFinite, PointCountMismatch
from .vector import MapClass, Polyline, equivalent_orderings

NUM_MAP_CLASSES = len(MapClass)
NO_OBJECT = NUM_MAP_CLASSES
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 2.0
    w_p2p: float = 5.0
    w_dir: float = 0.005
    w_seg: float = 1.0

    def __post_init__(self):
        if min(self.w_cls, self.w_p2p, self.w_dir, self.w_seg) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossComponents:
    cls: float = 0.0
    p2p: float = 0.0
    dir: float = 0.0
    seg: float = 0.0


def class_scores(probs: Sequence[float]) -> np.ndarray:
    """Validate a probability vector over the map classes plus no-object."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (NUM_MAP_CLASSES + 1,):
        raise DimensionMismatch(f"class scores need {NUM_MAP_CLASSES + 1} entries, got {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("class scores must be non-negative and sum to 1")
    return p


def one_hot_scores(map_class: int, confidence: float = 1.0) -> np.ndarray:
    """Scores with ``confidence`` on ``map_class`` and the rest on no-object."""
    p = np.zeros(NUM_MAP_CLASSES + 1)
    p[int(map_class)] = confidence
    p[NO_OBJECT] += 1.0 - confidence
    return p


def focal_loss(scores, target: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    p_t = max(float(np.asarray(scores)[target]), PROB_FLOOR)
    return -alpha * (1.0 - p_t) ** gamma * math.log(p_t)


def _check_counts(pred: Polyline, gt: Polyline):
    if len(pred) != len(gt):
        raise PointCountMismatch(f"prediction has {len(pred)} points, ground truth {len(gt)}")


def point_cost(pred: Polyline, gt: Polyline, orderings=None):
    """Smallest summed Manhattan distance over the ground truth's equivalent orderings.

    Returns:
        ``(cost, ordering)``; the first ordering attaining the minimum wins.
    """
    _check_counts(pred, gt)
    if orderings is None:
        orderings = equivalent_orderings(gt)
    idx = np.asarray(orderings, dtype=np.int64)
    costs = np.abs(gt.points[idx] - pred.points[None]).sum(axis=(1, 2))
    best = int(np.argmin(costs))
    return float(costs[best]), list(orderings[best])


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_preds: list[int] = field(default_factory=list)
    unmatched_gts: list[int] = field(default_factory=list)
    orderings: list[list[int]] = field(default_factory=list)
    pair_costs: list[float] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(sum(self.pair_costs))


def match_cost_matrix(preds, gts, weights: LossWeights = LossWeights()):
    """Pairwise matching costs and the ordering each pair would use.

    Class term is ``-w_cls * p_pred(gt class)``; geometry term is
    ``w_p2p * point_cost``.
    """
    cost = np.zeros((len(preds), len(gts)))
    orders = [[None] * len(gts) for _ in preds]
    gt_orderings = [equivalent_orderings(g) for _, g in gts]
    for i, (scores, pline) in enumerate(preds):
        scores = np.asarray(scores)
        for j, (gcls, gline) in enumerate(gts):
            pc, order = point_cost(pline, gline, gt_orderings[j])
            cost[i, j] = -weights.w_cls * float(scores[int(gcls)]) + weights.w_p2p * pc
            orders[i][j] = order
    return cost, orders


def instance_match(preds, gts, weights: LossWeights = LossWeights()) -> Assignment:
    """Optimal one-to-one assignment of predictions to ground-truth instances.

    Args:
        preds: ``(class_scores, Polyline)`` pairs.
        gts: ``(map_class, Polyline)`` pairs, resampled to the same point count.
    """
    if not preds or not gts:
        return Assignment(unmatched_preds=list(range(len(preds))), unmatched_gts=list(range(len(gts))))
    cost, orders = match_cost_matrix(preds, gts, weights)
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched_p = {i for i, _ in pairs}
    matched_g = {j for _, j in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_preds=[i for i in range(len(preds)) if i not in matched_p],
        unmatched_gts=[j for j in range(len(gts)) if j not in matched_g],
        orderings=[orders[i][j] for i, j in pairs],
        pair_costs=[float(cost[i, j]) for i, j in pairs],
    )


def cls_loss(assignment: Assignment, preds, gts, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Focal loss toward the matched class, and toward no-object for unmatched predictions."""
    total = 0.0
    for i, j in assignment.pairs:
        total += focal_loss(preds[i][0], int(gts[j][0]), alpha, gamma)
    for i in assignment.unmatched_preds:
        total += focal_loss(preds[i][0], NO_OBJECT, alpha, gamma)
    return total


def p2p_loss(assignment: Assignment, preds, gts) -> float:
    total = 0.0
    for (i, j), order in zip(assignment.pairs, assignment.orderings):
        p, g = preds[i][1].points, gts[j][1].points[order]
        total += float(np.abs(p - g).sum())
    return total


def _edges(points: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.roll(points, -1, axis=0) - points
    return np.diff(points, axis=0)


def dir_loss(assignment: Assignment, preds, gts, raw_cosine: bool = False) -> float:
    """Edge direction loss summed over matched pairs.

    Edge j joins point j to point j+1; closed shapes also include the
    wrap-around edge. Each edge contributes ``1 - cos`` (or ``cos`` itself with
    ``raw_cosine``); edges of zero length contribute nothing.
    """
    total = 0.0
    for (i, j), order in zip(assignment.pairs, assignment.orderings):
        gline = gts[j][1]
        _check_counts(preds[i][1], gline)
        pe = _edges(preds[i][1].points, gline.closed)
        ge = _edges(gline.points[order], gline.closed)
        norms = np.linalg.norm(pe, axis=1) * np.linalg.norm(ge, axis=1)
        ok = norms > 0
        cos = (pe[ok] * ge[ok]).sum(axis=1) / norms[ok]
        total += float(cos.sum()) if raw_cosine else float((1.0 - cos).sum())
    return total


@dataclass(eq=False)
class BevScoreGrid:
    """Per-cell raw class scores (H, W, C) with ground-truth class ids (H, W)."""

    scores: np.ndarray
    gt_classes: np.ndarray


def seg_loss(grid: BevScoreGrid) -> float:
    """Mean per-cell cross-entropy of softmax(scores) against the ground truth."""
    s = np.asarray(grid.scores, dtype=np.float64)
    gt = np.asarray(grid.gt_classes, dtype=np.int64)
    if s.ndim != 3 or s.shape[:2] != gt.shape:
        raise DimensionMismatch(f"scores {s.shape} do not match ground truth {gt.shape}")
    if gt.size and (gt.min() < 0 or gt.max() >= s.shape[2]):
        raise DimensionMismatch("ground-truth class id outside the score channels")
    lse = logsumexp(s, axis=2)
    picked = np.take_along_axis(s, gt[..., None], axis=2)[..., 0]
    return float((lse - picked).mean())


def total_loss(components: LossComponents, weights: LossWeights = LossWeights()) -> float:
    vals = (components.cls, components.p2p, components.dir, components.seg)
    if not all(math.isfinite(v) for v in vals):
        raise NonFinite(f"loss components must be finite, got {vals}")
    return (
        weights.w_cls * components.cls
        + weights.w_p2p * components.p2p
        + weights.w_dir * components.dir
        + weights.w_seg * components.seg
    )


def compute_losses(preds, gts, bev: BevScoreGrid | None = None, weights: LossWeights = LossWeights(),
                   alpha: float = 0.25, gamma: float = 2.0, raw_cosine: bool = False):
    """Match, then evaluate every loss term.

    Returns:
        ``(assignment, components, total)``.
    """
    a = instance_match(preds, gts, weights)
    comps = LossComponents(
        cls=cls_loss(a, preds, gts, alpha, gamma),
        p2p=p2p_loss(a, preds, gts),
        dir=dir_loss(a, preds, gts, raw_cosine),
        seg=seg_loss(bev) if bev is not None else 0.0,
    )
    return a, comps, total_loss(comps, weights)
