"""Chamfer-distance average precision for vector maps.

Matching protocol: predictions of one class across all samples are ranked by
score; each takes the nearest still-unmatched ground truth in its own sample
and counts as a true positive when that distance is within the threshold.
Precision/recall are pooled over samples, and AP is the area under the
precision envelope. A class's AP is the mean over thresholds; mAP is the
unweighted mean over classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import EmptySet, ZeroBaseline
from .parallel import ordered_map
from .vector import MapClass, MapInstance, VectorMap, resample

DEFAULT_THRESHOLDS = (0.5, 1.0, 1.5)
CLASS_COLUMNS = {
    MapClass.PED_CROSSING: "ped.",
    MapClass.DIVIDER: "div.",
    MapClass.BOUNDARY: "bou.",
    MapClass.CENTERLINE: "cent.",
}


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    squared_chamfer: bool = True
    classes: tuple[MapClass, ...] = tuple(MapClass)
    # Instances are densified to this many points before chamfer evaluation.
    num_points: int = 100

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(t <= 0 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError(f"thresholds must be positive and strictly ascending, got {self.thresholds}")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "classes", tuple(MapClass(c) for c in self.classes))

    def threshold_value(self, threshold: float) -> float:
        """Threshold in the units of the configured chamfer (metres or metres squared)."""
        return threshold * threshold if self.squared_chamfer else threshold


@dataclass
class EvalSample:
    predictions: VectorMap
    ground_truth: VectorMap
    sample_id: str = ""


def chamfer(x, y, squared: bool = True) -> float:
    """Symmetric chamfer distance: mean nearest-neighbour distance each way, summed."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 2)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise EmptySet("chamfer distance needs two non-empty point sets")
    d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
    d = d2 if squared else np.sqrt(d2)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def densify(instances: Sequence[MapInstance], num_points: int) -> np.ndarray:
    if not instances:
        return np.zeros((0, num_points, 2))
    return np.stack([resample(i.polyline, num_points).points for i in instances])


def chamfer_matrix(preds: Sequence[MapInstance], gts: Sequence[MapInstance], config: EvalConfig) -> np.ndarray:
    """(P, G) chamfer distances between densified instances."""
    p = densify(preds, config.num_points)
    g = densify(gts, config.num_points)
    out = np.zeros((len(p), len(g)))
    for i in range(len(p)):
        d2 = ((p[i][None, :, None, :] - g[:, None, :, :]) ** 2).sum(axis=3)  # (G, n, n)
        d = d2 if config.squared_chamfer else np.sqrt(d2)
        out[i] = d.min(axis=2).mean(axis=1) + d.min(axis=1).mean(axis=1)
    return out


def _ranked(per_sample_scores):
    keys = []
    for s, scores in enumerate(per_sample_scores):
        for i, sc in enumerate(scores):
            keys.append((-float(sc), s, i))
    keys.sort()
    return [(s, i) for _, s, i in keys]


def tp_flags(per_sample_scores, chamfers, limit: float) -> list[bool]:
    """Greedy score-ordered matching; one flag per prediction in ranked order."""
    used = [np.zeros(d.shape[1], dtype=bool) for d in chamfers]
    flags = []
    for s, i in _ranked(per_sample_scores):
        d = chamfers[s]
        tp = False
        if d.shape[1] and not used[s].all():
            row = np.where(used[s], np.inf, d[i])
            j = int(np.argmin(row))
            if row[j] <= limit:
                used[s][j] = True
                tp = True
        flags.append(tp)
    return flags


def average_precision(flags: Sequence[bool], num_gts: int) -> float:
    """Area under the precision envelope, accumulated exactly then rounded once."""
    if num_gts == 0:
        return 1.0 if len(flags) == 0 else 0.0
    prec = []
    tp = 0
    for k, f in enumerate(flags, start=1):
        tp += bool(f)
        prec.append(Fraction(tp, k))
    area = Fraction(0)
    best = Fraction(0)
    for k in range(len(flags) - 1, -1, -1):
        best = max(best, prec[k])
        if flags[k]:
            area += best
    return float(area / num_gts)


def _class_samples(samples: Sequence[EvalSample], map_class: MapClass):
    return [(s.predictions.of_class(map_class), s.ground_truth.of_class(map_class)) for s in samples]


def _chamfers(pairs, config):
    return ordered_map(lambda pg: chamfer_matrix(pg[0], pg[1], config), pairs)


def ap_pooled(pairs, threshold: float, config: EvalConfig = EvalConfig(), chamfers=None) -> float:
    """AP at one threshold with precision/recall pooled over ``(preds, gts)`` samples."""
    if chamfers is None:
        chamfers = _chamfers(pairs, config)
    scores = [[p.score for p in preds] for preds, _ in pairs]
    flags = tp_flags(scores, chamfers, config.threshold_value(threshold))
    return average_precision(flags, sum(len(g) for _, g in pairs))


def ap_single(preds: Sequence[MapInstance], gts: Sequence[MapInstance], threshold: float,
              config: EvalConfig = EvalConfig()) -> float:
    """AP of one class in one sample at one threshold (metres)."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return ap_pooled([(list(preds), list(gts))], threshold, config)


def ap_class(samples: Sequence[EvalSample], map_class: MapClass, config: EvalConfig = EvalConfig()) -> float:
    return float(np.mean(_ap_by_threshold(samples, map_class, config)))


def _ap_by_threshold(samples, map_class, config):
    pairs = _class_samples(samples, map_class)
    chamfers = _chamfers(pairs, config)
    return [ap_pooled(pairs, t, config, chamfers) for t in config.thresholds]


def class_mean(per_class_ap: Sequence[float]) -> float:
    """Unweighted mean of per-class APs (mAP)."""
    vals = list(per_class_ap)
    if not vals:
        raise ValueError("no per-class APs to average")
    return sum(vals) / len(vals)


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    squared_chamfer: bool
    ap_at_threshold: dict[str, list[float]] = field(default_factory=dict)
    ap: dict[str, float] = field(default_factory=dict)
    mAP: float = 0.0
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "squared_chamfer": self.squared_chamfer,
            "ap_at_threshold": self.ap_at_threshold,
            "ap": self.ap,
            "mAP": self.mAP,
            "counts": self.counts,
            "flagged": self.flagged,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(
            thresholds=tuple(d["thresholds"]),
            squared_chamfer=bool(d["squared_chamfer"]),
            ap_at_threshold={k: list(v) for k, v in d.get("ap_at_threshold", {}).items()},
            ap={k: float(v) for k, v in d["ap"].items()},
            mAP=float(d["mAP"]),
            counts=d.get("counts", {}),
            flagged=list(d.get("flagged", [])),
        )

    def table(self, train: str = "", test: str = "") -> str:
        return format_class_table([(train, test, self)])


def evaluate(samples: Sequence[EvalSample], config: EvalConfig = EvalConfig()) -> EvalReport:
    report = EvalReport(config.thresholds, config.squared_chamfer)
    for mc in config.classes:
        per_t = _ap_by_threshold(samples, mc, config)
        report.ap_at_threshold[mc.label] = per_t
        report.ap[mc.label] = float(np.mean(per_t))
        n_pred = sum(len(s.predictions.of_class(mc)) for s in samples)
        n_gt = sum(len(s.ground_truth.of_class(mc)) for s in samples)
        report.counts[mc.label] = {"pred": n_pred, "gt": n_gt}
        if n_pred == 0 and n_gt > 0:
            report.flagged.append(mc.label)
    report.mAP = class_mean(report.ap.values())
    return report


def format_class_table(rows) -> str:
    """Per-class AP table (percent) with columns ped., div., bou., cent., mAP."""
    head = f"{'Train':<8}{'Test':<8}" + "".join(f"{c:>8}" for c in CLASS_COLUMNS.values()) + f"{'mAP':>8}"
    lines = [head, "-" * len(head)]
    for train, test, rep in rows:
        cells = []
        for mc in CLASS_COLUMNS:
            v = rep.ap.get(mc.label)
            cells.append(f"{100 * v:>8.1f}" if v is not None else f"{'-':>8}")
        lines.append(f"{train:<8}{test:<8}" + "".join(cells) + f"{100 * rep.mAP:>8.1f}")
    if any(rep.flagged for _, _, rep in rows):
        flagged = sorted({f for _, _, rep in rows for f in rep.flagged})
        lines.append(f"note: no predictions for {', '.join(flagged)} (AP reported as 0)")
    return "\n".join(lines)


def transfer_ratio(map_cross: float, map_same: float) -> float:
    """Cross-dataset mAP as a percentage of same-dataset mAP."""
    if not map_same > 0:
        raise ZeroBaseline(f"same-dataset mAP must be positive, got {map_same}")
    return 100.0 * map_cross / map_same


def format_transfer_table(rows) -> str:
    """Rows of ``(model, train, test_cross, map_cross, test_same, map_same)``; mAPs in percent."""
    head = f"{'Model':<12}{'Train':<8}{'Test':<8}{'mAP':>8}{'mAP ratio (%)':>16}"
    lines = [head, "-" * len(head)]
    for model, train, test_cross, map_cross, test_same, map_same in rows:
        ratio = transfer_ratio(map_cross, map_same)
        lines.append(f"{model:<12}{train:<8}{test_cross:<8}{map_cross:>8.1f}{ratio:>16.1f}")
        lines.append(f"{'':<12}{train:<8}{test_same:<8}{map_same:>8.1f}{'':>16}")
    return "\n".join(lines)


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2)
