"""Polyline map elements and their equivalent point orderings."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLength

DEFAULT_NUM_POINTS = 20


class MapClass(enum.IntEnum):
    PED_CROSSING = 0
    DIVIDER = 1
    BOUNDARY = 2
    CENTERLINE = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def closed(self) -> bool:
        """Crossings are polygons; everything else is an open line."""
        return self is MapClass.PED_CROSSING

    @classmethod
    def from_label(cls, name: str) -> "MapClass":
        try:
            return _BY_LABEL[name]
        except KeyError:
            raise ValueError(f"unknown map class {name!r}; expected one of {sorted(_BY_LABEL)}") from None


_LABELS = {
    MapClass.PED_CROSSING: "ped_crossing",
    MapClass.DIVIDER: "divider",
    MapClass.BOUNDARY: "boundary",
    MapClass.CENTERLINE: "centerline",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered 2-D points in ego metres. Closed polylines do not repeat point 0."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"polyline points must be (n, 2), got {p.shape}")
        if p.shape[0] < 2:
            raise ValueError("a polyline needs at least two points")
        if not np.all(np.isfinite(p)):
            raise ValueError("polyline coordinates must be finite")
        if self.closed and p.shape[0] > 2 and np.array_equal(p[0], p[-1]):
            p = p[:-1]
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Polyline):
            return NotImplemented
        return self.closed == other.closed and np.array_equal(self.points, other.points)

    def reordered(self, order) -> "Polyline":
        return Polyline(self.points[np.asarray(order)], self.closed)


@dataclass(frozen=True)
class MapInstance:
    map_class: MapClass
    polyline: Polyline
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "map_class", MapClass(self.map_class))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass
class VectorMap:
    instances: list[MapInstance] = field(default_factory=list)
    timestamp: float | None = None
    pose_ref: str | None = None

    def __len__(self):
        return len(self.instances)

    def of_class(self, map_class: MapClass) -> list[MapInstance]:
        return [i for i in self.instances if i.map_class == map_class]


def equivalent_orderings(p: Polyline) -> list[list[int]]:
    """Index sequences describing the same shape.

    Open: forward and reversed. Closed: every cyclic shift in both directions.
    """
    n = len(p)
    if not p.closed:
        return [list(range(n)), list(range(n - 1, -1, -1))]
    out = []
    for s in range(n):
        out.append([(s + j) % n for j in range(n)])
    for s in range(n):
        out.append([(s - j) % n for j in range(n)])
    return out


def _segments(points: np.ndarray, closed: bool) -> np.ndarray:
    pts = np.vstack([points, points[:1]]) if closed else points
    return np.diff(pts, axis=0)


def polyline_length(p: Polyline) -> float:
    return float(np.hypot(*_segments(p.points, p.closed).T).sum())


def resample(p: Polyline, n_out: int = DEFAULT_NUM_POINTS) -> Polyline:
    """Equal arc-length resampling.

    Open polylines keep both endpoints exactly. Closed ones start at point 0
    and walk the closing segment too, so consecutive outputs (including the
    wrap-around pair) are ``length / n_out`` apart along the curve.

    Raises:
        DegenerateLength: total length below 1e-9 m.
    """
    if n_out < 2:
        raise ValueError("n_out must be at least 2")
    pts = p.points
    if p.closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    pts = pts[np.concatenate([[True], seg > 0])]
    seg = seg[seg > 0]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-9:
        raise DegenerateLength(f"polyline length {total:.3g} m is too short to resample")
    if p.closed:
        targets = np.arange(n_out) * (total / n_out)
    else:
        targets = np.linspace(0.0, total, n_out)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / seg[idx]
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    if not p.closed:
        out[0] = pts[0]
        out[-1] = pts[-1]
    return Polyline(out, p.closed)
