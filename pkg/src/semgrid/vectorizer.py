"""SemanticMap -> VectorMap conversion behind a small named registry.

The ``baseline`` implementation is classical image processing: per target
class it labels connected components, thins open-line classes to one-cell
skeletons and traces them, traces crossings as closed outlines, simplifies
with Ramer-Douglas-Peucker and resamples every element to a fixed point count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from skimage.measure import approximate_polygon, find_contours
from skimage.morphology import skeletonize

from .errors import DuplicateName, UnknownVectorizer
from .grid import SemanticMap
from .palette import CROSSWALK, CURB, LANE_MARKING
from .vector import MapClass, MapInstance, Polyline, VectorMap, polyline_length, resample

_EIGHT = np.ones((3, 3), dtype=bool)


def _default_class_table():
    return {LANE_MARKING: MapClass.DIVIDER, CROSSWALK: MapClass.PED_CROSSING, CURB: MapClass.BOUNDARY}


@dataclass
class VectorizerConfig:
    min_component_cells: int = 20
    simplify_tolerance: float = 0.3
    output_points_n: int = 20
    class_to_mapclass: dict[int, MapClass] = field(default_factory=_default_class_table)
    # Skeleton branches ending in a free endpoint shorter than this are pruned.
    spur_cells: int = 5
    min_polyline_length: float = 1.0
    # Binary closing radius (cells) applied to each class mask to bridge sampling gaps.
    closing_cells: int = 2

    def __post_init__(self):
        if not self.simplify_tolerance > 0:
            raise ValueError("simplify_tolerance must be positive")
        if self.output_points_n < 2:
            raise ValueError("output_points_n must be at least 2")
        if self.closing_cells < 0:
            raise ValueError("closing_cells must be non-negative")
        self.class_to_mapclass = {int(k): MapClass(v) for k, v in self.class_to_mapclass.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "VectorizerConfig":
        d = dict(d)
        table = d.pop("class_to_mapclass", None)
        if table is not None:
            d["class_to_mapclass"] = {
                int(k): MapClass.from_label(v) if isinstance(v, str) else MapClass(v) for k, v in table.items()
            }
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown vectorizer config keys: {sorted(unknown)}")
        return cls(**d)


Vectorizer = Callable[[SemanticMap, VectorizerConfig], VectorMap]
_REGISTRY: dict[str, Vectorizer] = {}


def register_vectorizer(name: str, implementation: Vectorizer) -> None:
    if name in _REGISTRY:
        raise DuplicateName(f"vectorizer {name!r} is already registered")
    _REGISTRY[name] = implementation


def get_vectorizer(name: str) -> Vectorizer:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownVectorizer(f"no vectorizer named {name!r}; registered: {sorted(_REGISTRY)}") from None


def available_vectorizers() -> list[str]:
    return sorted(_REGISTRY)


# -- skeleton graph -----------------------------------------------------------

_ORTHO = ((-1, 0), (1, 0), (0, -1), (0, 1))
_DIAG = ((-1, -1), (-1, 1), (1, -1), (1, 1))


def _neighbours(p, pixels):
    r, c = p
    out = [(r + dr, c + dc) for dr, dc in _ORTHO if (r + dr, c + dc) in pixels]
    for dr, dc in _DIAG:
        q = (r + dr, c + dc)
        # A diagonal step is redundant when an orthogonal pixel already links both.
        if q in pixels and (r + dr, c) not in pixels and (r, c + dc) not in pixels:
            out.append(q)
    return out


def _prune_spurs(pixels: set, spur_cells: int) -> set:
    pixels = set(pixels)
    for _ in range(8):
        removed = False
        deg = {p: len(_neighbours(p, pixels)) for p in pixels}
        if not any(d >= 3 for d in deg.values()):
            break
        for end in sorted(p for p, d in deg.items() if d == 1):
            if end not in pixels:
                continue
            branch = [end]
            prev, cur = None, end
            while True:
                nxt = [q for q in _neighbours(cur, pixels) if q != prev]
                if len(nxt) != 1:
                    break
                prev, cur = cur, nxt[0]
                if len(_neighbours(cur, pixels)) >= 3:
                    break
                branch.append(cur)
            reached_junction = len(_neighbours(cur, pixels)) >= 3 and cur not in branch
            if reached_junction and len(branch) < spur_cells:
                pixels.difference_update(branch)
                removed = True
        if not removed:
            break
    return pixels


def trace_skeleton(skel: np.ndarray, spur_cells: int = 0) -> list[list[tuple[int, int]]]:
    """Split a one-pixel skeleton into pixel paths, breaking at junctions.

    Paths run node to node (nodes have degree != 2); pure loops come back as a
    path whose last pixel neighbours its first. Scan order is row-major, so
    output is deterministic.
    """
    pixels = set(zip(*np.nonzero(skel)))
    pixels = {(int(r), int(c)) for r, c in pixels}
    if spur_cells > 0:
        pixels = _prune_spurs(pixels, spur_cells)
    nbrs = {p: _neighbours(p, pixels) for p in pixels}
    nodes = sorted(p for p, n in nbrs.items() if len(n) != 2)
    seen_edges = set()
    visited = set()
    paths = []
    for node in nodes:
        visited.add(node)
        if not nbrs[node]:
            continue
        for first in nbrs[node]:
            if (node, first) in seen_edges:
                continue
            path = [node, first]
            seen_edges.add((node, first))
            seen_edges.add((first, node))
            prev, cur = node, first
            while len(nbrs[cur]) == 2 and cur != node:
                visited.add(cur)
                nxt = nbrs[cur][0] if nbrs[cur][0] != prev else nbrs[cur][1]
                seen_edges.add((cur, nxt))
                seen_edges.add((nxt, cur))
                path.append(nxt)
                prev, cur = cur, nxt
            visited.add(cur)
            paths.append(path)
    for start in sorted(pixels - visited):
        if start in visited:
            continue
        path = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            nxt = [q for q in nbrs[cur] if q != prev and q not in visited]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            visited.add(cur)
            path.append(cur)
        paths.append(path)
    return paths


def rdp(points: np.ndarray, tolerance: float) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification (closed inputs repeat their first point)."""
    return approximate_polygon(np.asarray(points, dtype=np.float64), tolerance)


# -- baseline -----------------------------------------------------------------

def _to_ego(semantic_map: SemanticMap, rc: np.ndarray) -> np.ndarray:
    x, y = semantic_map.cell_to_ego(rc[:, 0], rc[:, 1])
    return np.column_stack([x, y])


def close_gaps(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary closing with a (2r+1) square; the padding keeps the image border neutral."""
    if radius <= 0:
        return mask
    st = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    padded = np.pad(mask, radius)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, st), st, border_value=1)
    return closed[radius:-radius, radius:-radius]


def _components(mask: np.ndarray, min_cells: int):
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return labels, []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    return labels, [(k, int(sizes[k])) for k in range(1, n + 1) if sizes[k] >= min_cells]


def _open_polylines(semantic_map, comp_mask, config):
    skel = skeletonize(comp_mask)
    out = []
    for path in trace_skeleton(skel, config.spur_cells):
        if len(path) < 2:
            continue
        ego = _to_ego(semantic_map, np.asarray(path, dtype=np.float64))
        simple = rdp(ego, config.simplify_tolerance)
        out.append(Polyline(simple, closed=False))
    return out


def _closed_polylines(semantic_map, comp_mask, config):
    padded = np.pad(comp_mask.astype(np.float64), 1)
    contours = find_contours(padded, 0.5)
    if not contours:
        return []
    outline = max(contours, key=len) - 1.0
    ego = _to_ego(semantic_map, outline)
    simple = rdp(ego, config.simplify_tolerance)
    if len(simple) > 1 and np.allclose(simple[0], simple[-1]):
        simple = simple[:-1]
    if len(simple) < 3:
        return []
    return [Polyline(simple, closed=True)]


def baseline_vectorize(semantic_map: SemanticMap, config: VectorizerConfig | None = None) -> VectorMap:
    config = config or VectorizerConfig()
    found = []  # (map_class, polyline, component cells)
    for grid_class, map_class in sorted(config.class_to_mapclass.items()):
        mask = close_gaps(semantic_map.classes == grid_class, config.closing_cells)
        labels, comps = _components(mask, config.min_component_cells)
        for k, size in comps:
            comp = labels == k
            if map_class.closed:
                plines = _closed_polylines(semantic_map, comp, config)
            else:
                plines = _open_polylines(semantic_map, comp, config)
            for pl in plines:
                if polyline_length(pl) >= config.min_polyline_length:
                    found.append((map_class, pl, size))
    vm = VectorMap(timestamp=semantic_map.timestamp)
    if not found:
        return vm
    largest = max(size for _, _, size in found)
    for map_class, pl, size in found:
        vm.instances.append(MapInstance(map_class, resample(pl, config.output_points_n), size / largest))
    return vm


def vectorize(semantic_map: SemanticMap, config: VectorizerConfig | None = None, name: str = "baseline") -> VectorMap:
    return get_vectorizer(name)(semantic_map, config or VectorizerConfig())


register_vectorizer("baseline", baseline_vectorize)
