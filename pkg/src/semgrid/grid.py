"""World-anchored probabilistic BEV semantic grid.

Every cell holds a categorical distribution over ``num_classes`` labels,
stored as normalized log-probabilities. Each semantic LiDAR point landing in
a cell contributes one Bayes factor ``P(z | c) * P(intensity bin | c)``; the
stored distribution is the prior (static world, no transition model).

World cells are addressed ``(ix, iy)`` with ``ix = floor((x - x_min) / cell)``
and ``iy = floor((y - y_min) / cell)``. Storage is a dict of square tiles so a
kilometre-scale extent only allocates what the vehicle has actually seen.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .association import SemanticPointCloud
from .errors import DegenerateEvidence, InvalidSpec, OutOfWorldWarning
from .geometry import Pose, SensorRig, compose
from .palette import DEFAULT_PALETTE

_COLUMN_TOL = 1e-9


@dataclass(frozen=True)
class GridMapConfig:
    """Grid geometry.

    ``ego_extent`` is ``(forward, backward, left, right)`` in metres around the
    vehicle; the ego map has ``(forward + backward) / cell_size`` rows (row 0
    is the far front) and ``(left + right) / cell_size`` columns (column 0 is
    the far left).
    """

    world_extent: tuple[float, float, float, float]
    num_classes: int = len(DEFAULT_PALETTE)
    cell_size: float = 0.2
    ego_extent: tuple[float, float, float, float] = (30.0, 30.0, 15.0, 15.0)
    intensity_bins: int = 8

    def __post_init__(self):
        x0, y0, x1, y1 = self.world_extent
        if not self.cell_size > 0:
            raise InvalidSpec("cell_size must be positive")
        if not (x1 > x0 and y1 > y0):
            raise InvalidSpec(f"degenerate world extent {self.world_extent}")
        f, b, l, r = self.ego_extent
        if min(f, b, l, r) < 0 or f + b <= 0 or l + r <= 0:
            raise InvalidSpec(f"degenerate ego extent {self.ego_extent}")
        if self.num_classes < 2:
            raise InvalidSpec("need at least two classes")
        if self.num_classes > 256:
            raise InvalidSpec("class ids must fit in one byte")
        if self.intensity_bins < 1:
            raise InvalidSpec("need at least one intensity bin")
        object.__setattr__(self, "world_extent", tuple(float(v) for v in self.world_extent))
        object.__setattr__(self, "ego_extent", tuple(float(v) for v in self.ego_extent))

    @property
    def world_shape(self) -> tuple[int, int]:
        x0, y0, x1, y1 = self.world_extent
        return (int(np.ceil((x1 - x0) / self.cell_size - 1e-9)), int(np.ceil((y1 - y0) / self.cell_size - 1e-9)))

    @property
    def ego_shape(self) -> tuple[int, int]:
        f, b, l, r = self.ego_extent
        return int(round((f + b) / self.cell_size)), int(round((l + r) / self.cell_size))

    def world_index(self, x, y):
        """Cell indices of world coordinates plus an inside-extent mask."""
        x0, y0, _, _ = self.world_extent
        ix = np.floor((np.asarray(x) - x0) / self.cell_size).astype(np.int64)
        iy = np.floor((np.asarray(y) - y0) / self.cell_size).astype(np.int64)
        rows, cols = self.world_shape
        inside = (ix >= 0) & (ix < rows) & (iy >= 0) & (iy < cols)
        return ix, iy, inside

    def world_cell_center(self, ix, iy):
        x0, y0, _, _ = self.world_extent
        return x0 + (np.asarray(ix) + 0.5) * self.cell_size, y0 + (np.asarray(iy) + 0.5) * self.cell_size


def _check_columns(m: np.ndarray, what: str):
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise InvalidSpec(f"{what} entries must be finite and non-negative")
    err = np.abs(m.sum(axis=0) - 1.0).max()
    if err > _COLUMN_TOL:
        raise InvalidSpec(f"{what} columns must sum to 1 (max error {err:.3g})")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``p_z_given_c[z, c] = P(observed label z | true class c)``."""

    p_z_given_c: np.ndarray

    def __post_init__(self):
        m = np.array(self.p_z_given_c, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidSpec(f"confusion matrix must be square, got {m.shape}")
        _check_columns(m, "confusion matrix")
        m.setflags(write=False)
        object.__setattr__(self, "p_z_given_c", m)

    @property
    def num_classes(self) -> int:
        return self.p_z_given_c.shape[0]

    @classmethod
    def identity(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.eye(num_classes))

    @classmethod
    def uniform(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.full((num_classes, num_classes), 1.0 / num_classes))

    @classmethod
    def symmetric(cls, num_classes: int, accuracy: float) -> "ConfusionMatrix":
        """Correct with probability ``accuracy``, otherwise uniform over the other labels."""
        if not 0.0 <= accuracy <= 1.0:
            raise InvalidSpec("accuracy must lie in [0, 1]")
        off = (1.0 - accuracy) / (num_classes - 1)
        m = np.full((num_classes, num_classes), off)
        np.fill_diagonal(m, accuracy)
        return cls(m)


@dataclass(frozen=True, eq=False)
class IntensityPrior:
    """``p_i_given_c[b, c] = P(intensity bin b | true class c)``."""

    p_i_given_c: np.ndarray

    def __post_init__(self):
        m = np.array(self.p_i_given_c, dtype=np.float64)
        if m.ndim != 2:
            raise InvalidSpec("intensity prior must be a (bins, classes) matrix")
        _check_columns(m, "intensity prior")
        m.setflags(write=False)
        object.__setattr__(self, "p_i_given_c", m)

    @property
    def bins(self) -> int:
        return self.p_i_given_c.shape[0]

    @classmethod
    def uniform(cls, bins: int, num_classes: int) -> "IntensityPrior":
        return cls(np.full((bins, num_classes), 1.0 / bins))


def intensity_bin(intensity, bins: int):
    """Uniform bins over [0, 1]; intensity 1.0 falls in the last bin."""
    b = np.floor(np.asarray(intensity, dtype=np.float64) * bins).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def _log(m: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(m)


def update_cell(prior, z: int, i_bin: int, cm: ConfusionMatrix, ip: IntensityPrior) -> np.ndarray:
    """One Bayes update of a cell distribution, evaluated in log space.

    Raises:
        DegenerateEvidence: every class has zero posterior mass.
    """
    prior = np.asarray(prior, dtype=np.float64)
    if abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError("prior must sum to 1")
    log_post = _log(prior) + _log(cm.p_z_given_c[z]) + _log(ip.p_i_given_c[i_bin])
    if not np.isfinite(log_post.max()):
        raise DegenerateEvidence(f"no class supports label {z} with intensity bin {i_bin}")
    return np.exp(log_post - logsumexp(log_post))


class _Tile:
    __slots__ = ("logp", "observed", "_classes")

    def __init__(self, size: int, num_classes: int):
        self.logp = np.full((size, size, num_classes), -np.log(num_classes))
        self.observed = np.zeros((size, size), dtype=bool)
        self._classes = None

    def classes(self) -> np.ndarray:
        if self._classes is None:
            c = np.argmax(self.logp, axis=2).astype(np.uint8)
            c[~self.observed] = 0
            self._classes = c
        return self._classes

    def touch(self):
        self._classes = None


class ProbGrid:
    """Sparse tiled grid of per-cell class log-probabilities.

    ``integrate`` is single-writer; ``render``/``crop_ego``/``sample`` only read.
    """

    def __init__(
        self,
        config: GridMapConfig,
        confusion: ConfusionMatrix | None = None,
        intensity_prior: IntensityPrior | None = None,
        tile_size: int = 64,
    ):
        c = config.num_classes
        self.config = config
        self.confusion = confusion if confusion is not None else ConfusionMatrix.symmetric(c, 0.9)
        self.intensity_prior = (
            intensity_prior if intensity_prior is not None else IntensityPrior.uniform(config.intensity_bins, c)
        )
        if self.confusion.num_classes != c:
            raise InvalidSpec(f"confusion matrix has {self.confusion.num_classes} classes, grid has {c}")
        if self.intensity_prior.p_i_given_c.shape != (config.intensity_bins, c):
            raise InvalidSpec(
                f"intensity prior must be {config.intensity_bins}x{c}, got {self.intensity_prior.p_i_given_c.shape}"
            )
        self.tile_size = int(tile_size)
        self.tiles: dict[tuple[int, int], _Tile] = {}
        self._log_cm = _log(self.confusion.p_z_given_c)
        self._log_ip = _log(self.intensity_prior.p_i_given_c)
        self.degenerate_count = 0
        self.out_of_extent_count = 0
        self.points_integrated = 0

    # -- cell access -------------------------------------------------------

    def _tile(self, key, create=False):
        t = self.tiles.get(key)
        if t is None and create:
            t = self.tiles[key] = _Tile(self.tile_size, self.config.num_classes)
        return t

    def log_probs(self, ix: int, iy: int) -> np.ndarray:
        t = self._tile((ix // self.tile_size, iy // self.tile_size))
        if t is None:
            return np.full(self.config.num_classes, -np.log(self.config.num_classes))
        return t.logp[ix % self.tile_size, iy % self.tile_size].copy()

    def probs(self, ix: int, iy: int) -> np.ndarray:
        return np.exp(self.log_probs(ix, iy))

    def is_observed(self, ix: int, iy: int) -> bool:
        t = self._tile((ix // self.tile_size, iy // self.tile_size))
        return bool(t is not None and t.observed[ix % self.tile_size, iy % self.tile_size])

    def set_log_probs(self, ix: int, iy: int, log_probs) -> None:
        """Overwrite one cell (normalized on the way in) and mark it observed."""
        lp = np.asarray(log_probs, dtype=np.float64)
        t = self._tile((ix // self.tile_size, iy // self.tile_size), create=True)
        t.logp[ix % self.tile_size, iy % self.tile_size] = lp - logsumexp(lp)
        t.observed[ix % self.tile_size, iy % self.tile_size] = True
        t.touch()

    @property
    def observed_count(self) -> int:
        return int(sum(t.observed.sum() for t in self.tiles.values()))

    def iter_observed(self):
        """Yield ``(ix, iy, log_probs)`` for every observed cell."""
        ts = self.tile_size
        for (tr, tc), t in self.tiles.items():
            for lr, lc in zip(*np.nonzero(t.observed)):
                yield tr * ts + lr, tc * ts + lc, t.logp[lr, lc]

    def _group_by_tile(self, ix, iy):
        ts = self.tile_size
        tr, tc = ix // ts, iy // ts
        ntc = self.config.world_shape[1] // ts + 1
        key = tr * ntc + tc
        order = np.argsort(key, kind="stable")
        skey = key[order]
        bounds = np.flatnonzero(np.diff(skey)) + 1
        for sel in np.split(order, bounds):
            if sel.size:
                yield (int(tr[sel[0]]), int(tc[sel[0]])), sel, ix[sel] % ts, iy[sel] % ts

    # -- updates -----------------------------------------------------------

    def accumulate(self, ix, iy, loglik) -> None:
        """Apply per-point log-likelihood rows to their cells.

        Factors for one cell are summed first (Bayes products commute) and the
        cell renormalized once. Cells whose combined evidence is degenerate are
        replayed point by point so that only the offending points are skipped.
        """
        ix = np.asarray(ix, dtype=np.int64)
        iy = np.asarray(iy, dtype=np.int64)
        if ix.size == 0:
            return
        cols = self.config.world_shape[1]
        flat = ix * cols + iy
        uniq, inv = np.unique(flat, return_inverse=True)
        summed = np.empty((uniq.size, loglik.shape[1]))
        for c in range(loglik.shape[1]):
            summed[:, c] = np.bincount(inv, weights=loglik[:, c], minlength=uniq.size)
        ux, uy = uniq // cols, uniq % cols
        replay = []
        for key, sel, lr, lc in self._group_by_tile(ux, uy):
            t = self._tile(key, create=True)
            new = t.logp[lr, lc] + summed[sel]
            ok = np.isfinite(new.max(axis=1))
            if not ok.all():
                replay.extend(sel[~ok].tolist())
            lr, lc, new = lr[ok], lc[ok], new[ok]
            t.logp[lr, lc] = new - logsumexp(new, axis=1, keepdims=True)
            t.observed[lr, lc] = True
            t.touch()
        for u in replay:
            self._replay_cell(int(ux[u]), int(uy[u]), loglik[inv == u])
        self.points_integrated += int(ix.size)

    def _replay_cell(self, ix, iy, rows):
        ts = self.tile_size
        t = self._tile((ix // ts, iy // ts), create=True)
        cur = t.logp[ix % ts, iy % ts].copy()
        updated = False
        for row in rows:
            cand = cur + row
            if not np.isfinite(cand.max()):
                self.degenerate_count += 1
                continue
            cur = cand - logsumexp(cand)
            updated = True
        if updated:
            t.logp[ix % ts, iy % ts] = cur
            t.observed[ix % ts, iy % ts] = True
            t.touch()

    def integrate(self, spc: SemanticPointCloud, pose: Pose, rig: SensorRig) -> "ProbGrid":
        return integrate(self, spc, pose, rig)

    # -- reads -------------------------------------------------------------

    def sample(self, ix, iy, inside=None):
        """Rendered class and observed flag at arbitrary world cell indices."""
        ix = np.asarray(ix, dtype=np.int64)
        iy = np.asarray(iy, dtype=np.int64)
        shape = ix.shape
        ix, iy = ix.ravel(), iy.ravel()
        if inside is None:
            rows, cols = self.config.world_shape
            inside = (ix >= 0) & (ix < rows) & (iy >= 0) & (iy < cols)
        else:
            inside = np.asarray(inside).ravel()
        classes = np.zeros(ix.size, dtype=np.uint8)
        observed = np.zeros(ix.size, dtype=bool)
        idx = np.flatnonzero(inside)
        for key, sel, lr, lc in self._group_by_tile(ix[idx], iy[idx]):
            t = self.tiles.get(key)
            if t is None:
                continue
            classes[idx[sel]] = t.classes()[lr, lc]
            observed[idx[sel]] = t.observed[lr, lc]
        return classes.reshape(shape), observed.reshape(shape)

    def render(self) -> np.ndarray:
        return render(self)


def integrate(grid: ProbGrid, spc: SemanticPointCloud, pose: Pose, rig: SensorRig) -> ProbGrid:
    """Fuse one semantic sweep into ``grid`` (in place; the grid is returned).

    Points are taken LiDAR -> vehicle -> world, binned into cells, and each
    applies one confusion-matrix factor and one intensity-prior factor.
    Points outside the world extent are counted in ``out_of_extent_count``.
    """
    if len(spc) == 0:
        return grid
    cfg = grid.config
    world = compose(pose.world_from_vehicle, rig.lidar_to_vehicle).apply(spc.positions)
    ix, iy, inside = cfg.world_index(world[:, 0], world[:, 1])
    grid.out_of_extent_count += int(np.count_nonzero(~inside))
    z = np.asarray(spc.class_ids, dtype=np.int64)[inside]
    b = intensity_bin(np.asarray(spc.intensity)[inside], cfg.intensity_bins)
    loglik = grid._log_cm[z] + grid._log_ip[b]
    ok = np.isfinite(loglik.max(axis=1))
    grid.degenerate_count += int(np.count_nonzero(~ok))
    grid.accumulate(ix[inside][ok], iy[inside][ok], loglik[ok])
    return grid


def render(grid: ProbGrid) -> np.ndarray:
    """Full-extent argmax image; unobserved cells are 0, ties go to the lower id."""
    rows, cols = grid.config.world_shape
    out = np.zeros((rows, cols), dtype=np.uint8)
    ts = grid.tile_size
    for (tr, tc), t in grid.tiles.items():
        r0, c0 = tr * ts, tc * ts
        r1, c1 = min(r0 + ts, rows), min(c0 + ts, cols)
        out[r0:r1, c0:c1] = t.classes()[: r1 - r0, : c1 - c0]
    return out


@dataclass(eq=False)
class SemanticMap:
    """Ego-centric class-id image; row 0 is the far front, column 0 the far left."""

    classes: np.ndarray
    cell_size: float
    ego_extent: tuple[float, float, float, float] = (30.0, 30.0, 15.0, 15.0)
    observed: np.ndarray | None = None
    palette: tuple = DEFAULT_PALETTE
    pose: Pose | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.uint8)
        if self.observed is None:
            self.observed = self.classes != 0
        self.ego_extent = tuple(float(v) for v in self.ego_extent)

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def cell_to_ego(self, row, col):
        """Ego coordinates (x forward, y left) of cell centers."""
        f, _, l, _ = self.ego_extent
        return f - (np.asarray(row) + 0.5) * self.cell_size, l - (np.asarray(col) + 0.5) * self.cell_size

    def ego_to_cell(self, x, y):
        """Fractional (row, col) of ego coordinates; integer parts index cells."""
        f, _, l, _ = self.ego_extent
        return (f - np.asarray(x)) / self.cell_size - 0.5, (l - np.asarray(y)) / self.cell_size - 0.5


@functools.lru_cache(maxsize=8)
def _ego_cell_centers(cell_size, ego_extent):
    f, b, l, r = ego_extent
    h, w = int(round((f + b) / cell_size)), int(round((l + r) / cell_size))
    xe = f - (np.arange(h) + 0.5) * cell_size
    ye = l - (np.arange(w) + 0.5) * cell_size
    pts = np.zeros((h, w, 3))
    pts[..., 0] = xe[:, None]
    pts[..., 1] = ye[None, :]
    pts.setflags(write=False)
    return pts


def ego_sample_indices(config: GridMapConfig, pose: Pose):
    """World cell indices under each ego cell center, with an inside mask."""
    pts = _ego_cell_centers(config.cell_size, config.ego_extent)
    h, w = pts.shape[:2]
    world = pose.world_from_vehicle.apply(pts.reshape(-1, 3))
    ix, iy, inside = config.world_index(world[:, 0], world[:, 1])
    return ix.reshape(h, w), iy.reshape(h, w), inside.reshape(h, w)


def _warn_out_of_world(inside, pose):
    if not inside.all():
        warnings.warn(
            f"ego window at t={pose.timestamp} leaves the world extent; "
            f"{int((~inside).sum())} cells reported unknown",
            OutOfWorldWarning,
            stacklevel=3,
        )


def crop_ego(grid: ProbGrid, pose: Pose, palette=DEFAULT_PALETTE) -> SemanticMap:
    """Nearest-neighbour resample of the rendered world grid into the ego frame."""
    ix, iy, inside = ego_sample_indices(grid.config, pose)
    _warn_out_of_world(inside, pose)
    classes, observed = grid.sample(ix, iy, inside)
    return SemanticMap(classes, grid.config.cell_size, grid.config.ego_extent, observed, palette, pose, pose.timestamp)


def crop_raster(raster: np.ndarray, config: GridMapConfig, pose: Pose, palette=DEFAULT_PALETTE) -> SemanticMap:
    """Same ego resampling as :func:`crop_ego`, applied to a dense world raster."""
    ix, iy, inside = ego_sample_indices(config, pose)
    _warn_out_of_world(inside, pose)
    classes = np.zeros(ix.shape, dtype=np.uint8)
    classes[inside] = raster[ix[inside], iy[inside]]
    return SemanticMap(classes, config.cell_size, config.ego_extent, inside & (classes != 0), palette, pose, pose.timestamp)
