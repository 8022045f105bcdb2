"""Tag LiDAR points with semantic classes from per-camera masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, UnknownCamera
from .geometry import SensorRig, pixel_index, project_points


@dataclass(eq=False)
class PointCloud:
    """LiDAR sweep: ``points`` is (N, 4) with columns x, y, z, intensity."""

    points: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise DimensionMismatch(f"point cloud must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        if pts.shape[0] and (pts[:, 3].min() < 0.0 or pts[:, 3].max() > 1.0):
            raise ValueError("intensity must lie in [0, 1]")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(eq=False)
class SemanticMask:
    class_ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.class_ids)
        if ids.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D, got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_classes):
            raise ValueError(f"mask class ids must lie in [0, {self.num_classes})")
        self.class_ids = ids.astype(np.uint8, copy=False)

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]


@dataclass(eq=False)
class SemanticPointCloud:
    """Points (LiDAR frame) with class, intensity and the camera that labeled them.

    ``camera_index`` indexes into ``camera_ids``; ``source_index`` is the row of
    the originating point in the input cloud.
    """

    positions: np.ndarray
    class_ids: np.ndarray
    intensity: np.ndarray
    camera_index: np.ndarray
    camera_ids: tuple[str, ...] = ()
    source_index: np.ndarray | None = None
    timestamp: float = 0.0

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def empty(cls, camera_ids=(), timestamp: float = 0.0) -> "SemanticPointCloud":
        return cls(
            np.zeros((0, 3)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
            np.zeros(0, dtype=np.int64),
            tuple(camera_ids),
            np.zeros(0, dtype=np.int64),
            timestamp,
        )

    @property
    def entries(self):
        """Per-point ``(position, class_id, intensity, camera_id)`` tuples."""
        for p, c, i, k in zip(self.positions, self.class_ids, self.intensity, self.camera_index):
            yield p, int(c), float(i), self.camera_ids[k]


def associate(cloud: PointCloud, masks: Mapping[str, SemanticMask], rig: SensorRig) -> SemanticPointCloud:
    """Label each point from the first camera (in rig order) that sees it.

    Cameras without a mask this frame are skipped. Points seen by no camera
    are dropped; survivors keep their input order.

    Raises:
        UnknownCamera: a mask is keyed by an id not present in ``rig``.
        DimensionMismatch: mask size differs from the camera's intrinsics.
    """
    known = set(rig.camera_ids)
    for cam_id, mask in masks.items():
        if cam_id not in known:
            raise UnknownCamera(f"mask supplied for camera {cam_id!r}, which is not in the rig")
        k = rig.camera(cam_id).intrinsics
        if (mask.width, mask.height) != (k.width, k.height):
            raise DimensionMismatch(
                f"mask for {cam_id!r} is {mask.width}x{mask.height}, intrinsics say {k.width}x{k.height}"
            )

    cam_ids = tuple(rig.camera_ids)
    n = len(cloud)
    if n == 0:
        return SemanticPointCloud.empty(cam_ids, cloud.timestamp)

    xyz = cloud.xyz
    labels = np.full(n, -1, dtype=np.int64)
    source_cam = np.full(n, -1, dtype=np.int64)
    pending = np.arange(n)
    for ci, cam in enumerate(rig.cameras):
        if pending.size == 0:
            break
        mask = masks.get(cam.camera_id)
        if mask is None:
            continue
        u, v, _, valid = project_points(cam.intrinsics, cam.camera_from_lidar, xyz[pending])
        hit = pending[valid]
        row, col = pixel_index(u[valid], v[valid], cam.intrinsics)
        labels[hit] = mask.class_ids[row, col]
        source_cam[hit] = ci
        pending = pending[~valid]

    keep = np.flatnonzero(labels >= 0)
    return SemanticPointCloud(
        positions=xyz[keep].copy(),
        class_ids=labels[keep],
        intensity=cloud.intensity[keep].copy(),
        camera_index=source_cam[keep],
        camera_ids=cam_ids,
        source_index=keep,
        timestamp=cloud.timestamp,
    )


def association_coverage(result: SemanticPointCloud, cloud: PointCloud) -> float:
    """Fraction of input points that received a label (0.0 for an empty cloud)."""
    if len(cloud) == 0:
        return 0.0
    return len(result) / len(cloud)
