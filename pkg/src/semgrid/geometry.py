"""Rigid transforms, pinhole intrinsics and LiDAR-to-image projection.

Conventions:
    * ``RigidTransform`` named ``a_from_b`` maps points expressed in frame b
      into frame a: ``p_a = R @ p_b + t``.
    * Camera frame is x right, y down, z forward (optical axis).
    * Vehicle/ego frame is x forward, y left, z up.

Only the distortion-free pinhole model is supported. Lens distortion would
slot in between the camera-frame point and the pixel mapping in
``project_points`` / ``back_project``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, InvalidCalibration, InvalidTransform, NonPositiveDepth, OutOfBounds

DEPTH_MIN = 0.1
ORTHO_TOL = 1e-9
# compose() re-orthonormalizes once accumulated drift passes this.
_DRIFT_TOL = 1e-12


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise InvalidTransform(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidTransform("non-finite transform entries")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise InvalidTransform(f"rotation is not orthonormal (error {err:.3g})")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _trusted(cls, rotation: np.ndarray, translation: np.ndarray) -> "RigidTransform":
        # Skips validation; callers guarantee a proper rotation.
        obj = object.__new__(cls)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(obj, "rotation", rotation)
        object.__setattr__(obj, "translation", translation)
        return obj

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls._trusted(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (16,):
            m = m.reshape(4, 4)
        if m.shape != (4, 4):
            raise InvalidTransform(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise InvalidTransform("bottom row of a rigid transform must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q_xyzw: Sequence[float], t: Sequence[float]) -> "RigidTransform":
        """Build from a scalar-last quaternion (normalized on the way in)."""
        q = np.asarray(q_xyzw, dtype=np.float64)
        if q.shape != (4,) or not np.all(np.isfinite(q)) or np.linalg.norm(q) == 0.0:
            raise InvalidTransform(f"invalid quaternion {q_xyzw!r}")
        r = Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()
        return cls(_orthonormalize(r), t)

    @classmethod
    def from_yaw(cls, yaw: float, t: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), t)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def as_quaternion(self) -> np.ndarray:
        """Scalar-last quaternion (x, y, z, w) with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector) of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if np.abs(r.T @ r - np.eye(3)).max() > _DRIFT_TOL:
        r = _orthonormalize(r)
    return RigidTransform._trusted(r, t)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T.copy()
    return RigidTransform._trusted(rt, -(rt @ t.translation))


def rotation_error(t: RigidTransform) -> float:
    """Max-abs deviation of R^T R from identity."""
    return float(np.abs(t.rotation.T @ t.rotation - np.eye(3)).max())


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCalibration("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidCalibration("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidCalibration("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with principal point at the image center."""
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Camera:
    camera_id: str
    intrinsics: CameraIntrinsics
    camera_from_lidar: RigidTransform


@dataclass(frozen=True)
class SensorRig:
    """Calibrated cameras plus the LiDAR mounting.

    Camera order is significant: it is the association priority when a point
    falls inside several frusta.
    """

    cameras: tuple[Camera, ...]
    lidar_to_vehicle: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise InvalidCalibration(f"duplicate camera ids in rig: {ids}")

    @property
    def camera_ids(self) -> list[str]:
        return [c.camera_id for c in self.cameras]

    def camera(self, camera_id: str) -> Camera:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise KeyError(camera_id)

    def subset(self, camera_ids: Sequence[str]) -> "SensorRig":
        """Rig restricted to ``camera_ids``, keeping the original priority order."""
        keep = set(camera_ids)
        return SensorRig(tuple(c for c in self.cameras if c.camera_id in keep), self.lidar_to_vehicle)


@dataclass(frozen=True)
class Pose:
    timestamp: float
    world_from_vehicle: RigidTransform


def project_points(k: CameraIntrinsics, t_cam_lidar: RigidTransform, points, depth_min: float = DEPTH_MIN):
    """Vectorized pinhole projection of LiDAR-frame points.

    Returns:
        ``(u, v, depth, valid)`` arrays of length N. ``valid`` is True where the
        point lies in front of ``depth_min`` and lands inside the image.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = t_cam_lidar.apply(p)
    depth = pc[:, 2]
    front = depth > depth_min
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(front, depth, 1.0)
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    inside = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return u, v, depth, front & inside


def project_point(k: CameraIntrinsics, t_cam_lidar: RigidTransform, x_l, depth_min: float = DEPTH_MIN):
    """Project one LiDAR point to ``(u, v, depth)``.

    Raises:
        BehindCamera: depth not greater than ``depth_min``.
        OutOfBounds: the pixel falls outside ``[0, width) x [0, height)``.
    """
    x_l = np.asarray(x_l, dtype=np.float64)
    if x_l.shape != (3,) or not np.all(np.isfinite(x_l)):
        raise ValueError(f"expected a finite 3-vector, got {x_l!r}")
    x_c = t_cam_lidar.apply(x_l)
    depth = float(x_c[2])
    if depth <= depth_min:
        raise BehindCamera(f"point at depth {depth:.6g} m is behind the camera")
    u = k.fx * x_c[0] / depth + k.cx
    v = k.fy * x_c[1] / depth + k.cy
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise OutOfBounds(f"pixel ({u:.3f}, {v:.3f}) outside {k.width}x{k.height} image")
    return float(u), float(v), depth


def back_project(k: CameraIntrinsics, t_cam_lidar: RigidTransform, u, v, depth) -> np.ndarray:
    """Inverse of :func:`project_point`; accepts scalars or equal-length arrays."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise NonPositiveDepth("back-projection needs strictly positive depth")
    x_c = np.stack([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth], axis=-1)
    return invert(t_cam_lidar).apply(x_c)


def pixel_index(u, v, k: CameraIntrinsics):
    """Nearest-integer pixel (round half up), kept inside the image."""
    col = np.minimum(np.floor(np.asarray(u) + 0.5).astype(np.int64), k.width - 1)
    row = np.minimum(np.floor(np.asarray(v) + 0.5).astype(np.int64), k.height - 1)
    return row, col
