"""On-disk formats.

Point cloud (``.bin``)
    little-endian: 8-byte magic ``SVPCLD01``, ``u32`` point count, then per
    point four ``f32`` values ``x y z intensity`` (LiDAR frame, metres).
Mask / class image (``.pgm``)
    binary PGM ``P5`` with maxval 255, one byte (class id) per pixel/cell.
Trajectory (``.txt``)
    UTF-8, one pose per line: ``timestamp tx ty tz qx qy qz qw``
    (world_from_vehicle, scalar-last quaternion). ``#`` starts a comment.
Vector map (``.json``)
    ``{"instances": [{"class": "divider", "closed": false, "score": 0.9,
    "points": [[x, y], ...]}]}`` in ego metres (+x forward, +y left).
Calibration (``.json``)
    ``{"cameras": [{"id", "fx", "fy", "cx", "cy", "width", "height",
    "camera_from_lidar": 4x4 row-major}], "lidar_to_vehicle": 4x4}``.
Grid snapshot
    class-id PGM plus a sidecar JSON with ``cell_size``, ``extent``,
    ``palette`` and ``pose``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..association import PointCloud
from ..errors import InvalidTransform, MissingFile, ParseError
from ..geometry import Camera, CameraIntrinsics, Pose, RigidTransform, SensorRig
from ..grid import ConfusionMatrix, IntensityPrior, SemanticMap
from ..palette import DEFAULT_PALETTE, palette_from_json, palette_to_json
from ..vector import MapClass, MapInstance, Polyline, VectorMap

CLOUD_MAGIC = b"SVPCLD01"
_CLOUD_DTYPE = np.dtype("<f4")


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(str(p))
    return p


def dump_json(obj, path) -> None:
    """Deterministic JSON (sorted keys, fixed indent) so reruns are byte-identical."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def load_json(path):
    p = _require(path)
    try:
        with open(p, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, p, e.lineno) from None


# -- point clouds ---------------------------------------------------------------

def write_point_cloud(path, cloud: PointCloud) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype=_CLOUD_DTYPE)
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<I", pts.shape[0]))
        f.write(pts.tobytes())


def read_point_cloud(path, timestamp: float = 0.0) -> PointCloud:
    p = _require(path)
    data = p.read_bytes()
    if len(data) < 12 or data[:8] != CLOUD_MAGIC:
        raise ParseError("not a point cloud file (bad magic)", p)
    (n,) = struct.unpack_from("<I", data, 8)
    expected = 12 + 16 * n
    if len(data) != expected:
        raise ParseError(f"header says {n} points ({expected} bytes) but file has {len(data)} bytes", p)
    pts = np.frombuffer(data, dtype=_CLOUD_DTYPE, offset=12).reshape(n, 4).astype(np.float64)
    try:
        return PointCloud(pts, timestamp)
    except ValueError as e:
        raise ParseError(str(e), p) from None


# -- PGM -----------------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if img.size and (img.min() < 0 or img.max() > 255):
        raise ValueError("PGM class ids must fit in one byte")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _pgm_tokens(data: bytes, count: int, p):
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ParseError("truncated PGM header", p)
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    p = _require(path)
    data = p.read_bytes()
    tokens, offset = _pgm_tokens(data, 4, p)
    if tokens[0] != b"P5":
        raise ParseError(f"expected binary PGM (P5), got {tokens[0]!r}", p)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("malformed PGM header", p) from None
    if maxval > 255:
        raise ParseError("16-bit PGM is not supported", p)
    raster = data[offset:]
    if len(raster) != w * h:
        raise ParseError(f"expected {w * h} raster bytes, found {len(raster)}", p)
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


# -- trajectories --------------------------------------------------------------

def format_pose(pose: Pose) -> str:
    t = pose.world_from_vehicle.translation
    q = pose.world_from_vehicle.as_quaternion()
    vals = [pose.timestamp, *t, *q]
    return " ".join(repr(float(v)) for v in vals)


def write_trajectory(path, poses) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pose in poses:
            f.write(format_pose(pose) + "\n")


def read_trajectory(path) -> list[Pose]:
    p = _require(path)
    poses = []
    with open(p, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"expected 8 fields, got {len(parts)}", p, lineno)
            try:
                v = [float(x) for x in parts]
            except ValueError:
                raise ParseError("non-numeric field", p, lineno) from None
            try:
                tf = RigidTransform.from_quaternion(v[4:8], v[1:4])
            except InvalidTransform as e:
                raise ParseError(str(e), p, lineno) from None
            if poses and v[0] <= poses[-1].timestamp:
                raise ParseError("timestamps must be strictly increasing", p, lineno)
            poses.append(Pose(v[0], tf))
    return poses


# -- vector maps ---------------------------------------------------------------

def vector_map_to_json(vm: VectorMap) -> dict:
    out = {
        "instances": [
            {
                "class": inst.map_class.label,
                "closed": bool(inst.polyline.closed),
                "score": float(inst.score),
                "points": [[float(x), float(y)] for x, y in inst.polyline.points],
            }
            for inst in vm.instances
        ]
    }
    if vm.timestamp is not None:
        out["timestamp"] = float(vm.timestamp)
    if vm.pose_ref is not None:
        out["pose_ref"] = vm.pose_ref
    return out


def vector_map_from_json(d: dict, source=None) -> VectorMap:
    if not isinstance(d, dict) or "instances" not in d:
        raise ParseError("vector map JSON needs an 'instances' list", source)
    instances = []
    for k, item in enumerate(d["instances"]):
        try:
            mc = MapClass.from_label(item["class"])
            pl = Polyline(np.asarray(item["points"], dtype=np.float64), bool(item.get("closed", mc.closed)))
            instances.append(MapInstance(mc, pl, float(item.get("score", 1.0))))
        except (KeyError, ValueError, TypeError) as e:
            raise ParseError(f"instance {k}: {e}", source) from None
    return VectorMap(instances, d.get("timestamp"), d.get("pose_ref"))


def write_vector_map(path, vm: VectorMap) -> None:
    dump_json(vector_map_to_json(vm), path)


def read_vector_map(path) -> VectorMap:
    return vector_map_from_json(load_json(path), path)


# -- calibration ---------------------------------------------------------------

def _matrix_rows(t: RigidTransform) -> list[list[float]]:
    return [[float(v) for v in row] for row in t.as_matrix()]


def rig_to_json(rig: SensorRig) -> dict:
    return {
        "cameras": [
            {
                "id": c.camera_id,
                "fx": c.intrinsics.fx,
                "fy": c.intrinsics.fy,
                "cx": c.intrinsics.cx,
                "cy": c.intrinsics.cy,
                "width": c.intrinsics.width,
                "height": c.intrinsics.height,
                "camera_from_lidar": _matrix_rows(c.camera_from_lidar),
            }
            for c in rig.cameras
        ],
        "lidar_to_vehicle": _matrix_rows(rig.lidar_to_vehicle),
    }


def rig_from_json(d: dict, source=None) -> SensorRig:
    try:
        cams = []
        for c in d["cameras"]:
            k = CameraIntrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                                 int(c["width"]), int(c["height"]))
            cams.append(Camera(str(c["id"]), k, RigidTransform.from_matrix(c["camera_from_lidar"])))
        l2v = RigidTransform.from_matrix(d["lidar_to_vehicle"]) if "lidar_to_vehicle" in d else RigidTransform.identity()
        return SensorRig(tuple(cams), l2v)
    except (KeyError, TypeError, ValueError, InvalidTransform) as e:
        raise ParseError(f"bad calibration: {e}", source) from None


def write_rig(path, rig: SensorRig) -> None:
    dump_json(rig_to_json(rig), path)


def read_rig(path) -> SensorRig:
    return rig_from_json(load_json(path), path)


# -- sensor models -------------------------------------------------------------

def read_confusion(path) -> ConfusionMatrix:
    d = load_json(path)
    m = d["p_z_given_c"] if isinstance(d, dict) else d
    try:
        return ConfusionMatrix(np.asarray(m, dtype=np.float64))
    except Exception as e:
        raise ParseError(f"bad confusion matrix: {e}", path) from None


def read_intensity_prior(path) -> IntensityPrior:
    d = load_json(path)
    m = d["p_i_given_c"] if isinstance(d, dict) else d
    try:
        return IntensityPrior(np.asarray(m, dtype=np.float64))
    except Exception as e:
        raise ParseError(f"bad intensity prior: {e}", path) from None


# -- grid snapshots ------------------------------------------------------------

def pose_to_json(pose: Pose | None):
    if pose is None:
        return None
    return {
        "timestamp": float(pose.timestamp),
        "translation": [float(v) for v in pose.world_from_vehicle.translation],
        "quaternion_xyzw": [float(v) for v in pose.world_from_vehicle.as_quaternion()],
    }


def pose_from_json(d) -> Pose | None:
    if d is None:
        return None
    return Pose(float(d["timestamp"]), RigidTransform.from_quaternion(d["quaternion_xyzw"], d["translation"]))


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_snapshot(path, classes: np.ndarray, cell_size: float, extent, kind: str,
                   palette=DEFAULT_PALETTE, pose: Pose | None = None) -> Path:
    """Write ``<stem>.pgm`` and its ``<stem>.json`` sidecar; returns the sidecar path.

    ``kind`` is ``"ego"`` (extent = forward, backward, left, right) or
    ``"world"`` (extent = x_min, y_min, x_max, y_max; row = x index).
    """
    pgm = Path(path).with_suffix(".pgm")
    write_pgm(pgm, classes)
    side = _sidecar(pgm)
    dump_json(
        {
            "image": pgm.name,
            "kind": kind,
            "cell_size": float(cell_size),
            "extent": [float(v) for v in extent],
            "palette": palette_to_json(palette),
            "pose": pose_to_json(pose),
        },
        side,
    )
    return side


def write_semantic_map(path, sm: SemanticMap) -> Path:
    return write_snapshot(path, sm.classes, sm.cell_size, sm.ego_extent, "ego", sm.palette, sm.pose)


def read_snapshot(path):
    """Load a snapshot from either its ``.json`` sidecar or its ``.pgm`` image.

    Returns:
        ``(classes, meta)`` where ``meta`` is the parsed sidecar.
    """
    side = _sidecar(path)
    meta = load_json(side)
    img = read_pgm(Path(side).parent / meta.get("image", Path(side).with_suffix(".pgm").name))
    return img, meta


def read_semantic_map(path) -> SemanticMap:
    img, meta = read_snapshot(path)
    if meta.get("kind", "ego") != "ego":
        raise ParseError("snapshot is not an ego-centric map", path)
    pose = pose_from_json(meta.get("pose"))
    return SemanticMap(
        img,
        float(meta["cell_size"]),
        tuple(meta["extent"]),
        None,
        palette_from_json(meta.get("palette", palette_to_json(DEFAULT_PALETTE))),
        pose,
        pose.timestamp if pose is not None else 0.0,
    )


def list_files(directory, suffix: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFile(str(d))
    return sorted(p for p in d.iterdir() if p.suffix == suffix and p.is_file())


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
