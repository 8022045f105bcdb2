"""Sequence manifests and frame loading.

A manifest is JSON::

    {
      "rig": "rig.json",
      "trajectory": "trajectory.txt",
      "palette": [{"id": 0, "name": "void", "color": [0, 0, 0]}, ...],
      "frame_rate": 10.0,
      "world_extent": [x_min, y_min, x_max, y_max],      # optional
      "mask_confusion": [[...]],                         # optional, P(z | c)
      "frames": [
        {"timestamp": 0.0, "cloud": "clouds/000000.bin",
         "masks": {"cam0": "masks/000000_cam0.pgm"}}
      ]
    }

Paths are relative to the manifest. A frame's pose is the trajectory entry
with the same timestamp, unless the record carries an inline
``"pose": [tx, ty, tz, qx, qy, qz, qw]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..association import PointCloud, SemanticMask
from ..errors import InvalidTransform, MissingFile, ParseError
from ..geometry import Pose, RigidTransform, SensorRig
from ..grid import ConfusionMatrix, IntensityPrior
from ..palette import DEFAULT_PALETTE, palette_from_json
from .formats import load_json, read_pgm, read_point_cloud, read_rig, read_trajectory

_TS_TOL = 1e-6


@dataclass
class FrameRecord:
    timestamp: float
    cloud: Path
    masks: dict[str, Path]
    pose: Pose


@dataclass
class SequenceManifest:
    path: Path
    rig: SensorRig
    frames: list[FrameRecord]
    palette: tuple = DEFAULT_PALETTE
    frame_rate: float | None = None
    world_extent: tuple[float, float, float, float] | None = None
    mask_confusion: ConfusionMatrix | None = None
    intensity_prior: IntensityPrior | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class Frame:
    timestamp: float
    cloud: PointCloud
    masks: dict[str, SemanticMask]
    pose: Pose


def _resolve(base: Path, rel, manifest):
    if not isinstance(rel, str):
        raise ParseError(f"expected a file path, got {rel!r}", manifest)
    p = (base / rel).resolve()
    if not p.is_file():
        raise MissingFile(str(p), referenced_from=str(manifest))
    return p


def _pose_for(ts, record, poses, manifest, k):
    if "pose" in record:
        v = record["pose"]
        try:
            return Pose(ts, RigidTransform.from_quaternion(v[3:7], v[0:3]))
        except (InvalidTransform, TypeError, IndexError) as e:
            raise ParseError(f"frame {k}: bad inline pose: {e}", manifest) from None
    if poses is None:
        raise ParseError(f"frame {k}: no inline pose and no trajectory file", manifest)
    times = np.array([p.timestamp for p in poses])
    if times.size:
        j = int(np.argmin(np.abs(times - ts)))
        if abs(times[j] - ts) <= _TS_TOL:
            return poses[j]
    raise ParseError(f"frame {k}: no trajectory pose at timestamp {ts}", manifest)


def load_manifest(path) -> SequenceManifest:
    """Parse and validate a manifest; every referenced file must exist.

    Raises:
        ParseError: malformed JSON or fields (with file/line context).
        MissingFile: a referenced file does not exist.
    """
    path = Path(path).resolve()
    d = load_json(path)
    if not isinstance(d, dict):
        raise ParseError("manifest must be a JSON object", path)
    base = path.parent
    if "rig" not in d:
        raise ParseError("manifest has no 'rig' entry", path)
    rig = read_rig(_resolve(base, d["rig"], path))
    poses = read_trajectory(_resolve(base, d["trajectory"], path)) if d.get("trajectory") else None
    palette = palette_from_json(d["palette"]) if "palette" in d else DEFAULT_PALETTE

    frames = []
    prev_ts = None
    for k, rec in enumerate(d.get("frames", [])):
        try:
            ts = float(rec["timestamp"])
            cloud = _resolve(base, rec["cloud"], path)
            masks = {str(cid): _resolve(base, mp, path) for cid, mp in rec.get("masks", {}).items()}
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"frame {k}: {e}", path) from None
        if prev_ts is not None and ts <= prev_ts:
            raise ParseError(f"frame {k}: timestamps must be strictly increasing", path)
        prev_ts = ts
        frames.append(FrameRecord(ts, cloud, masks, _pose_for(ts, rec, poses, path, k)))

    extent = tuple(float(v) for v in d["world_extent"]) if d.get("world_extent") else None
    cm = ConfusionMatrix(np.asarray(d["mask_confusion"])) if d.get("mask_confusion") else None
    ip = IntensityPrior(np.asarray(d["intensity_prior"])) if d.get("intensity_prior") else None
    known = {"rig", "trajectory", "palette", "frame_rate", "world_extent", "mask_confusion", "intensity_prior", "frames"}
    return SequenceManifest(
        path=path,
        rig=rig,
        frames=frames,
        palette=palette,
        frame_rate=float(d["frame_rate"]) if d.get("frame_rate") else None,
        world_extent=extent,
        mask_confusion=cm,
        intensity_prior=ip,
        extra={k: v for k, v in d.items() if k not in known},
    )


def load_frame(record: FrameRecord, num_classes: int) -> Frame:
    cloud = read_point_cloud(record.cloud, record.timestamp)
    masks = {}
    for cid, mp in record.masks.items():
        try:
            masks[cid] = SemanticMask(read_pgm(mp), num_classes)
        except ValueError as e:
            raise ParseError(str(e), mp) from None
    return Frame(record.timestamp, cloud, masks, record.pose)


def load_sequence(path) -> Iterator[Frame]:
    """Frames of a manifest in timestamp order, decoded lazily."""
    manifest = load_manifest(path)
    return iter_frames(manifest)


def iter_frames(manifest: SequenceManifest) -> Iterator[Frame]:
    n = len(manifest.palette)
    for rec in manifest.frames:
        yield load_frame(rec, n)
