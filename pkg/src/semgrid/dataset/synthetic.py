"""Synthetic straight-road scenes with exact ground truth.

The world is a flat plane (z = 0). A road runs along world +x from
``x = 0`` to ``road_length`` centred on ``y = 0``; lanes are separated by
painted divider strips, flanked by curb strips and sidewalks, and crossed by
rectangular crosswalks. Everything off the road corridor is void.

Lateral layout with ``h = lane_count * lane_width / 2``::

    road      [-h, h)
    curb      [h, h + curb_w)     and [-h - curb_w, -h)
    sidewalk  beyond the curbs, sidewalk_width wide
    divider k [y_k, y_k + marking_w)  with y_k = -h + k * lane_width

Ground-truth dividers and boundaries are the centre lines of their strips,
so a skeleton traced from a perfect raster lands on them exactly. Dividers
are interrupted by crosswalks; boundaries and lane centrelines are not.

The vehicle drives along the centre of lane ``ego_lane`` (0 = rightmost) at
constant speed. LiDAR returns are ideal ray/ground intersections; camera
masks are rendered by casting each pixel centre onto the ground, then
optionally corrupted by sampling from a confusion matrix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import shapely
from scipy.special import ndtr
from shapely.geometry import LineString, Polygon, box

from ..association import PointCloud, SemanticMask
from ..errors import InvalidSpec
from ..geometry import Camera, CameraIntrinsics, Pose, RigidTransform, SensorRig, compose, invert
from ..grid import ConfusionMatrix, GridMapConfig, IntensityPrior
from ..palette import (CROSSWALK, CURB, DEFAULT_PALETTE, LANE_MARKING, ROAD, SIDEWALK, VOID,
                       palette_to_json)
from ..parallel import ordered_map
from ..vector import MapClass, MapInstance, Polyline, VectorMap
from . import formats

NUM_CLASSES = len(DEFAULT_PALETTE)
# Mean LiDAR reflectivity per palette class.
INTENSITY_MEAN = {VOID: 0.10, ROAD: 0.15, LANE_MARKING: 0.75, CROSSWALK: 0.70, SIDEWALK: 0.30, CURB: 0.40}
MIN_GT_LENGTH = 1.0


@dataclass
class SyntheticSceneSpec:
    road_length: float = 200.0
    lane_count: int = 2
    lane_width: float = 3.6
    marking_width: float = 0.2
    curb_width: float = 0.2
    sidewalk_width: float = 3.0
    crosswalk_positions: tuple[float, ...] = (60.0, 140.0)
    crosswalk_length: float = 4.0

    lidar_channels: int = 64
    lidar_elevation_deg: tuple[float, float] = (-25.0, -1.0)
    lidar_azimuth_resolution_deg: float = 0.2
    lidar_height: float = 1.8
    lidar_yaw_deg: float = 90.0
    lidar_max_range: float = 80.0
    lidar_min_range: float = 1.0
    intensity_noise: float = 0.05

    num_cameras: int = 6
    image_width: int = 640
    image_height: int = 480
    camera_hfov_deg: float = 70.0
    camera_height: float = 1.6
    camera_pitch_deg: float = 10.0
    # Optional explicit mounts: (yaw_deg, pitch_deg, x, y, z) in the vehicle frame.
    camera_poses: tuple | None = None

    # Symmetric mask error rate; ignored when mask_confusion is given.
    mask_noise: float = 0.0
    mask_confusion: list | None = None

    frames: int = 20
    frame_rate: float = 10.0
    speed: float = 10.0
    start_x: float = 40.0
    ego_lane: int = 0

    cell_size: float = 0.2
    ego_extent: tuple[float, float, float, float] = (30.0, 30.0, 15.0, 15.0)
    world_margin: float = 20.0
    seed: int = 0

    def __post_init__(self):
        self.crosswalk_positions = tuple(float(v) for v in self.crosswalk_positions)
        self.lidar_elevation_deg = tuple(float(v) for v in self.lidar_elevation_deg)
        self.ego_extent = tuple(float(v) for v in self.ego_extent)
        if self.camera_poses is not None:
            self.camera_poses = tuple(tuple(float(v) for v in p) for p in self.camera_poses)
        self.validate()

    def validate(self):
        def bad(msg):
            raise InvalidSpec(msg)

        if self.road_length <= 0 or self.lane_count < 1 or self.lane_width <= 0:
            bad("road needs positive length, at least one lane and positive lane width")
        if not 0 < self.marking_width < self.lane_width:
            bad("marking_width must be positive and narrower than a lane")
        if self.curb_width <= 0 or self.sidewalk_width < 0:
            bad("curb width must be positive and sidewalk width non-negative")
        for x in self.crosswalk_positions:
            if x < 0 or x + self.crosswalk_length > self.road_length:
                bad(f"crosswalk at x={x} does not fit on the road")
        if self.lidar_channels < 1 or self.lidar_azimuth_resolution_deg <= 0:
            bad("LiDAR needs channels and a positive azimuth resolution")
        lo, hi = self.lidar_elevation_deg
        if not lo <= hi < 90 or lo <= -90:
            bad("LiDAR elevation range must satisfy -90 < low <= high < 90")
        n_cam = len(self.camera_poses) if self.camera_poses is not None else self.num_cameras
        if not 1 <= n_cam <= 7:
            bad("camera rig must have between 1 and 7 cameras")
        if not 0 < self.camera_hfov_deg < 180:
            bad("camera field of view must lie in (0, 180) degrees")
        if not 0.0 <= self.mask_noise < 1.0:
            bad("mask_noise must lie in [0, 1)")
        if self.frames < 1 or self.frame_rate <= 0 or self.speed < 0:
            bad("need at least one frame, a positive frame rate and non-negative speed")
        if not 0 <= self.ego_lane < self.lane_count:
            bad("ego_lane must index an existing lane")
        end_x = self.start_x + (self.frames - 1) * self.speed / self.frame_rate
        if self.start_x < 0 or end_x > self.road_length:
            bad("trajectory leaves the road")
        if self.cell_size <= 0:
            bad("cell_size must be positive")

    @property
    def half_width(self) -> float:
        return self.lane_count * self.lane_width / 2.0

    def confusion(self) -> ConfusionMatrix | None:
        """Mask corruption matrix, or None for noise-free masks."""
        if self.mask_confusion is not None:
            cm = ConfusionMatrix(np.asarray(self.mask_confusion, dtype=np.float64))
            if cm.num_classes != NUM_CLASSES:
                raise InvalidSpec(f"mask_confusion must be {NUM_CLASSES}x{NUM_CLASSES}")
            return cm
        if self.mask_noise > 0:
            return ConfusionMatrix.symmetric(NUM_CLASSES, 1.0 - self.mask_noise)
        return None

    def world_extent(self) -> tuple[float, float, float, float]:
        m = self.world_margin
        half = max(self.half_width + self.curb_width + self.sidewalk_width, self.ego_extent[2], self.ego_extent[3])
        return (-m, -(half + m), self.road_length + m, half + m)

    def grid_config(self, cell_size: float | None = None) -> GridMapConfig:
        return GridMapConfig(self.world_extent(), NUM_CLASSES, cell_size or self.cell_size, self.ego_extent)

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticSceneSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown scene spec keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidSpec(str(e)) from None


class RoadScene:
    """Class lookup and vector ground truth for a :class:`SyntheticSceneSpec`."""

    def __init__(self, spec: SyntheticSceneSpec):
        self.spec = spec
        h = spec.half_width
        self.divider_y = [-h + k * spec.lane_width for k in range(1, spec.lane_count)]

    def classify(self, x, y) -> np.ndarray:
        s = self.spec
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        h, cw, sw = s.half_width, s.curb_width, s.sidewalk_width
        out = np.full(np.broadcast(x, y).shape, VOID, dtype=np.uint8)
        along = (x >= 0) & (x < s.road_length)
        out[along & (y >= -h - cw - sw) & (y < h + cw + sw)] = SIDEWALK
        out[along & (((y >= h) & (y < h + cw)) | ((y >= -h - cw) & (y < -h)))] = CURB
        road = along & (y >= -h) & (y < h)
        out[road] = ROAD
        for yk in self.divider_y:
            out[road & (y >= yk) & (y < yk + s.marking_width)] = LANE_MARKING
        for xc in s.crosswalk_positions:
            out[road & (x >= xc) & (x < xc + s.crosswalk_length)] = CROSSWALK
        return out

    def lane_center(self, lane: int) -> float:
        s = self.spec
        lo = -s.half_width + lane * s.lane_width
        hi = lo + s.lane_width
        if lane > 0:
            lo += s.marking_width
        return (lo + hi) / 2.0

    def _divider_spans(self):
        s = self.spec
        cuts = sorted((xc, xc + s.crosswalk_length) for xc in s.crosswalk_positions)
        spans, x = [], 0.0
        for a, b in cuts:
            if a > x:
                spans.append((x, a))
            x = max(x, b)
        if x < s.road_length:
            spans.append((x, s.road_length))
        return spans

    def world_elements(self) -> list[tuple[MapClass, object]]:
        """Ground-truth elements as shapely geometries in world coordinates."""
        s = self.spec
        L, h = s.road_length, s.half_width
        out = []
        for xc in s.crosswalk_positions:
            out.append((MapClass.PED_CROSSING, Polygon([(xc, -h), (xc + s.crosswalk_length, -h),
                                                        (xc + s.crosswalk_length, h), (xc, h)])))
        for yk in self.divider_y:
            yc = yk + s.marking_width / 2.0
            for a, b in self._divider_spans():
                out.append((MapClass.DIVIDER, LineString([(a, yc), (b, yc)])))
        for yc in (-h - s.curb_width / 2.0, h + s.curb_width / 2.0):
            out.append((MapClass.BOUNDARY, LineString([(0.0, yc), (L, yc)])))
        for lane in range(s.lane_count):
            yc = self.lane_center(lane)
            # Right-hand traffic: lanes right of the first divider flow +x.
            right_side = lane < (s.lane_count + 1) // 2
            pts = [(0.0, yc), (L, yc)] if right_side else [(L, yc), (0.0, yc)]
            out.append((MapClass.CENTERLINE, LineString(pts)))
        return out

    def world_vector_map(self) -> VectorMap:
        vm = VectorMap()
        for mc, geom in self.world_elements():
            vm.instances.append(_instance(mc, geom))
        return vm

    def ego_vector_map(self, pose: Pose, ego_extent=None) -> VectorMap:
        """Ground truth in the ego frame, clipped to the ego window."""
        f, b, l, r = ego_extent or self.spec.ego_extent
        window = box(-b, -r, f, l)
        ego_from_world = invert(pose.world_from_vehicle)
        m = ego_from_world.as_matrix()
        affine = [m[0, 0], m[0, 1], m[1, 0], m[1, 1], m[0, 3], m[1, 3]]
        vm = VectorMap(timestamp=pose.timestamp)
        for mc, geom in self.world_elements():
            clipped = shapely.affinity.affine_transform(geom, affine).intersection(window)
            for part in getattr(clipped, "geoms", [clipped]):
                if part.is_empty:
                    continue
                if mc.closed:
                    if part.geom_type != "Polygon" or part.area < 1e-6:
                        continue
                elif part.geom_type != "LineString" or part.length < MIN_GT_LENGTH:
                    continue
                vm.instances.append(_instance(mc, part))
        return vm

    def raster(self, config: GridMapConfig) -> np.ndarray:
        """World-aligned ground-truth class raster sampled at cell centres."""
        rows, cols = config.world_shape
        cx, cy = config.world_cell_center(np.arange(rows)[:, None], np.arange(cols)[None, :])
        return self.classify(cx, cy)

    def intensity_prior(self, bins: int = 8) -> IntensityPrior:
        """Exact P(bin | class) of the clipped-Gaussian intensity model."""
        edges = np.linspace(0.0, 1.0, bins + 1)
        sigma = max(self.spec.intensity_noise, 1e-9)
        m = np.zeros((bins, NUM_CLASSES))
        for c in range(NUM_CLASSES):
            cdf = ndtr((edges - INTENSITY_MEAN[c]) / sigma)
            cdf[0], cdf[-1] = 0.0, 1.0
            m[:, c] = np.diff(cdf)
        return IntensityPrior(m / m.sum(axis=0, keepdims=True))


def _instance(mc: MapClass, geom) -> MapInstance:
    if mc.closed:
        pts = np.asarray(geom.exterior.coords)[:-1]
        # Orient consistently (counter-clockwise) so orderings are comparable.
        if Polygon(pts).exterior.is_ccw is False:
            pts = pts[::-1]
        return MapInstance(mc, Polyline(pts, closed=True), 1.0)
    return MapInstance(mc, Polyline(np.asarray(geom.coords), closed=False), 1.0)


def rasterize_vector_map(vm: VectorMap, config: GridMapConfig, spec: SyntheticSceneSpec) -> np.ndarray:
    """Paint world-frame ground-truth elements back onto the world grid.

    Dividers and boundaries become strips of the marking / curb width; crossings
    are filled. Centrelines are not painted (they have no surface class).
    """
    rows, cols = config.world_shape
    cx, cy = config.world_cell_center(np.arange(rows)[:, None], np.arange(cols)[None, :])
    cx, cy = np.broadcast_arrays(cx, cy)
    out = np.zeros((rows, cols), dtype=np.uint8)
    paint = {
        MapClass.BOUNDARY: (CURB, spec.curb_width / 2.0),
        MapClass.DIVIDER: (LANE_MARKING, spec.marking_width / 2.0),
        MapClass.PED_CROSSING: (CROSSWALK, 0.0),
    }
    for mc in (MapClass.BOUNDARY, MapClass.DIVIDER, MapClass.PED_CROSSING):
        cls, half = paint[mc]
        for inst in vm.of_class(mc):
            if mc.closed:
                geom = Polygon(inst.polyline.points)
            else:
                geom = LineString(inst.polyline.points).buffer(half, cap_style="flat")
            x0, y0, x1, y1 = geom.bounds
            sel = (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
            hit = shapely.contains_xy(geom, cx[sel], cy[sel])
            idx = np.flatnonzero(sel.ravel())[hit]
            out.ravel()[idx] = cls
    return out


# -- sensors -------------------------------------------------------------------

def _vehicle_from_camera(yaw_deg, pitch_deg, x, y, z) -> RigidTransform:
    yaw, pitch = math.radians(yaw_deg), math.radians(pitch_deg)
    fwd = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    return RigidTransform(np.column_stack([right, down, fwd]), (x, y, z))


def camera_mounts(spec: SyntheticSceneSpec):
    if spec.camera_poses is not None:
        return list(spec.camera_poses)
    n = spec.num_cameras
    return [(i * 360.0 / n, spec.camera_pitch_deg, 0.0, 0.0, spec.camera_height) for i in range(n)]


def build_rig(spec: SyntheticSceneSpec) -> SensorRig:
    vehicle_from_lidar = RigidTransform.from_yaw(math.radians(spec.lidar_yaw_deg), (0.0, 0.0, spec.lidar_height))
    k = CameraIntrinsics.from_fov(spec.image_width, spec.image_height, spec.camera_hfov_deg)
    cams = []
    for i, mount in enumerate(camera_mounts(spec)):
        cam_from_vehicle = invert(_vehicle_from_camera(*mount))
        cams.append(Camera(f"cam{i}", k, compose(cam_from_vehicle, vehicle_from_lidar)))
    return SensorRig(tuple(cams), vehicle_from_lidar)


def build_trajectory(spec: SyntheticSceneSpec, scene: RoadScene | None = None) -> list[Pose]:
    scene = scene or RoadScene(spec)
    y = scene.lane_center(spec.ego_lane)
    dt = 1.0 / spec.frame_rate
    return [
        Pose(k * dt, RigidTransform.from_translation((spec.start_x + spec.speed * k * dt, y, 0.0)))
        for k in range(spec.frames)
    ]


def simulate_lidar(scene: RoadScene, rig: SensorRig, pose: Pose, rng: np.random.Generator) -> PointCloud:
    s = scene.spec
    lo, hi = np.radians(s.lidar_elevation_deg)
    elev = np.linspace(lo, hi, s.lidar_channels)
    n_az = int(round(360.0 / s.lidar_azimuth_resolution_deg))
    az = (np.arange(n_az) + rng.random()) * (2 * np.pi / n_az)
    ee, aa = np.meshgrid(elev, az, indexing="ij")
    d = np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1).reshape(-1, 3)
    world_from_lidar = compose(pose.world_from_vehicle, rig.lidar_to_vehicle)
    origin = world_from_lidar.translation
    dw = d @ world_from_lidar.rotation.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dw[:, 2] < 0, -origin[2] / dw[:, 2], np.inf)
    keep = (t >= s.lidar_min_range) & (t <= s.lidar_max_range)
    pts = d[keep] * t[keep, None]
    hit = origin + dw[keep] * t[keep, None]
    cls = scene.classify(hit[:, 0], hit[:, 1])
    mean = np.vectorize(INTENSITY_MEAN.get, otypes=[float])(np.arange(NUM_CLASSES))[cls]
    inten = np.clip(mean + rng.normal(0.0, s.intensity_noise, size=mean.shape), 0.0, 1.0)
    cloud = np.column_stack([pts, inten]).astype(np.float32).astype(np.float64)
    return PointCloud(cloud, pose.timestamp)


def render_mask(scene: RoadScene, camera: Camera, rig: SensorRig, pose: Pose) -> np.ndarray:
    """Noise-free class mask: each pixel centre is cast onto the ground plane."""
    k = camera.intrinsics
    v, u = np.mgrid[0:k.height, 0:k.width]
    rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones(u.shape)], axis=-1).reshape(-1, 3)
    world_from_cam = compose(compose(pose.world_from_vehicle, rig.lidar_to_vehicle), invert(camera.camera_from_lidar))
    origin = world_from_cam.translation
    dw = rays @ world_from_cam.rotation.T
    out = np.full(rays.shape[0], VOID, dtype=np.uint8)
    down = dw[:, 2] < 0
    t = -origin[2] / dw[down, 2]
    hit = origin + dw[down] * t[:, None]
    out[down] = scene.classify(hit[:, 0], hit[:, 1])
    return out.reshape(k.height, k.width)


def apply_confusion(labels: np.ndarray, cm: ConfusionMatrix, rng: np.random.Generator) -> np.ndarray:
    """Replace each true label c with a draw from column c of ``cm``."""
    labels = np.asarray(labels)
    flat = labels.ravel().astype(np.int64)
    cum = np.cumsum(cm.p_z_given_c, axis=0)  # cum[z, c] = P(Z <= z | c)
    u = rng.random(flat.size)
    obs = np.zeros(flat.size, dtype=np.int64)
    for z in range(cm.num_classes - 1):
        obs += u >= cum[z, flat]
    return obs.reshape(labels.shape).astype(np.uint8)


@dataclass
class SyntheticFrame:
    index: int
    pose: Pose
    cloud: PointCloud
    masks: dict[str, SemanticMask]
    clean_masks: dict[str, np.ndarray]
    ground_truth: VectorMap


@dataclass
class SyntheticSequence:
    spec: SyntheticSceneSpec
    scene: RoadScene
    rig: SensorRig
    frames: list[SyntheticFrame] = field(default_factory=list)

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]


def simulate(spec: SyntheticSceneSpec) -> SyntheticSequence:
    """Generate all frames in memory (deterministic for a fixed seed)."""
    scene = RoadScene(spec)
    rig = build_rig(spec)
    rng = np.random.default_rng(spec.seed)
    cm = spec.confusion()
    seq = SyntheticSequence(spec, scene, rig)
    for i, pose in enumerate(build_trajectory(spec, scene)):
        cloud = simulate_lidar(scene, rig, pose, rng)
        clean = dict(zip(rig.camera_ids, ordered_map(lambda c: render_mask(scene, c, rig, pose), rig.cameras)))
        masks = {}
        for cid in rig.camera_ids:
            ids = clean[cid] if cm is None else apply_confusion(clean[cid], cm, rng)
            masks[cid] = SemanticMask(ids, NUM_CLASSES)
        seq.frames.append(SyntheticFrame(i, pose, cloud, masks, clean, scene.ego_vector_map(pose)))
    return seq


@dataclass
class SyntheticDataset:
    manifest_path: Path
    ground_truth: VectorMap
    raster: np.ndarray
    grid_config: GridMapConfig
    sequence: SyntheticSequence


def generate_synthetic(spec: SyntheticSceneSpec, out_dir) -> SyntheticDataset:
    """Write a complete dataset under ``out_dir``.

    Layout: ``manifest.json``, ``rig.json``, ``trajectory.txt``, ``spec.json``,
    ``clouds/NNNNNN.bin``, ``masks/NNNNNN_<cam>.pgm``, per-frame ego ground
    truth ``gt/NNNNNN.json``, world ground truth ``gt_world.json`` and the
    ground-truth raster snapshot ``gt_raster.pgm`` + ``gt_raster.json``.
    """
    out = formats.ensure_dir(out_dir)
    formats.ensure_dir(out / "clouds")
    formats.ensure_dir(out / "masks")
    formats.ensure_dir(out / "gt")
    seq = simulate(spec)
    config = spec.grid_config()
    raster = seq.scene.raster(config)
    world_vm = seq.scene.world_vector_map()

    formats.write_rig(out / "rig.json", seq.rig)
    formats.write_trajectory(out / "trajectory.txt", seq.poses)
    formats.dump_json(spec.to_json(), out / "spec.json")
    frames = []
    for fr in seq.frames:
        stem = f"{fr.index:06d}"
        formats.write_point_cloud(out / "clouds" / f"{stem}.bin", fr.cloud)
        masks = {}
        for cid, m in fr.masks.items():
            rel = f"masks/{stem}_{cid}.pgm"
            formats.write_pgm(out / rel, m.class_ids)
            masks[cid] = rel
        formats.write_vector_map(out / "gt" / f"{stem}.json", fr.ground_truth)
        frames.append({"timestamp": fr.pose.timestamp, "cloud": f"clouds/{stem}.bin", "masks": masks})
    formats.write_vector_map(out / "gt_world.json", world_vm)
    formats.write_snapshot(out / "gt_raster", raster, config.cell_size, config.world_extent, "world", DEFAULT_PALETTE)

    manifest = {
        "rig": "rig.json",
        "trajectory": "trajectory.txt",
        "palette": palette_to_json(DEFAULT_PALETTE),
        "frame_rate": spec.frame_rate,
        "world_extent": list(config.world_extent),
        "frames": frames,
    }
    cm = spec.confusion()
    if cm is not None:
        manifest["mask_confusion"] = cm.p_z_given_c.tolist()
    path = out / "manifest.json"
    formats.dump_json(manifest, path)
    return SyntheticDataset(path, world_vm, raster, config, seq)
