"""Command-line entry point: ``semgrid {synth,map,vectorize,eval,report}``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(unreadable, malformed or inconsistent inputs).
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .association import associate
from .errors import OutOfWorldWarning, SemgridError
from .evaluation import EvalConfig, EvalReport, EvalSample, evaluate, format_transfer_table, save_report
from .grid import ConfusionMatrix, GridMapConfig, ProbGrid, crop_ego
from .vector import VectorMap
from .vectorizer import VectorizerConfig, available_vectorizers, vectorize
from .dataset import formats
from .dataset.sequence import iter_frames, load_manifest
from .dataset.synthetic import SyntheticSceneSpec, generate_synthetic


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    d = formats.load_json(args.spec) if args.spec else {}
    overrides = {
        "num_cameras": args.cameras,
        "frames": args.frames,
        "seed": args.seed,
        "mask_noise": args.mask_noise,
        "lidar_azimuth_resolution_deg": args.azimuth_resolution,
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    spec = SyntheticSceneSpec.from_json(d)
    ds = generate_synthetic(spec, args.out)
    n_pts = np.mean([len(f.cloud) for f in ds.sequence.frames])
    print(f"wrote {spec.frames} frames ({n_pts:.0f} points/frame, {len(ds.sequence.rig.cameras)} cameras)")
    print(ds.manifest_path)
    return 0


# -- map -----------------------------------------------------------------------

def _world_extent(manifest, config_extent, margin):
    if config_extent is not None:
        return config_extent
    if manifest.world_extent is not None:
        return manifest.world_extent
    xy = np.array([f.pose.world_from_vehicle.translation[:2] for f in manifest.frames]) if manifest.frames else np.zeros((1, 2))
    lo, hi = xy.min(axis=0) - margin, xy.max(axis=0) + margin
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def cmd_map(args) -> int:
    manifest = load_manifest(args.manifest)
    rig = manifest.rig.subset(args.cameras) if args.cameras else manifest.rig
    n = len(manifest.palette)
    if args.confusion:
        cm = formats.read_confusion(args.confusion)
    elif manifest.mask_confusion is not None:
        cm = manifest.mask_confusion
    else:
        cm = ConfusionMatrix.symmetric(n, args.mask_accuracy)
    ip = formats.read_intensity_prior(args.intensity_prior) if args.intensity_prior else manifest.intensity_prior
    ego = tuple(args.ego_extent)
    extent = _world_extent(manifest, tuple(args.world_extent) if args.world_extent else None, max(ego) + 10.0)
    config = GridMapConfig(extent, n, args.cell_size, ego, ip.bins if ip is not None else 8)
    grid = ProbGrid(config, cm, ip)

    out = formats.ensure_dir(args.out)
    ego_dir = formats.ensure_dir(out / "ego")
    timings = []
    for k, frame in enumerate(iter_frames(manifest)):
        masks = {cid: m for cid, m in frame.masks.items() if cid in rig.camera_ids}
        t0 = time.perf_counter()
        spc = associate(frame.cloud, masks, rig)
        grid.integrate(spc, frame.pose, rig)
        dt = time.perf_counter() - t0
        timings.append({"frame": k, "timestamp": frame.timestamp, "points": len(frame.cloud),
                        "labelled": len(spc), "seconds": dt})
        print(f"frame {k:4d} t={frame.timestamp:.3f} points={len(frame.cloud)} "
              f"labelled={len(spc)} integrate_ms={1000 * dt:.1f}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutOfWorldWarning)
            sm = crop_ego(grid, frame.pose, manifest.palette)
        formats.write_semantic_map(ego_dir / f"{k:06d}", sm)
    formats.write_snapshot(out / "world", grid.render(), config.cell_size, config.world_extent, "world",
                           manifest.palette)
    ms = [1000 * t["seconds"] for t in timings]
    summary = {
        "frames": len(timings),
        "mean_ms": float(np.mean(ms)) if ms else 0.0,
        "max_ms": float(np.max(ms)) if ms else 0.0,
        "degenerate_updates": grid.degenerate_count,
        "out_of_extent_points": grid.out_of_extent_count,
        "per_frame": timings,
    }
    formats.dump_json(summary, out / "timing.json")
    print(f"mean integrate_ms={summary['mean_ms']:.1f} max integrate_ms={summary['max_ms']:.1f} "
          f"over {summary['frames']} frames")
    return 0


# -- vectorize -----------------------------------------------------------------

def _snapshot_inputs(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return formats.list_files(p, ".json")
    return [p]


def cmd_vectorize(args) -> int:
    config = VectorizerConfig.from_dict(formats.load_json(args.config)) if args.config else VectorizerConfig()
    out = formats.ensure_dir(args.out)
    inputs = _snapshot_inputs(args.maps)
    for src in inputs:
        sm = formats.read_semantic_map(src)
        vm = vectorize(sm, config, args.vectorizer)
        formats.write_vector_map(out / f"{Path(src).stem}.json", vm)
    print(f"vectorized {len(inputs)} maps with {args.vectorizer!r} into {out}")
    return 0


# -- eval ----------------------------------------------------------------------

def _vector_inputs(path) -> dict[str, Path]:
    p = Path(path)
    files = formats.list_files(p, ".json") if p.is_dir() else [p]
    return {f.stem: f for f in files}


def cmd_eval(args) -> int:
    preds = _vector_inputs(args.pred)
    gts = _vector_inputs(args.gt)
    if len(preds) == 1 and len(gts) == 1:
        keys = [(next(iter(preds)), next(iter(gts)))]
    else:
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        if extra:
            raise SemgridError(f"predictions without ground truth: {', '.join(extra[:5])}")
        if missing and not args.allow_missing:
            raise SemgridError(f"ground truth without predictions: {', '.join(missing[:5])} "
                               "(use --allow-missing to score them as empty)")
        keys = [(k, k) for k in sorted(gts)]
    samples = []
    for pk, gk in keys:
        pred = formats.read_vector_map(preds[pk]) if pk in preds else VectorMap()
        samples.append(EvalSample(pred, formats.read_vector_map(gts[gk]), gk))
    config = EvalConfig(thresholds=args.thresholds, squared_chamfer=args.squared_chamfer)
    report = evaluate(samples, config)
    if args.out:
        save_report(report, args.out)
    print(report.table(args.train, args.test))
    return 0


# -- report --------------------------------------------------------------------

def _map_percent(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        return 100.0 * EvalReport.from_json(formats.load_json(value)).mAP


def cmd_report(args) -> int:
    cross, same = _map_percent(args.cross), _map_percent(args.same)
    row = (args.model, args.train, args.test_cross, cross, args.test_same, same)
    print(format_transfer_table([row]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semgrid", description="Semantic grid mapping, vectorization and evaluation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", help="scene spec JSON (fields of SyntheticSceneSpec)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--cameras", type=int, help="camera count (1-7)")
    s.add_argument("--frames", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--mask-noise", type=float, help="symmetric mask error rate")
    s.add_argument("--azimuth-resolution", type=float, help="LiDAR azimuth step in degrees")
    s.set_defaults(fn=cmd_synth)

    m = sub.add_parser("map", help="build semantic grid maps from a sequence")
    m.add_argument("manifest")
    m.add_argument("--out", required=True)
    m.add_argument("--cell-size", type=float, default=0.2)
    m.add_argument("--ego-extent", type=_float_list, default=(30.0, 30.0, 15.0, 15.0),
                   help="forward,backward,left,right in metres")
    m.add_argument("--world-extent", type=_float_list, help="x_min,y_min,x_max,y_max")
    m.add_argument("--confusion", help="JSON confusion matrix P(z|c); default from the manifest")
    m.add_argument("--mask-accuracy", type=float, default=0.9,
                   help="symmetric mask accuracy used when no confusion matrix is given")
    m.add_argument("--intensity-prior", help="JSON intensity prior P(bin|c)")
    m.add_argument("--cameras", nargs="+", help="restrict to these camera ids")
    m.set_defaults(fn=cmd_map)

    v = sub.add_parser("vectorize", help="convert ego snapshots to vector maps")
    v.add_argument("maps", help="snapshot sidecar JSON or a directory of them")
    v.add_argument("--out", required=True)
    v.add_argument("--vectorizer", default="baseline", help=f"one of {available_vectorizers()}")
    v.add_argument("--config", help="JSON with VectorizerConfig fields")
    v.set_defaults(fn=cmd_vectorize)

    e = sub.add_parser("eval", help="score predicted vector maps against ground truth")
    e.add_argument("--pred", required=True, help="vector map JSON or directory")
    e.add_argument("--gt", required=True, help="vector map JSON or directory")
    e.add_argument("--thresholds", type=_float_list, default=(0.5, 1.0, 1.5))
    e.add_argument("--squared-chamfer", action=argparse.BooleanOptionalAction, default=True)
    e.add_argument("--out", help="write the report JSON here")
    e.add_argument("--allow-missing", action="store_true")
    e.add_argument("--train", default="")
    e.add_argument("--test", default="")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("report", help="cross-dataset transfer table from two mAPs")
    r.add_argument("cross", help="cross-dataset report JSON or mAP in percent")
    r.add_argument("same", help="same-dataset report JSON or mAP in percent")
    r.add_argument("--model", default="model")
    r.add_argument("--train", default="")
    r.add_argument("--test-cross", default="")
    r.add_argument("--test-same", default="")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "fn", None) is None:
            parser.print_help(sys.stderr)
            return 1
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (SemgridError, OSError, ValueError) as e:
        print(f"semgrid {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
