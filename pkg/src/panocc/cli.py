"""Command-line interface: reproducible file-in/file-out pipelines.

Exit codes: 0 success, 1 computation error (bad calibration, degenerate
geometry, empty supervision...), 2 usage or I/O error (missing files,
malformed formats, bad flags).  Every command is deterministic for
identical inputs; ``--threads`` (or ``PANOCC_THREADS``) is accepted for
interface stability and never changes a single output bit — all reductions
use fixed-order summation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import amoe3d, bigrid, camera, lifting, ssc, synth, unwrap
from .errors import FormatError, PanoccError
from .manifest import load_manifest
from .ptns import read_ptns, write_ptns


def _require_file(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _load_image(path) -> unwrap.ImagePlane:
    arr = read_ptns(_require_file(path))
    if arr.ndim not in (2, 3):
        raise FormatError(f"{path}: expected a rank-2 or rank-3 image, got rank {arr.ndim}")
    return unwrap.ImagePlane(data=arr.astype(np.float64))


def _load_label_grid(path) -> ssc.OccupancyGrid:
    arr = read_ptns(_require_file(path))
    if arr.ndim != 3 or not np.issubdtype(arr.dtype, np.integer):
        raise FormatError(
            f"{path}: expected a rank-3 integer label grid, got rank {arr.ndim} "
            f"{arr.dtype}"
        )
    return ssc.OccupancyGrid(labels=arr.astype(np.int64))


def _load_bool_mask(path, shape=None) -> np.ndarray:
    arr = read_ptns(_require_file(path))
    if shape is not None and arr.shape != tuple(shape):
        raise FormatError(f"{path}: mask shape {arr.shape}, expected {tuple(shape)}")
    return arr.astype(bool)


def _parse_floats(text, n, label):
    parts = text.split(",")
    if len(parts) != n:
        raise FormatError(f"--{label} needs {n} comma-separated values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise FormatError(f"--{label}: {e}") from e


def _cartesian_from_arg(text) -> bigrid.CartesianGridSpec:
    v = _parse_floats(text, 9, "cartesian")
    return bigrid.CartesianGridSpec(
        nx=int(v[0]), ny=int(v[1]), nz=int(v[2]),
        x0=v[3], y0=v[4], z0=v[5], dx=v[6], dy=v[7], dz=v[8],
    )


def _polar_from_arg(text) -> bigrid.PolarGridSpec:
    v = _parse_floats(text, 7, "polar")
    return bigrid.PolarGridSpec(
        nr=int(v[0]), nphi=int(v[1]), nz=int(v[2]),
        r0=v[3], r1=v[4], z0=v[5], dz=v[6],
    )


def _grids_from_args(args):
    if args.manifest:
        m = load_manifest(_require_file(args.manifest))
        return m.cartesian, m.polar, m
    if not (args.cartesian and args.polar):
        raise FormatError(
            "provide either --manifest or both --cartesian and --polar grid specs"
        )
    return _cartesian_from_arg(args.cartesian), _polar_from_arg(args.polar), None


def _write_volume(args_out, vol: lifting.FeatureVolume, valid_out=None):
    write_ptns(args_out, vol.data.astype(np.float32))
    print(f"wrote {args_out}")
    if valid_out:
        write_ptns(valid_out, vol.valid.astype(np.uint8))
        print(f"wrote {valid_out}")


# -- commands --------------------------------------------------------------

def cmd_unwrap(args):
    model = camera.load_calibration(_require_file(args.calib))
    img = _load_image(args.image)
    table = unwrap.build_remap(args.width, args.height, model)
    out = unwrap.apply_remap(img, table)
    write_ptns(args.out, out.data.astype(np.float32))
    print(f"wrote {args.out}")
    if args.mask_out:
        write_ptns(args.mask_out, out.valid.astype(np.uint8))
        print(f"wrote {args.mask_out}")
    return 0


def cmd_voxelize(args):
    ca, po, _ = _grids_from_args(args)
    os.makedirs(args.out_dir, exist_ok=True)
    ca_path = os.path.join(args.out_dir, "cartesian_centroids.ptns")
    po_path = os.path.join(args.out_dir, "polar_centroids.ptns")
    write_ptns(ca_path, bigrid.cartesian_centroids(ca).astype(np.float32))
    print(f"wrote {ca_path}")
    write_ptns(po_path, bigrid.polar_centroids(po).astype(np.float32))
    print(f"wrote {po_path}")
    for level in sorted({int(s) for s in args.levels.split(",")}):
        table = bigrid.build_cross_indices(ca, po, level)
        path = os.path.join(args.out_dir, f"cross_level{level}.ptns")
        write_ptns(path, table.indices.astype(np.uint32))
        print(f"wrote {path}")
    return 0


def _planes_from_args(args):
    planes = []
    for spec in args.plane:
        scale_text, _, path = spec.partition(":")
        try:
            scale = int(scale_text)
        except ValueError as e:
            raise FormatError(f"--plane expects SCALE:PATH, got {spec!r}") from e
        arr = read_ptns(_require_file(path))
        if arr.ndim != 3:
            raise FormatError(f"{path}: expected a rank-3 plane, got rank {arr.ndim}")
        planes.append((scale, path, arr.astype(np.float64)))
    planes.sort(key=lambda t: t[0])
    return planes


def cmd_lift(args):
    model = camera.load_calibration(_require_file(args.calib))
    ca, po, _ = _grids_from_args(args)
    grid = ca if args.grid == "cartesian" else po
    head = None
    if args.gdc:
        w = read_ptns(_require_file(os.path.join(args.gdc, "gdc_weights.ptns")))
        b = read_ptns(_require_file(os.path.join(args.gdc, "gdc_bias.ptns")))
        head = lifting.GdcHead(weights=w.astype(np.float64), bias=b.astype(np.float64))
    volumes = []
    for scale, _, data in _planes_from_args(args):
        plane = lifting.FeaturePlane(data=data, scale=scale, view=args.view)
        delta = lifting.gdc_offset(plane, head) if head is not None else None
        volumes.append(lifting.lift_volume(grid, args.view, model, plane, delta))
    if not volumes:
        raise FormatError("at least one --plane is required")
    weights = None
    if args.weights:
        logits = read_ptns(_require_file(args.weights))
        weights = lifting.ScaleWeights(logits=logits.astype(np.float64))
    fused = volumes[0] if len(volumes) == 1 and weights is None else (
        lifting.fuse_scales(volumes, weights)
    )
    _write_volume(args.out, fused, args.valid_out)
    return 0


def cmd_fuse(args):
    ca, po, _ = _grids_from_args(args)
    table = bigrid.build_cross_indices(ca, po, args.level)
    align, saliency, moe = amoe3d.load_fusion_params(_require_file(args.params))
    po_data = read_ptns(_require_file(args.polar_volume)).astype(np.float64)
    ca_data = read_ptns(_require_file(args.cartesian_volume)).astype(np.float64)
    po_valid = (
        _load_bool_mask(args.polar_valid, (po_data.shape[0],))
        if args.polar_valid
        else np.ones(po_data.shape[0], dtype=bool)
    )
    ca_valid = (
        _load_bool_mask(args.cartesian_valid, (ca_data.shape[0],))
        if args.cartesian_valid
        else np.ones(ca_data.shape[0], dtype=bool)
    )
    v_po = lifting.FeatureVolume(grid=table.po_spec, data=po_data, valid=po_valid)
    v_ca = lifting.FeatureVolume(grid=table.ca_spec, data=ca_data, valid=ca_valid)
    injected = amoe3d.inject_polar(v_po, table, v_ca, align)
    refined = amoe3d.amoe3d_forward(injected, saliency, moe)
    _write_volume(args.out, refined, args.valid_out)
    return 0


def _eval_direct(args):
    pred = _load_label_grid(args.pred)
    gt = _load_label_grid(args.gt)
    if pred.labels.shape != gt.labels.shape:
        raise FormatError(
            f"prediction {pred.labels.shape} and GT {gt.labels.shape} disagree"
        )
    report = ssc.ssc_metrics(pred, gt, num_classes=args.num_classes)
    payload = {"report": report.to_dict()}
    text = report.to_text()
    losses = _eval_losses(args, gt)
    if losses:
        payload["loss"] = losses
        for stride, vals in sorted(losses.items()):
            text += (
                f"loss[stride {stride}]  ce {vals['ce']:.6f}  "
                f"scal_sem {vals['scal_sem']:.6f}  scal_geo {vals['scal_geo']:.6f}  "
                f"fp {vals['fp']:.6f}  total {vals['total']:.6f}\n"
            )
    sys.stdout.write(text)
    _emit_report(args, text, payload)
    return 0


def _eval_losses(args, gt: ssc.OccupancyGrid):
    out = {}
    for spec in args.loss_logits or []:
        stride_text, _, path = spec.partition(":")
        try:
            stride = int(stride_text)
        except ValueError as e:
            raise FormatError(f"--loss-logits expects STRIDE:PATH, got {spec!r}") from e
        if stride < 1:
            raise FormatError(f"--loss-logits stride must be >= 1, got {stride}")
        arr = read_ptns(_require_file(path))
        if arr.ndim != 4:
            raise FormatError(f"{path}: expected rank-4 logits, got rank {arr.ndim}")
        sub = gt.labels[::stride, ::stride, ::stride]
        if arr.shape[:3] != sub.shape:
            raise FormatError(
                f"{path}: logits {arr.shape[:3]} do not match GT at stride "
                f"{stride} {sub.shape}"
            )
        z = ssc.LogitVolume(
            data=arr.astype(np.float64), valid=np.ones(sub.shape, dtype=bool)
        )
        breakdown = ssc.total_loss(z, ssc.OccupancyGrid(labels=sub))
        out[stride] = {
            "ce": breakdown.ce,
            "scal_sem": breakdown.scal_sem,
            "scal_geo": breakdown.scal_geo,
            "fp": breakdown.fp,
            "total": breakdown.total,
        }
    return out


def _eval_manifests(args):
    blocks = {}
    text_parts = []
    for mpath in args.manifest:
        m = load_manifest(_require_file(mpath))
        c = len(m.classes)
        agg_pred = []
        agg_gt = []
        for frame in m.frames:
            gt_path = m.resolve(frame.gt)
            pred_path = os.path.join(args.pred_dir, os.path.basename(gt_path))
            pred = _load_label_grid(pred_path)
            gt = _load_label_grid(gt_path)
            if pred.labels.shape != gt.labels.shape:
                raise FormatError(
                    f"{pred_path}: shape {pred.labels.shape} does not match GT "
                    f"{gt.labels.shape}"
                )
            agg_pred.append(pred.labels.ravel())
            agg_gt.append(gt.labels.ravel())
        pred_all = np.concatenate(agg_pred).reshape(-1, 1, 1)
        gt_all = np.concatenate(agg_gt).reshape(-1, 1, 1)
        report = ssc.ssc_metrics(
            ssc.OccupancyGrid(labels=pred_all),
            ssc.OccupancyGrid(labels=gt_all),
            num_classes=c,
        )
        names = [cl.name for cl in m.classes]
        block = f"== {m.dataset} / {m.split} ==\n" + report.to_text(class_names=names)
        text_parts.append(block)
        blocks[m.split] = report.to_dict()
    text = "\n".join(text_parts)
    sys.stdout.write(text)
    _emit_report(args, text, {"splits": blocks})
    return 0


def _emit_report(args, text, payload):
    if getattr(args, "report_out", None):
        with open(args.report_out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.report_out}")
    if getattr(args, "json_out", None):
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.json_out}")


def cmd_eval(args):
    if args.manifest:
        if not args.pred_dir:
            raise FormatError("--pred-dir is required when evaluating manifests")
        return _eval_manifests(args)
    if not (args.pred and args.gt):
        raise FormatError("provide --pred and --gt, or --manifest with --pred-dir")
    return _eval_direct(args)


_BENCH_CALIB = dict(
    a=[0.0, 320.0, -18.0, -8.0], u0=640.0, v0=640.0,
    A=[[1.0, 0.001], [-0.001, 0.998]],
    theta_min=0.35, theta_max=2.0, w_raw=1280, h_raw=1280,
)


def cmd_bench(args):
    if args.reps < 1:
        raise FormatError(f"--reps must be >= 1, got {args.reps}")
    if args.calib:
        model = camera.load_calibration(_require_file(args.calib))
    else:
        model = camera.model_from_dict(_BENCH_CALIB)
    rng = np.random.default_rng(0)
    raw = unwrap.ImagePlane(
        data=rng.random((model.h_raw, model.w_raw, args.channels))
    )
    stages = []

    def timeit(name, fn):
        times = []
        result = None
        for _ in range(args.reps):
            t0 = time.perf_counter()
            result = fn()
            times.append((time.perf_counter() - t0) * 1e3)
        stages.append((name, times))
        return result

    table = timeit("build_remap", lambda: unwrap.build_remap(args.width, args.height, model))
    plane_img = timeit("apply_remap", lambda: unwrap.apply_remap(raw, table))
    grid = bigrid.default_cartesian("coarse")
    plane = lifting.FeaturePlane(data=plane_img.data, scale=1, view="equi",
                                 valid=plane_img.valid)
    vol = timeit("lift_volume", lambda: lifting.lift_volume(grid, "equi", model, plane))
    small = lifting.FeatureVolume(
        grid=bigrid.CartesianGridSpec(nx=16, ny=16, nz=8, x0=-3.2, y0=-3.2, z0=-1.6,
                                      dx=0.4, dy=0.4, dz=0.4),
        data=rng.standard_normal((16 * 16 * 8, 8)),
        valid=np.ones(16 * 16 * 8, dtype=bool),
    )
    saliency = amoe3d.SaliencyParams.zeros(8)
    moe = amoe3d.MoeParams.zeros(8)
    timeit("amoe3d_forward", lambda: amoe3d.amoe3d_forward(small, saliency, moe))
    del vol
    payload = {}
    for name, times in stages:
        arr = np.asarray(times)
        payload[name] = {
            "reps": args.reps,
            "mean_ms": float(arr.mean()),
            "min_ms": float(arr.min()),
            "max_ms": float(arr.max()),
        }
        print(
            f"{name:<16s} reps {args.reps:3d}  mean {arr.mean():9.3f} ms  "
            f"min {arr.min():9.3f} ms  max {arr.max():9.3f} ms"
        )
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.json_out}")
    return 0


def cmd_fixtures(args):
    scene = synth.make_fixture(args.seed, args.preset)
    plane = synth.render_equi(scene, args.width, args.height)
    visible = synth.visible_surface(scene, args.width, args.height)
    os.makedirs(args.out_dir, exist_ok=True)
    files = {
        "occupancy": "occupancy.ptns",
        "palette": "palette.ptns",
        "plane": "plane.ptns",
        "visible": "visible.ptns",
    }
    write_ptns(os.path.join(args.out_dir, files["occupancy"]),
               scene.occupancy.labels.astype(np.uint8))
    write_ptns(os.path.join(args.out_dir, files["palette"]),
               scene.palette.astype(np.float32))
    write_ptns(os.path.join(args.out_dir, files["plane"]),
               plane.data.astype(np.float32))
    write_ptns(os.path.join(args.out_dir, files["visible"]),
               visible.astype(np.uint8))
    g = scene.grid
    meta = {
        "preset": args.preset,
        "seed": args.seed,
        "width": args.width,
        "height": args.height,
        "classes": int(scene.palette.shape[0]),
        "grid": {k: getattr(g, k) for k in
                 ("nx", "ny", "nz", "x0", "y0", "z0", "dx", "dy", "dz")},
        "rotation": scene.rotation.tolist(),
        "translation": scene.translation.tolist(),
        "files": files,
    }
    meta_path = os.path.join(args.out_dir, "fixture.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for f in list(files.values()) + ["fixture.json"]:
        print(f"wrote {os.path.join(args.out_dir, f)}")
    return 0


# -- parser ----------------------------------------------------------------

def _add_grid_args(p):
    p.add_argument("--manifest", help="manifest JSON supplying both grid specs")
    p.add_argument("--cartesian", metavar="nx,ny,nz,x0,y0,z0,dx,dy,dz",
                   help="inline Cartesian grid spec")
    p.add_argument("--polar", metavar="nr,nphi,nz,r0,r1,z0,dz",
                   help="inline polar grid spec")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panocc",
        description="Panoramic annular imagery to 3-D semantic occupancy toolkit",
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="worker count (or PANOCC_THREADS); outputs are bit-identical "
             "for every value",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("unwrap", help="raw annular image -> equirectangular plane")
    p.add_argument("--calib", required=True, help="camera calibration JSON")
    p.add_argument("--image", required=True, help="raw image (rank-3 tensor file)")
    p.add_argument("--width", type=int, required=True, help="output width")
    p.add_argument("--height", type=int, required=True, help="output height")
    p.add_argument("--out", required=True, help="output plane path")
    p.add_argument("--mask-out", help="optional validity mask path")
    p.set_defaults(func=cmd_unwrap)

    p = sub.add_parser("voxelize", help="emit centroids and cross-grid index tables")
    _add_grid_args(p)
    p.add_argument("--levels", default="1", help="comma list of grid levels")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("lift", help="project feature planes into a voxel volume")
    p.add_argument("--calib", required=True)
    _add_grid_args(p)
    p.add_argument("--grid", choices=("cartesian", "polar"), default="cartesian")
    p.add_argument("--view", choices=("equi", "raw"), default="equi")
    p.add_argument("--plane", action="append", required=True, metavar="SCALE:PATH",
                   help="feature plane at a pyramid scale (repeatable)")
    p.add_argument("--weights", help="per-voxel scale logits (N x S tensor file)")
    p.add_argument("--gdc", metavar="DIR",
                   help="directory with gdc_weights.ptns and gdc_bias.ptns")
    p.add_argument("--out", required=True)
    p.add_argument("--valid-out")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("fuse", help="polar injection + saliency/expert refinement")
    _add_grid_args(p)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--polar-volume", required=True)
    p.add_argument("--polar-valid")
    p.add_argument("--cartesian-volume", required=True)
    p.add_argument("--cartesian-valid")
    p.add_argument("--params", required=True, metavar="DIR",
                   help="parameter directory written by save_fusion_params")
    p.add_argument("--out", required=True)
    p.add_argument("--valid-out")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", help="predicted label grid")
    p.add_argument("--gt", help="ground-truth label grid")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--manifest", action="append",
                   help="evaluate all frames of a manifest (repeatable)")
    p.add_argument("--pred-dir",
                   help="directory of predictions named like each frame's GT file")
    p.add_argument("--loss-logits", action="append", metavar="STRIDE:PATH",
                   help="also report the training loss of a logit volume "
                        "against GT subsampled at STRIDE (repeatable)")
    p.add_argument("--report-out", help="write the text report here")
    p.add_argument("--json-out", help="write the machine-readable report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the heavy kernels")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--width", type=int, default=1216)
    p.add_argument("--height", type=int, default=608)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--calib", help="calibration JSON (default: built-in synthetic)")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fixtures", help="generate a synthetic scene bundle")
    p.add_argument("--preset", required=True, choices=("corridor", "ring", "clutter"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None:
        env = os.environ.get("PANOCC_THREADS", "")
        if env:
            try:
                threads = int(env)
            except ValueError:
                print(f"error: PANOCC_THREADS={env!r} is not an integer", file=sys.stderr)
                return 2
    if threads is not None and threads < 1:
        print(f"error: thread count must be >= 1, got {threads}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PanoccError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
