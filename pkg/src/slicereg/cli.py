"""Command-line interface.

Subcommands: synth, register, evaluate, features, compare-inits.
Exit codes: 0 ok, 2 I/O or input data, 3 configuration, 4 weight container,
5 convergence or degenerate data. SLICEREG_THREADS sets the worker count
for depth scans and restart batches.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .disa import WeightFormatError, feature_volume, forward, load_weights
from .imgcore import Image2D, Volume3D
from .imgio import read_imv, read_pgm, write_imv, write_pgm
from .register import (ConfigError, RegisterConfig, config_from_mapping,
                       read_config_file, register, write_result_report,
                       write_timings)
from .report import load_result
from .similarity import fre, read_fiducials, write_fiducials
from .synth import (GroundTruth, ModalityParams, ground_truth_sections,
                    make_ground_truth, make_pair, make_volume)

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_WEIGHTS = 4
EXIT_DEGENERATE = 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags are configuration errors, not I/O
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _ensure_out_dir(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise CliError(EXIT_IO, f"parent directory does not exist: {parent}")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {path}: {exc}")
    if not os.access(path, os.W_OK):
        raise CliError(EXIT_IO, f"output directory not writable: {path}")


def _load_raster(path):
    if not os.path.exists(path):
        raise CliError(EXIT_IO, f"input not found: {path}")
    try:
        if path.endswith(".pgm"):
            return read_pgm(path)
        return read_imv(path)
    except (ValueError, OSError) as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}")


def _build_config(args) -> RegisterConfig:
    base = RegisterConfig()
    env_threads = os.environ.get("SLICEREG_THREADS")
    if env_threads:
        try:
            base = config_from_mapping({"threads": env_threads}, base)
        except (ConfigError, ValueError):
            raise CliError(EXIT_CONFIG, f"bad SLICEREG_THREADS value {env_threads!r}")
    try:
        if getattr(args, "config", None):
            if not os.path.exists(args.config):
                raise CliError(EXIT_IO, f"config file not found: {args.config}")
            base = read_config_file(args.config, base)
        overrides = {}
        if getattr(args, "init", None):
            overrides["init_mode"] = args.init
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        if getattr(args, "manual_pose", None):
            overrides["manual_pose"] = args.manual_pose
        if getattr(args, "depth_range", None):
            overrides["depth_range"] = args.depth_range
        if overrides:
            base = config_from_mapping(overrides, base)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    return base


def _checkerboard(a: Image2D, b: Image2D, tile: int = 16) -> Image2D:
    ii = np.arange(a.height)[:, None] // tile
    jj = np.arange(a.width)[None, :] // tile
    mask = (ii + jj) % 2 == 0
    return Image2D(np.where(mask, a.data, b.data), a.spacing)


def cmd_synth(args) -> int:
    _ensure_out_dir(args.out_dir)
    dims = tuple(int(v) for v in args.dims.replace(",", " ").split())
    if len(dims) != 3:
        raise CliError(EXIT_CONFIG, f"--dims needs three values, got {args.dims!r}")
    vol = make_volume(args.seed, dims, (args.spacing,) * 3,
                      n_macro=args.macro_blobs, n_micro=args.micro_blobs)
    modality = ModalityParams(gamma=args.gamma, invert=args.invert,
                              noise_sigma=args.noise)
    gt = make_ground_truth(vol, args.seed, max_rot=args.max_rot,
                           oop_amplitude=args.oop_amplitude,
                           inplane_amplitude=args.inplane_amplitude,
                           n_fiducials=args.n_fiducials, modality=modality)
    hist, gt = make_pair(vol, gt)
    out = args.out_dir
    write_imv(os.path.join(out, "volume.imv"), vol)
    write_imv(os.path.join(out, "histology.imv"), hist)
    write_fiducials(os.path.join(out, "fiducials_2d.csv"), gt.fiducial_ids, gt.fiducials_2d)
    write_fiducials(os.path.join(out, "fiducials_3d.csv"), gt.fiducial_ids, gt.fiducials_3d)
    from .report import write_report
    write_report(os.path.join(out, "ground_truth.txt"), ground_truth_sections(gt))
    print(f"case written to {out}: volume {dims}, {len(gt.fiducial_ids)} fiducials, "
          f"pose tz={gt.pose.tz:.1f}µm rx={gt.pose.rx:.2f}° ry={gt.pose.ry:.2f}°")
    return EXIT_OK


def _run_register(vol, hist, cfg, weights_path):
    net = None
    if cfg.init_mode == "disa":
        if not weights_path:
            raise CliError(EXIT_CONFIG, "init_mode 'disa' requires --weights")
        if not os.path.exists(weights_path):
            raise CliError(EXIT_IO, f"weights not found: {weights_path}")
        try:
            net = load_weights(weights_path)
        except WeightFormatError as exc:
            raise CliError(EXIT_WEIGHTS, f"{exc} [{exc.code}]")
    try:
        return register(vol, hist, cfg, net)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    except ValueError as exc:
        raise CliError(EXIT_DEGENERATE, f"registration failed: {exc}")


def cmd_register(args) -> int:
    cfg = _build_config(args)
    vol = _load_raster(args.ct)
    hist = _load_raster(args.histology)
    if not isinstance(vol, Volume3D):
        raise CliError(EXIT_IO, f"{args.ct} is not a single-channel volume")
    if not isinstance(hist, Image2D):
        raise CliError(EXIT_IO, f"{args.histology} is not a 2D image")
    _ensure_out_dir(args.out_dir)
    result = _run_register(vol, hist, cfg, args.weights)
    out = args.out_dir
    write_result_report(os.path.join(out, "result.txt"), result)
    write_timings(os.path.join(out, "timings.txt"), result)
    write_imv(os.path.join(out, "registered_slice.imv"), result.registered)
    write_imv(os.path.join(out, "extracted_slice.imv"), result.extracted)
    overlay = _checkerboard(result.histology_working, result.registered)
    write_imv(os.path.join(out, "overlay.imv"), overlay)
    write_pgm(os.path.join(out, "overlay.pgm"), _clip01(overlay))
    print(f"result written to {out}")
    print(f"  pose: tz={result.pose.tz:.2f}µm rx={result.pose.rx:.3f}° ry={result.pose.ry:.3f}°")
    print(f"  LNCC pre/post warp: {result.scores['lncc_pre_warp']:.4f} / "
          f"{result.scores['lncc_post_warp']:.4f}")
    print(f"  LC2  pre/post warp: {result.scores['lc2_pre_warp']:.4f} / "
          f"{result.scores['lc2_post_warp']:.4f}")
    if result.scores["inner_final"] <= 0.0 and result.init_provenance != "manual":
        print("warning: final similarity is not positive; inputs may be structureless",
              file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def _clip01(img: Image2D) -> Image2D:
    return Image2D(np.clip(img.data, 0.0, 1.0), img.spacing)


def cmd_evaluate(args) -> int:
    if not os.path.exists(args.result):
        raise CliError(EXIT_IO, f"result report not found: {args.result}")
    try:
        result = load_result(args.result)
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(EXIT_IO, f"cannot parse {args.result}: {exc}")
    try:
        ids2, pts2 = read_fiducials(args.fiducials_2d)
        ids3, pts3 = read_fiducials(args.fiducials_3d)
    except (ValueError, OSError) as exc:
        raise CliError(EXIT_IO, str(exc))
    if pts2.shape[1] != 2:
        raise CliError(EXIT_IO, f"{args.fiducials_2d}: expected 2D points")
    if pts3.shape[1] != 3:
        raise CliError(EXIT_IO, f"{args.fiducials_3d}: expected 3D points")
    index3 = {pid: i for i, pid in enumerate(ids3)}
    missing = [pid for pid in ids2 if pid not in index3]
    extra = [pid for pid in ids3 if pid not in set(ids2)]
    if missing or extra:
        raise CliError(EXIT_IO, "unmatched fiducial ids: "
                       + ", ".join(missing + extra))
    order = [index3[pid] for pid in ids2]
    mapped = result.map_to_volume(pts2)
    value = fre(mapped, pts3[order])
    lines = [f"FRE_um = {value!r}", f"pairs = {len(ids2)}"]
    for key in sorted(result.scores):
        lines.append(f"{key} = {result.scores[key]!r}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_features(args) -> int:
    if not os.path.exists(args.weights):
        raise CliError(EXIT_IO, f"weights not found: {args.weights}")
    try:
        net = load_weights(args.weights)
    except WeightFormatError as exc:
        raise CliError(EXIT_WEIGHTS, f"{exc} [{exc.code}]")
    obj = _load_raster(args.input)
    if isinstance(obj, Volume3D):
        fv = feature_volume(net, obj)
        write_imv(args.out, (fv.data, fv.spacing))
        shape = fv.data.shape
    elif isinstance(obj, Image2D):
        if obj.channels != 1:
            raise CliError(EXIT_IO, "feature extraction expects a single-channel image")
        fm = forward(net, obj)
        write_imv(args.out, (fm.data[None, ...], (fm.spacing[0], fm.spacing[1], 1.0)))
        shape = fm.data.shape
    else:
        raise CliError(EXIT_IO, f"{args.input}: expected an image or volume raster")
    print(f"features {shape} written to {args.out}")
    return EXIT_OK


def cmd_compare_inits(args) -> int:
    cfg = _build_config(args)
    vol = _load_raster(args.ct)
    hist = _load_raster(args.histology)
    _ensure_out_dir(args.out_dir)
    modes = ["intensity"]
    if args.weights:
        modes.append("disa")
    if cfg.manual_pose is not None:
        modes.append("manual")

    fid_pairs = None
    if args.fiducials_2d and args.fiducials_3d:
        ids2, pts2 = read_fiducials(args.fiducials_2d)
        ids3, pts3 = read_fiducials(args.fiducials_3d)
        index3 = {pid: i for i, pid in enumerate(ids3)}
        order = [index3[pid] for pid in ids2]
        fid_pairs = (pts2, pts3[order])

    rows = []
    for mode in modes:
        mode_cfg = config_from_mapping({"init_mode": mode}, cfg)
        result = _run_register(vol, hist, mode_cfg, args.weights)
        out = os.path.join(args.out_dir, f"init_{mode}")
        _ensure_out_dir(out)
        write_result_report(os.path.join(out, "result.txt"), result)
        write_timings(os.path.join(out, "timings.txt"), result)
        write_imv(os.path.join(out, "registered_slice.imv"), result.registered)
        row = {
            "init": mode,
            "lncc": result.scores["lncc_post_warp"],
            "lc2": result.scores["lc2_post_warp"],
            "fre_um": float("nan"),
            "timings": {("init" if s.name.startswith("init_") else s.name): s.seconds
                        for s in result.stages},
        }
        if fid_pairs is not None:
            mapped = load_result(os.path.join(out, "result.txt")).map_to_volume(fid_pairs[0])
            row["fre_um"] = fre(mapped, fid_pairs[1])
        rows.append(row)

    stage_names = [s for s in rows[0]["timings"]]
    header = f"{'init':<12}{'LNCC':>8}{'LC2':>8}{'FRE µm':>10}  " + \
        "  ".join(f"{name}[s]" for name in stage_names)
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = f"{row['init']:<12}{row['lncc']:>8.4f}{row['lc2']:>8.4f}{row['fre_um']:>10.2f}  "
        cells += "  ".join(f"{row['timings'][name]:>{len(name) + 3}.1f}" for name in stage_names)
        lines.append(cells)
    table = "\n".join(lines)
    print(table)
    with open(os.path.join(args.out_dir, "comparison.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="slicereg",
                     description="2D histology to 3D micro-CT slice-to-volume registration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic benchmark case")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dims", default="128,128,128")
    p.add_argument("--spacing", type=float, default=10.0)
    p.add_argument("--max-rot", type=float, default=5.0)
    p.add_argument("--oop-amplitude", type=float, default=30.0)
    p.add_argument("--inplane-amplitude", type=float, default=20.0)
    p.add_argument("--n-fiducials", type=int, default=20)
    p.add_argument("--macro-blobs", type=int, default=24)
    p.add_argument("--micro-blobs", type=int, default=4000)
    p.add_argument("--gamma", type=float, default=0.7)
    p.add_argument("--invert", action="store_true")
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", help="run the full registration pipeline")
    p.add_argument("--ct", required=True)
    p.add_argument("--histology", required=True)
    p.add_argument("--weights")
    p.add_argument("--config")
    p.add_argument("--init", choices=["disa", "intensity", "manual"])
    p.add_argument("--manual-pose", dest="manual_pose", metavar="TZ,RX,RY")
    p.add_argument("--seed", type=int)
    p.add_argument("--depth-range", dest="depth_range", metavar="LO,HI")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="map fiducials through a result and report FRE")
    p.add_argument("--result", required=True)
    p.add_argument("--fiducials-2d", dest="fiducials_2d", required=True)
    p.add_argument("--fiducials-3d", dest="fiducials_3d", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("features", help="extract feature maps with a weight file")
    p.add_argument("--input", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("compare-inits", help="run all applicable initializations")
    p.add_argument("--ct", required=True)
    p.add_argument("--histology", required=True)
    p.add_argument("--weights")
    p.add_argument("--config")
    p.add_argument("--manual-pose", dest="manual_pose", metavar="TZ,RX,RY")
    p.add_argument("--seed", type=int)
    p.add_argument("--depth-range", dest="depth_range", metavar="LO,HI")
    p.add_argument("--fiducials-2d", dest="fiducials_2d")
    p.add_argument("--fiducials-3d", dest="fiducials_3d")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compare_inits)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"slicereg {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
