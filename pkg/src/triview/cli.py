"""Command line entry point: ``triview recon | eval | fixture | poses``.

Exit codes: 0 success, 2 configuration error, 3 pipeline stage error,
4 I/O error. Set TRIVIEW_LOG to a logging level name for more output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import io
from .camera import VIEWS, canonical_poses, poses_to_json
from .errors import ConfigError, EmptyCloud, PlyError, StageError, TriviewError
from .fixtures import SHAPES, NoiseSpec, gen_fixture
from .metrics import EmdConfig, EvalConfig
from .pipeline import (
    config_from_dict,
    config_to_dict,
    deep_update,
    dump_config,
    fast_profile,
    parse_assignments,
    read_config_file,
    run_eval,
    run_recon,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("triview")


def _size(text):
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    return [w, h]


def _crop(text):
    try:
        view, rect = text.split("=", 1)
        vals = [int(x) for x in rect.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected VIEW=x,y,w,h, got {text!r}") from None
    if view not in VIEWS or len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected VIEW=x,y,w,h with VIEW in {VIEWS}, got {text!r}")
    return view, vals


def _flag_overrides(args):
    """Only the flags the user actually gave, as a nested config dict."""
    d = {}
    views = {v: getattr(args, v) for v in VIEWS if getattr(args, v) is not None}
    if views:
        d["views"] = views
    if args.sheet is not None:
        d["sheet"] = args.sheet
    if args.crop:
        d["crops"] = dict(args.crop)
    simple = {
        "out": ("output_dir",),
        "seed": ("seed",),
        "distance": ("distance",),
        "projection": ("projection",),
        "gaussians": ("init_count",),
        "export_cutoff": ("export_cutoff",),
        "workers": ("workers",),
        "iterations": ("optim", "iterations"),
        "render_size": ("optim", "render_size"),
        "grid_resolution": ("grid", "resolution"),
        "grid_extent": ("grid", "extent"),
        "lambda_ssim": ("weights", "lambda_ssim"),
        "lambda_mask": ("weights", "lambda_mask"),
        "median_kernel": ("sketch", "median_kernel"),
    }
    for attr, path in simple.items():
        val = getattr(args, attr)
        if val is None:
            continue
        node = d
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = val
    if args.set:
        d = deep_update(d, parse_assignments(args.set, "--set"))
    return d


def build_config(args):
    """defaults <- config file <- --fast <- explicit flags."""
    cfg = config_from_dict({})
    if args.config:
        cfg = config_from_dict(read_config_file(args.config), cfg)
    if args.fast:
        cfg = fast_profile(cfg)
    return config_from_dict(_flag_overrides(args), cfg)


def cmd_recon(args):
    cfg = build_config(args)
    if args.dump_config:
        print(dump_config(cfg))
        return EXIT_OK
    cfg.validate()

    def progress(it, parts, cloud):
        if (it + 1) % 100 == 0:
            log.info("iteration %d  loss %.5f  gaussians %d", it + 1, parts["total"], len(cloud))

    report = run_recon(cfg, progress)
    print(f"ok: {report.counts['points_exported']} points -> {report.outputs['points']} "
          f"(loss {report.losses['initial']:.4f} -> {report.losses['final']:.4f})")
    return EXIT_OK


def cmd_eval(args):
    cfg = EvalConfig(emd=EmdConfig(sample_count=args.samples, exact_limit=args.exact_limit), register=not args.no_register)
    report = run_eval(args.pred, args.gt, cfg, args.out)
    print(report.summary())
    return EXIT_OK


def cmd_fixture(args):
    noise = NoiseSpec(args.salt_pepper, args.jitter, args.dashed, args.seed)
    fx = gen_fixture(args.shape, noise, n_points=args.points, distance=args.distance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for v in VIEWS:
        io.save_gray(out / f"{v}.png", fx.views[v])
    io.write_points(out / "gt.ply", fx.gt_points)
    (out / "strokes.json").write_text(json.dumps(fx.stroke_counts, indent=2, sort_keys=True))
    print(f"wrote {', '.join(f'{v}.png' for v in VIEWS)} and gt.ply to {out}")
    return EXIT_OK


def cmd_poses(args):
    poses, assignment = canonical_poses(args.distance, projection=args.projection)
    text = poses_to_json(poses, assignment)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="triview", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recon", help="reconstruct a Gaussian cloud and point cloud from three views")
    for v in VIEWS:
        r.add_argument(f"--{v}", metavar="IMAGE", help=f"{v} view image")
    r.add_argument("--sheet", metavar="IMAGE", help="one image holding all three views (use with --crop)")
    r.add_argument("--crop", action="append", type=_crop, metavar="VIEW=x,y,w,h", help="crop rectangle per view")
    r.add_argument("--config", metavar="FILE", help="JSON or key=value config; flags override it")
    r.add_argument("--fast", action="store_true", help="2k iterations, 256x256 renders, 64^3 grid, 8k Gaussians")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--distance", type=float, help="camera distance")
    r.add_argument("--projection", choices=("perspective", "orthographic"))
    r.add_argument("--gaussians", type=int, help="initial Gaussian count")
    r.add_argument("--iterations", type=int)
    r.add_argument("--render-size", type=_size, metavar="WxH")
    r.add_argument("--grid-resolution", type=int)
    r.add_argument("--grid-extent", type=float)
    r.add_argument("--lambda-ssim", type=float)
    r.add_argument("--lambda-mask", type=float)
    r.add_argument("--median-kernel", type=int)
    r.add_argument("--export-cutoff", type=float, help="minimum opacity of exported points")
    r.add_argument("--workers", type=int, help="threads for the per-view sketch stage")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config field, e.g. optim.lr_color=0.01")
    r.add_argument("--dump-config", action="store_true", help="print the merged config and exit")
    r.set_defaults(func=cmd_recon)

    e = sub.add_parser("eval", help="compare a predicted cloud against ground truth")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--out", help="JSON report path")
    e.add_argument("--samples", type=int, default=1024, help="EMD resample size")
    e.add_argument("--exact-limit", type=int, default=256, help="largest size solved exactly")
    e.add_argument("--no-register", action="store_true")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fixture", help="write synthetic three-view sketches and ground truth")
    f.add_argument("shape", choices=sorted(SHAPES))
    f.add_argument("--out", required=True)
    f.add_argument("--salt-pepper", type=float, default=0.0)
    f.add_argument("--jitter", type=float, default=0.0, help="endpoint jitter in pixels")
    f.add_argument("--dashed", action="store_true", help="draw hidden edges dashed")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--points", type=int, default=8192)
    f.add_argument("--distance", type=float, default=5.0)
    f.set_defaults(func=cmd_fixture)

    q = sub.add_parser("poses", help="print the validated camera poses as JSON")
    q.add_argument("--distance", type=float, default=5.0)
    q.add_argument("--projection", choices=("perspective", "orthographic"), default="perspective")
    q.add_argument("--out")
    q.set_defaults(func=cmd_poses)
    return p


def main(argv=None):
    level = os.environ.get("TRIVIEW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, PlyError, EmptyCloud) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TriviewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
