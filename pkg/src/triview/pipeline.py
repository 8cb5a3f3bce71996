"""End-to-end reconstruction and evaluation runs with their configuration,
artifacts and run report."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import io
from .camera import REFERENCE_DISTANCE, VIEWS, canonical_poses, poses_to_json
from .errors import CloudCollapsed, ConfigError, EmptyHull, NoClosedContour, NoContour, StageError, TriviewError
from .gsplat import LossWeights, OptimConfig, export_points, optimize
from .hull import GridSpec, carve, init_gaussians
from .metrics import EvalConfig, evaluate
from .sketch import SketchParams, process_view

log = logging.getLogger(__name__)

ARTIFACTS = ("references", "masks", "poses", "checkpoint", "points", "loss", "report")

HINTS = {
    EmptyHull: "check the masks and the grid extent",
    CloudCollapsed: "check the masks and the grid extent, or lower the prune threshold",
    NoContour: "the view has no closed outline; check the crop and binarization",
    NoClosedContour: "the outline has gaps; raise the median kernel or check the crop",
}


@dataclass
class PipelineConfig:
    views: dict = field(default_factory=dict)  # view id -> image path
    sheet: str | None = None  # one composite image instead of three files
    crops: dict = field(default_factory=dict)  # view id -> [x, y, w, h] within the sheet
    sketch: SketchParams = field(default_factory=SketchParams)
    distance: float = REFERENCE_DISTANCE
    projection: str = "perspective"
    grid: GridSpec = field(default_factory=GridSpec)
    init_count: int = 20_000
    optim: OptimConfig = field(default_factory=OptimConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    export_cutoff: float = 0.0
    output_dir: str = "out"
    seed: int = 0
    workers: int = 3

    def validate(self, check_files=True):
        if self.sheet is None:
            if sorted(self.views) != sorted(VIEWS):
                raise ConfigError(f"need exactly one image per view {list(VIEWS)}, got {sorted(self.views)}")
            paths = list(self.views.values())
        else:
            if self.views:
                raise ConfigError("give either per-view images or a sheet with crops, not both")
            if sorted(self.crops) != sorted(VIEWS):
                raise ConfigError(f"sheet mode needs one crop per view {list(VIEWS)}, got {sorted(self.crops)}")
            for v, rect in self.crops.items():
                if len(rect) != 4 or min(rect[2], rect[3]) <= 0 or min(rect[0], rect[1]) < 0:
                    raise ConfigError(f"crop for {v} must be [x, y, w, h] with positive size, got {rect}")
            paths = [self.sheet]
        if check_files:
            for p in paths:
                if not Path(p).is_file():
                    raise ConfigError(f"input image {p} does not exist")
        if self.projection not in ("perspective", "orthographic"):
            raise ConfigError(f"projection must be perspective or orthographic, got {self.projection!r}")
        if not self.distance > 0:
            raise ConfigError("distance must be positive")
        if int(self.init_count) < 1:
            raise ConfigError("init_count must be at least 1")
        if int(self.optim.iterations) < 1:
            raise ConfigError("optim.iterations must be at least 1")
        return self


def fast_profile(cfg: PipelineConfig) -> PipelineConfig:
    """CI-sized run: 2k iterations, 256x256 renders, 64^3 grid, 8k Gaussians."""
    return dataclasses.replace(
        cfg,
        grid=dataclasses.replace(cfg.grid, resolution=64),
        init_count=8000,
        optim=dataclasses.replace(cfg.optim, iterations=2000, render_size=(256, 256)),
    )


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _merge(template, values, where="config"):
    """Overlay a plain dict onto a dataclass instance, type-guided by it."""
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {values!r}")
    names = {f.name for f in dataclasses.fields(template)}
    changes = {}
    for key, val in values.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        cur = getattr(template, key)
        path = f"{where}.{key}" if where != "config" else key
        if dataclasses.is_dataclass(cur):
            changes[key] = _merge(cur, val, path)
        elif isinstance(cur, tuple) or (cur is None and isinstance(val, list)):
            changes[key] = tuple(val) if val is not None else None
        elif isinstance(cur, dict):
            changes[key] = {str(k): (list(v) if isinstance(v, (list, tuple)) else v) for k, v in val.items()}
        elif isinstance(cur, bool):
            changes[key] = bool(val)
        elif isinstance(cur, int) and not isinstance(val, bool):
            if isinstance(val, float) and not val.is_integer():
                raise ConfigError(f"{path}: expected an integer, got {val}")
            changes[key] = int(val)
        elif isinstance(cur, float):
            changes[key] = float(val)
        else:
            changes[key] = val
    try:
        return dataclasses.replace(template, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_to_dict(cfg: PipelineConfig):
    return _to_plain(cfg)


def config_from_dict(d, base: PipelineConfig | None = None):
    return _merge(base or PipelineConfig(), d)


def dump_config(cfg: PipelineConfig) -> str:
    """Canonical JSON form (sorted keys, every field present)."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def _parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_assignments(lines, where="config"):
    """``a.b.c=value`` lines (values are JSON, else strings) to a nested dict."""
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{where}:{lineno}: {key.strip()!r} conflicts with an earlier scalar")
        node[parts[-1]] = _parse_value(val)
    return out


def deep_update(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_update(out[k], v)
        else:
            out[k] = v
    return out


def read_config_file(path):
    """JSON object or key=value lines, as a nested dict."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return parse_assignments(text.splitlines(), str(path))


@dataclass
class RunReport:
    status: str = "running"
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    pose_assignment: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    error: dict | None = None
    config: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(_to_plain(self), indent=2, sort_keys=True)


class _Stage:
    def __init__(self, report, name):
        self.report = report
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, kind, exc, tb):
        self.report.timings[self.name] = time.perf_counter() - self.t0
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (TriviewError, ValueError, np.linalg.LinAlgError)):
            raise StageError(self.name, exc, HINTS.get(type(exc))) from exc
        return False


def load_views(cfg: PipelineConfig):
    """Gray images keyed by view id, cropped from the sheet in sheet mode."""
    if cfg.sheet is None:
        return {v: io.load_gray(cfg.views[v]) for v in VIEWS}
    sheet = io.load_gray(cfg.sheet)
    out = {}
    for v in VIEWS:
        x, y, w, h = (int(a) for a in cfg.crops[v])
        if x + w > sheet.shape[1] or y + h > sheet.shape[0]:
            raise ConfigError(f"crop for {v} {[x, y, w, h]} exceeds the sheet size {sheet.shape[1]}x{sheet.shape[0]}")
        out[v] = sheet[y:y + h, x:x + w].copy()
    return out


def _resize(img, size, interp=cv2.INTER_AREA):
    w, h = size
    if img.shape[1] == w and img.shape[0] == h:
        return np.asarray(img, dtype=np.float64)
    return cv2.resize(np.asarray(img, dtype=np.float64), (w, h), interpolation=interp)


def run_recon(cfg: PipelineConfig, callback=None) -> RunReport:
    """Sketch cleanup per view, poses, visual hull, Gaussian optimization and
    export. Artifacts land in ``cfg.output_dir``; the report is always
    written, also when a stage fails (the StageError is re-raised)."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(config=config_to_dict(cfg))
    report_path = out / "report.json"
    report.outputs["report"] = str(report_path)
    try:
        with _Stage(report, "load"):
            grays = load_views(cfg)

        def sketch_one(v):
            with _Stage(report, f"sketch:{v}"):
                return process_view(grays[v], cfg.sketch)

        with ThreadPoolExecutor(max_workers=max(1, int(cfg.workers))) as pool:
            futures = {v: pool.submit(sketch_one, v) for v in VIEWS}
            results = {v: futures[v].result() for v in VIEWS}
        for v in VIEWS:
            r = results[v]
            report.counts[f"primitives:{v}"] = len(r.primitives)
            report.counts[f"dashed_removed:{v}"] = r.dashed_count
            ref_path, mask_path = out / f"reference_{v}.png", out / f"mask_{v}.png"
            io.save_color(ref_path, r.reference)
            io.save_mask(mask_path, r.mask)
            report.outputs.setdefault("references", {})[v] = str(ref_path)
            report.outputs.setdefault("masks", {})[v] = str(mask_path)

        with _Stage(report, "poses"):
            poses, assignment = canonical_poses(cfg.distance, projection=cfg.projection)
            poses = {v: poses[v].resized(grays[v].shape[1], grays[v].shape[0]) for v in VIEWS}
        report.pose_assignment = assignment.to_dict()
        pose_path = out / "poses.json"
        pose_path.write_text(poses_to_json(poses, assignment))
        report.outputs["poses"] = str(pose_path)

        # the scene scales with the camera distance, so the grid does too
        scale = cfg.distance / REFERENCE_DISTANCE
        grid_spec = GridSpec(cfg.grid.resolution, cfg.grid.extent * scale)
        with _Stage(report, "carve"):
            grid = carve({v: results[v].mask for v in VIEWS}, poses, grid_spec)
        report.counts["hull_voxels"] = grid.count

        with _Stage(report, "init"):
            fill = cfg.sketch.fill
            cloud = init_gaussians(grid, cfg.init_count, fill, np.random.default_rng(cfg.seed))
        report.counts["gaussians_initial"] = len(cloud)

        with _Stage(report, "optimize"):
            ocfg = dataclasses.replace(cfg.optim, scene_extent=grid_spec.extent, seed=cfg.seed)
            size = ocfg.render_size
            refs, masks, view_poses = [], [], []
            for v in VIEWS:
                r = results[v]
                s = tuple(size) if size is not None else (r.mask.shape[1], r.mask.shape[0])
                refs.append(_resize(r.reference, s))
                masks.append(_resize(r.mask.astype(np.float64), s))
                view_poses.append(poses[v].resized(*s))
            ocfg = dataclasses.replace(ocfg, render_size=None)
            cloud, trace = optimize(cloud, refs, masks, view_poses, ocfg, cfg.weights, callback)
        report.counts["gaussians_final"] = len(cloud)
        report.losses = {
            "initial": trace.initial,
            "final": trace.final,
            "final_parts": dict(zip(("l1", "dssim", "bce", "total"), trace.rows[-1][1:])),
            "lambda_ssim": cfg.weights.lambda_ssim,
            "lambda_mask": cfg.weights.lambda_mask,
        }
        loss_path = out / "loss.csv"
        trace.write_csv(loss_path)
        report.outputs["loss"] = str(loss_path)

        with _Stage(report, "export"):
            ckpt_path, pts_path = out / "checkpoint.ply", out / "points.ply"
            io.write_checkpoint(ckpt_path, cloud)
            points = export_points(cloud, cfg.export_cutoff)
            io.write_points(pts_path, points)
        report.counts["points_exported"] = len(points)
        report.outputs["checkpoint"] = str(ckpt_path)
        report.outputs["points"] = str(pts_path)
        report.status = "ok"
        return report
    except BaseException as exc:
        report.status = "failed"
        stage = exc.stage if isinstance(exc, StageError) else None
        cause = exc.cause if isinstance(exc, StageError) else exc
        report.error = {
            "stage": stage,
            "type": type(cause).__name__,
            "message": str(cause),
            "hint": exc.hint if isinstance(exc, StageError) else None,
        }
        raise
    finally:
        report_path.write_text(report.to_json())


def run_eval(pred_path, gt_path, cfg: EvalConfig = EvalConfig(), report_path=None):
    """Load two PLY clouds, evaluate, optionally write the JSON report."""
    pred = io.read_points(pred_path)
    gt = io.read_points(gt_path)
    report = evaluate(pred, gt, cfg)
    if report_path is not None:
        tmp = f"{report_path}.part"
        Path(tmp).write_text(report.to_json())
        os.replace(tmp, report_path)
    return report
