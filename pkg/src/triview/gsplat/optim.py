from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import CloudCollapsed
from .cloud import PARAMS, GaussianCloud
from .losses import LossWeights, loss_total_grad
from .render import render_backward, render_with_state

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    iterations: int = 10_000
    lr_position: float = 1.6e-4  # multiplied by scene_extent
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-15
    prune_opacity_threshold: float = 0.005
    prune_interval: int = 500
    scene_extent: float = 1.5
    seed: int = 0
    render_size: tuple = None  # (width, height); None renders at reference size
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if int(self.iterations) < 0:
            raise ValueError("iterations must be non-negative")

    def learning_rates(self):
        return {
            "positions": self.lr_position * self.scene_extent,
            "log_scales": self.lr_scale,
            "quats": self.lr_rotation,
            "opacity_logits": self.lr_opacity,
            "colors": self.lr_color,
        }


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)  # (iteration, l1, dssim, bce, total)

    def add(self, it, parts):
        self.rows.append((int(it), parts["l1"], parts["dssim"], parts["bce"], parts["total"]))

    @property
    def initial(self):
        return self.rows[0][4]

    @property
    def final(self):
        return self.rows[-1][4]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "l1", "dssim", "bce", "total"])
            for row in self.rows:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def backward(cloud: GaussianCloud, poses, refs, masks, weights: LossWeights = LossWeights(), image_size=None,
             background=(1.0, 1.0, 1.0), supports=None):
    """Mean of the per-view total loss and its exact gradient.

    ``poses``, ``refs`` and ``masks`` are parallel sequences. Returns
    ``(loss, parts, grads)`` where ``parts`` averages l1/dssim/bce/total over
    views and ``grads`` maps parameter name -> array shaped like the cloud.
    """
    grads = {k: np.zeros_like(getattr(cloud, k)) for k in PARAMS}
    parts_sum = {"l1": 0.0, "dssim": 0.0, "bce": 0.0, "total": 0.0}
    nview = len(poses)
    if nview == 0:
        raise ValueError("need at least one view")
    for v in range(nview):
        ref = refs[v]
        size = (ref.shape[1], ref.shape[0]) if image_size is None else image_size
        sup = None if supports is None else supports[v]
        view, state = render_with_state(cloud, poses[v], size, background, support=sup)
        _, parts, g_rgb, g_alpha = loss_total_grad(view.rgb, ref, view.alpha, masks[v], weights)
        for key in parts_sum:
            parts_sum[key] += parts[key] / nview
        if len(cloud) == 0:
            continue
        g = render_backward(state, g_rgb / nview, g_alpha / nview)
        for k in PARAMS:
            grads[k] += g[k]
    return parts_sum["total"], parts_sum, grads


class Adam:
    def __init__(self, cloud, lrs, betas, eps):
        self.lrs = lrs
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(getattr(cloud, k)) for k in PARAMS}
        self.v = {k: np.zeros_like(getattr(cloud, k)) for k in PARAMS}

    def step(self, cloud, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in PARAMS:
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            param = getattr(cloud, k)
            param -= self.lrs[k] * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def keep(self, mask):
        for k in PARAMS:
            self.m[k] = self.m[k][mask]
            self.v[k] = self.v[k][mask]


def optimize(cloud: GaussianCloud, refs, masks, poses, cfg: OptimConfig = OptimConfig(),
             weights: LossWeights = LossWeights(), callback=None):
    """Adam on every Gaussian parameter for ``cfg.iterations`` steps.

    Every ``prune_interval`` steps Gaussians with opacity below
    ``prune_opacity_threshold`` are dropped. Returns ``(cloud, trace)``; the
    input cloud is not modified.
    """
    cloud = cloud.copy()
    trace = LossTrace()
    iters = int(cfg.iterations)
    size = cfg.render_size
    refs = [np.asarray(r, dtype=np.float64) for r in refs]
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    if iters == 0:
        _, parts, _ = backward(cloud, poses, refs, masks, weights, size, cfg.background)
        trace.add(0, parts)
        return cloud, trace
    cloud.normalize_quats()
    adam = Adam(cloud, cfg.learning_rates(), cfg.betas, cfg.eps)
    for it in range(iters):
        _, parts, grads = backward(cloud, poses, refs, masks, weights, size, cfg.background)
        trace.add(it, parts)
        adam.step(cloud, grads)
        cloud.normalize_quats()
        np.clip(cloud.colors, 0.0, 1.0, out=cloud.colors)
        if cfg.prune_interval and (it + 1) % cfg.prune_interval == 0:
            keep = cloud.opacities >= cfg.prune_opacity_threshold
            if not keep.any():
                raise CloudCollapsed(f"all Gaussians pruned at iteration {it + 1}")
            if not keep.all():
                cloud = cloud.subset(keep)
                adam.keep(keep)
                log.info("iteration %d: pruned to %d Gaussians", it + 1, len(cloud))
        if callback is not None:
            callback(it, parts, cloud)
    _, parts, _ = backward(cloud, poses, refs, masks, weights, size, cfg.background)
    trace.add(iters, parts)
    return cloud, trace
