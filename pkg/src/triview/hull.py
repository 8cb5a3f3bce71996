"""Voxel visual hull from three silhouettes, and Gaussian initialisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import project_many
from .errors import EmptyHull
from .gsplat.cloud import GaussianCloud, logit

INIT_OPACITY = 0.1


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 128
    extent: float = 1.5  # half-width of the cube, centred at the origin

    def __post_init__(self):
        if int(self.resolution) < 8:
            raise ValueError("resolution must be at least 8")
        if not self.extent > 0:
            raise ValueError("extent must be positive")

    @property
    def pitch(self):
        return 2.0 * self.extent / self.resolution

    def axis(self):
        return -self.extent + (np.arange(self.resolution) + 0.5) * self.pitch

    def centers(self):
        """(R^3, 3) voxel centres in (x, y, z) index order."""
        a = self.axis()
        gx, gy, gz = np.meshgrid(a, a, a, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


@dataclass
class VoxelGrid:
    spec: GridSpec
    occupancy: np.ndarray  # (R, R, R) bool, index order (x, y, z)

    @property
    def count(self):
        return int(self.occupancy.sum())

    def occupied_centers(self):
        idx = np.argwhere(self.occupancy)
        return self.spec.axis()[idx]


def silhouette_test(points, mask, pose):
    """True where the point projects in front of the camera onto a
    foreground pixel of ``mask`` (nearest pixel)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if (w, h) != (pose.intrinsic.width, pose.intrinsic.height):
        pose = pose.resized(w, h)
    u, v, depth = project_many(points, pose)
    with np.errstate(invalid="ignore"):
        px = np.floor(u + 0.5)
        py = np.floor(v + 0.5)
        ok = (depth > 0) & (px >= 0) & (px < w) & (py >= 0) & (py < h)
    hit = np.zeros(len(u), dtype=bool)
    hit[ok] = mask[py[ok].astype(np.int64), px[ok].astype(np.int64)]
    return hit


def carve(masks, poses, spec: GridSpec = GridSpec(), chunk=1 << 18):
    """Keep voxels whose centre lands on foreground in every view.

    ``masks`` and ``poses`` are parallel sequences (or dicts keyed by view).
    """
    if isinstance(masks, dict):
        keys = list(masks)
        masks = [masks[k] for k in keys]
        poses = [poses[k] for k in keys]
    centers = spec.centers()
    occ = np.ones(len(centers), dtype=bool)
    for start in range(0, len(centers), chunk):
        sl = slice(start, start + chunk)
        for mask, pose in zip(masks, poses):
            live = np.flatnonzero(occ[sl]) + start
            if len(live) == 0:
                break
            occ[live] = silhouette_test(centers[live], mask, pose)
    r = spec.resolution
    grid = VoxelGrid(spec, occ.reshape(r, r, r))
    if grid.count == 0:
        raise EmptyHull("visual hull is empty; check masks, poses and grid extent")
    return grid


def init_gaussians(grid: VoxelGrid, target_count=20_000, color=(0.6, 0.6, 0.6), rng=None):
    """Subsample occupied voxel centres uniformly into isotropic Gaussians."""
    if target_count < 1:
        raise ValueError("target_count must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    centers = grid.occupied_centers()
    if len(centers) == 0:
        raise EmptyHull("cannot initialise from an empty grid")
    n = min(int(target_count), len(centers))
    if n < len(centers):
        pick = np.sort(rng.choice(len(centers), size=n, replace=False))
        centers = centers[pick]
    pitch = grid.spec.pitch
    positions = centers + rng.uniform(-0.25 * pitch, 0.25 * pitch, size=centers.shape)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianCloud(
        positions,
        np.full((n, 3), np.log(pitch)),
        quats,
        np.full(n, float(logit(INIT_OPACITY))),
        np.tile(np.asarray(color, dtype=np.float64), (n, 1)),
    )
