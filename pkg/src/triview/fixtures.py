"""Synthetic three-view sketches of analytic solids with exact ground truth.

Views are drawn with the orthographic scale each canonical camera has at the
reference distance, black strokes on white, at 1920x1080. Polyhedral edges
are split into visible and hidden parts by casting rays toward the camera;
hidden parts are optionally drawn dashed.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .camera import VIEWS, canonical_poses

STROKE_PX = 3
DASH_ON = 12
DASH_OFF = 8


@dataclass(frozen=True)
class NoiseSpec:
    salt_pepper: float = 0.0  # fraction of pixels flipped to black or white
    jitter_px: float = 0.0  # endpoints moved along their edge by up to this
    dashed_hidden: bool = False
    seed: int = 0


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, q):
        return np.all((q >= self.lo) & (q <= self.hi), axis=-1)


class Solid:
    name = "solid"
    boxes: list = []
    edges: list = []

    def interior(self, q, eps=1e-6):
        """Points strictly inside the union of boxes (all six axis
        neighbours at distance ``eps`` lie in some closed box)."""
        inside = np.ones(q.shape[:-1], dtype=bool)
        for k in range(3):
            for sgn in (-1.0, 1.0):
                shifted = q.copy()
                shifted[..., k] += sgn * eps
                inside &= np.any([b.contains(shifted) for b in self.boxes], axis=0)
        return inside

    def occluded(self, points, toward_camera, reach=3.0, step=0.005):
        """Per point: does the ray toward the camera pass through the solid."""
        ts = np.arange(step, reach, step)
        q = points[:, None, :] + ts[None, :, None] * toward_camera
        return self.interior(q).any(axis=1)

    def sample_surface(self, n, rng):
        raise NotImplementedError


def _box_edges(lo, hi):
    corners = [np.array([x, y, z]) for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    out = []
    for i in range(8):
        for j in range(i + 1, 8):
            if np.sum(corners[i] != corners[j]) == 1:
                out.append((corners[i], corners[j]))
    return out


def _sample_rects(rects, n, rng):
    """Area-uniform samples from axis-aligned rectangles given as (lo, hi)
    with one degenerate axis."""
    areas = np.array([np.prod([h - l for l, h in zip(lo, hi) if h > l]) for lo, hi in rects])
    counts = rng.multinomial(n, areas / areas.sum())
    pts = [rng.uniform(lo, hi, size=(c, 3)) for (lo, hi), c in zip(rects, counts)]
    return np.concatenate(pts, axis=0)


def _box_faces(lo, hi):
    faces = []
    for k in range(3):
        for val in (lo[k], hi[k]):
            a, b = np.array(lo, float), np.array(hi, float)
            a[k] = b[k] = val
            faces.append((a, b))
    return faces


class Cube(Solid):
    name = "cube"

    def __init__(self, half=0.5):
        lo, hi = np.full(3, -half), np.full(3, half)
        self.boxes = [Box(lo, hi)]
        self.edges = _box_edges(lo, hi)

    def sample_surface(self, n, rng):
        b = self.boxes[0]
        return _sample_rects(_box_faces(b.lo, b.hi), n, rng)


class Sphere(Solid):
    name = "sphere"

    def __init__(self, radius=0.6):
        self.radius = radius
        self.boxes = []
        self.edges = []

    def sample_surface(self, n, rng):
        v = rng.normal(size=(n, 3))
        return self.radius * v / np.linalg.norm(v, axis=1, keepdims=True)


class LBlock(Solid):
    """L-shaped profile in the x-y plane extruded along z."""

    name = "lblock"

    def __init__(self):
        zl, zh = -0.4, 0.4
        self.profile = np.array([(-0.6, -0.5), (0.6, -0.5), (0.6, 0.0), (0.0, 0.0), (0.0, 0.5), (-0.6, 0.5)])
        self.z = (zl, zh)
        self.boxes = [
            Box(np.array([-0.6, -0.5, zl]), np.array([0.6, 0.0, zh])),
            Box(np.array([-0.6, 0.0, zl]), np.array([0.0, 0.5, zh])),
        ]
        edges = []
        m = len(self.profile)
        for z in (zl, zh):
            for i in range(m):
                a, b = self.profile[i], self.profile[(i + 1) % m]
                edges.append((np.array([a[0], a[1], z]), np.array([b[0], b[1], z])))
        for a in self.profile:
            edges.append((np.array([a[0], a[1], zl]), np.array([a[0], a[1], zh])))
        self.edges = edges

    def sample_surface(self, n, rng):
        zl, zh = self.z
        rects = []
        m = len(self.profile)
        for i in range(m):
            a, b = self.profile[i], self.profile[(i + 1) % m]
            lo = [min(a[0], b[0]), min(a[1], b[1]), zl]
            hi = [max(a[0], b[0]), max(a[1], b[1]), zh]
            rects.append((np.array(lo), np.array(hi)))
        # the two L caps as the union of two rectangles each
        for z in (zl, zh):
            rects.append((np.array([-0.6, -0.5, z]), np.array([0.6, 0.0, z])))
            rects.append((np.array([-0.6, 0.0, z]), np.array([0.0, 0.5, z])))
        return _sample_rects(rects, n, rng)


SHAPES = {"cube": Cube, "sphere": Sphere, "lblock": LBlock}


def _ortho_uv(pose, pts):
    pc = pose.extrinsic.apply(pts)
    k = pose.intrinsic
    sx, sy = pose.ortho_scale
    return np.stack([sx * pc[:, 0] + k.cx, sy * pc[:, 1] + k.cy], axis=1)


def _visibility_runs(solid, a, b, toward, samples=200):
    """Split edge a-b into (t0, t1, visible) pieces."""
    ts = np.linspace(0.0, 1.0, samples)
    vis = ~solid.occluded(a + ts[:, None] * (b - a), toward)
    pieces = []
    start = 0
    for i in range(1, samples + 1):
        if i == samples or vis[i] != vis[start]:
            t1 = ts[i] if i < samples else 1.0
            pieces.append((ts[start], t1, bool(vis[start])))
            start = i
    return pieces


def _draw_dashed(img, p, q):
    length = float(np.hypot(*(q - p)))
    if length < 1:
        return
    d = (q - p) / length
    s = 0.0
    while s < length:
        e = min(s + DASH_ON, length)
        a, b = p + s * d, p + e * d
        cv2.line(img, tuple(np.rint(a).astype(int)), tuple(np.rint(b).astype(int)), 0, STROKE_PX, cv2.LINE_8)
        s += DASH_ON + DASH_OFF


def _draw_view(solid, pose, noise, rng, size):
    w, h = size
    img = np.full((h, w), 255, np.uint8)
    toward = -pose.optical_axis
    if isinstance(solid, Sphere):
        k = pose.intrinsic
        sx, sy = pose.ortho_scale
        axes = (int(round(solid.radius * sx)), int(round(solid.radius * sy)))
        cv2.ellipse(img, (int(round(k.cx)), int(round(k.cy))), axes, 0, 0, 360, 0, STROKE_PX, cv2.LINE_8)
        return img, {"visible": 1, "hidden": 0}, []
    visible, hidden = [], []
    for a, b in solid.edges:
        uv = _ortho_uv(pose, np.stack([a, b]))
        if np.hypot(*(uv[1] - uv[0])) < 1.0:
            continue  # edge seen end-on
        for t0, t1, vis in _visibility_runs(solid, a, b, toward):
            seg = uv[0] + np.array([[t0], [t1]]) * (uv[1] - uv[0])
            if np.hypot(*(seg[1] - seg[0])) < STROKE_PX:
                continue  # sliver hidden behind a visible edge's end cap
            (visible if vis else hidden).append(seg)
    if noise.jitter_px > 0:
        def jitter(seg):
            d = seg[1] - seg[0]
            d = d / max(np.hypot(*d), 1e-12)
            return np.stack([seg[0] + rng.uniform(-noise.jitter_px, noise.jitter_px) * d,
                             seg[1] + rng.uniform(-noise.jitter_px, noise.jitter_px) * d])
        visible = [jitter(s) for s in visible]
        hidden = [jitter(s) for s in hidden]
    if noise.dashed_hidden:
        for seg in hidden:
            _draw_dashed(img, seg[0], seg[1])
    for seg in visible:
        p, q = np.rint(seg).astype(int)
        cv2.line(img, tuple(p), tuple(q), 0, STROKE_PX, cv2.LINE_8)
    if not noise.dashed_hidden:
        hidden = []
    return img, {"visible": len(visible), "hidden": len(hidden)}, hidden


def _salt_pepper(img, frac, rng):
    out = img.copy()
    flip = rng.uniform(size=img.shape) < frac
    out[flip] = np.where(rng.uniform(size=int(flip.sum())) < 0.5, 0, 255)
    return out


@dataclass
class Fixture:
    shape: str
    views: dict  # view id -> (H, W) uint8
    gt_points: np.ndarray
    stroke_counts: dict
    hidden_segments: dict  # view id -> list of (2, 2) pixel endpoints of dashed strokes


def gen_fixture(shape="cube", noise: NoiseSpec = NoiseSpec(), n_points=8192, size=(1920, 1080), distance=5.0):
    """Three orthographic sketch views of an analytic solid plus a surface
    point cloud of it."""
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; choose from {sorted(SHAPES)}")
    solid = SHAPES[shape]()
    rng = np.random.default_rng(noise.seed)
    poses, _ = canonical_poses(distance, projection="orthographic")
    views, counts, hidden = {}, {}, {}
    for v in VIEWS:
        pose = poses[v].resized(*size)
        img, counts[v], hidden[v] = _draw_view(solid, pose, noise, rng, size)
        if noise.salt_pepper > 0:
            img = _salt_pepper(img, noise.salt_pepper, rng)
        views[v] = img
    gt = solid.sample_surface(n_points, np.random.default_rng(noise.seed + 1))
    return Fixture(shape, views, gt, counts, hidden)


# ranges of the synthetic stroke corpus used to check the classifier
SOLID_LINE_LEN = (100, 400)
DASH_ON_RANGE = (5, 15)
DASH_GAP_RANGE = (5, 15)
MIN_DASHES = 5
CIRCLE_RADIUS = (20, 100)
CORPUS_CANVAS = 512


@dataclass
class CorpusStroke:
    edges: np.ndarray  # (H, W) bool
    primitive: object  # StrokePrimitive with the generating geometry
    label: str  # "solid" or "dashed"


def _stroke_geometry(kind, rng, min_len):
    from .sketch import StrokePrimitive

    c = CORPUS_CANVAS
    if kind == "circle":
        r = rng.uniform(*CIRCLE_RADIUS)
        r = max(r, min_len / (2 * np.pi))
        center = rng.uniform(r + 4, c - r - 4, size=2)
        return StrokePrimitive.circle(center, r)
    length = rng.uniform(max(SOLID_LINE_LEN[0], min_len), SOLID_LINE_LEN[1])
    theta = rng.uniform(0, np.pi)
    d = np.array([np.cos(theta), np.sin(theta)]) * length
    p0 = rng.uniform(4, c - 4 - np.abs(d), size=2) + np.where(d < 0, -d, 0)
    return StrokePrimitive.line(np.rint(p0), np.rint(p0 + d))


def stroke_corpus(n_solid=200, n_dashed=200, seed=0):
    """Edge maps of single solid or dashed lines and circles, half each kind.

    Dashed strokes alternate on-runs and gaps (lengths drawn from
    DASH_ON_RANGE and DASH_GAP_RANGE) along the primitive's raster path with
    at least MIN_DASHES dashes.
    """
    rng = np.random.default_rng(seed)
    out = []
    for label, n in (("solid", n_solid), ("dashed", n_dashed)):
        for k in range(n):
            kind = "circle" if k % 2 else "line"
            on = int(rng.integers(DASH_ON_RANGE[0], DASH_ON_RANGE[1] + 1))
            gap = int(rng.integers(DASH_GAP_RANGE[0], DASH_GAP_RANGE[1] + 1))
            prim = _stroke_geometry(kind, rng, MIN_DASHES * (on + gap) + on)
            path = prim.path()
            flags = np.ones(len(path), bool)
            if label == "dashed":
                flags = (np.arange(len(path)) % (on + gap)) < on
            edges = np.zeros((CORPUS_CANVAS, CORPUS_CANVAS), bool)
            p = path[flags]
            edges[p[:, 1], p[:, 0]] = True
            out.append(CorpusStroke(edges, prim, label))
    return out
