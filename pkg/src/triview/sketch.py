"""Raster sketch cleanup: denoise, binarize, detect strokes, drop dashed
(hidden) lines, extract the foreground mask and colorize the reference.

Images are numpy arrays: gray ``(H, W)`` uint8 or float in [0, 255], binary
``(H, W)`` bool with True meaning an on-pixel, color ``(H, W, 3)`` float in
[0, 1]. Pixel coordinates are ``(x, y)`` = (column, row).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from statistics import median

import cv2
import numpy as np
from scipy import ndimage

from .errors import DimMismatch, InvalidKernel, InvalidThresholds, NoClosedContour, NoContour, OutOfBounds

SOLID = "solid"
DASHED = "dashed"

DEFAULT_FILL = (0.6, 0.6, 0.6)
DEFAULT_STROKE = (0.1, 0.1, 0.1)
DEFAULT_BACKGROUND = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class HoughLineParams:
    rho: float = 1.0
    theta: float = np.pi / 180.0
    threshold: int = 50
    min_line_length: int = 20
    max_line_gap: int = 25


@dataclass(frozen=True)
class HoughCircleParams:
    dp: float = 1.0
    min_dist: float = 20.0
    canny_high: float = 100.0
    accumulator: float = 30.0
    min_radius: int = 8
    max_radius: int = 0
    merge_center: float = 3.0
    merge_radius: float = 3.0
    # A candidate is kept if edges cover solid_support of its path, or if
    # isolated dash-sized fragments (extent <= max_fragment px) cover
    # min_support of it. Crossings with long outlines and tangent arcs of
    # ellipses support neither.
    solid_support: float = 0.85
    min_support: float = 0.25
    max_fragment: int = 40
    refine: int = 2  # px of center/radius snapping before the support test


@dataclass(frozen=True)
class ClassifyParams:
    min_dash_count: int = 3
    max_dash_len: float = 20.0
    min_gap: float = 3.0
    solid_coverage: float = 0.85
    # a path pixel counts as "on" if an edge pixel lies within this many
    # pixels across the path (never along it, so gaps keep their length);
    # absorbs the 1 px jitter of detected geometry
    tolerance: int = 1
    # dashes are regular: no on-run may exceed this multiple of the median.
    # Hough segments chording a curved outline otherwise pass the median tests
    max_run_ratio: float = 2.5
    # detected geometry is snapped by up to this many pixels before walking
    refine: int = 2
    erase_radius: float = 2.0


@dataclass
class StrokePrimitive:
    kind: str  # "line" or "circle"
    p0: tuple = None
    p1: tuple = None
    center: tuple = None
    radius: float = None
    classification: str = None
    run_stats: list = field(default_factory=list)

    @classmethod
    def line(cls, p0, p1):
        p0 = (float(p0[0]), float(p0[1]))
        p1 = (float(p1[0]), float(p1[1]))
        if p0 == p1:
            raise ValueError("line endpoints must differ")
        return cls("line", p0=p0, p1=p1)

    @classmethod
    def circle(cls, center, radius):
        if not radius > 0:
            raise ValueError("circle radius must be positive")
        return cls("circle", center=(float(center[0]), float(center[1])), radius=float(radius))

    def path(self):
        """Ordered integer pixel path (N, 2) of (x, y)."""
        if self.kind == "line":
            return bresenham(self.p0, self.p1)
        return midpoint_circle(self.center, self.radius)


# --------------------------------------------------------------------- filters


def _check_odd(k, minimum=3):
    if not isinstance(k, (int, np.integer)) or k < minimum or k % 2 == 0:
        raise InvalidKernel(f"kernel must be an odd integer >= {minimum}, got {k!r}")


def median_filter(img, kernel=3):
    """Median over a ``kernel`` x ``kernel`` window, replicated borders."""
    _check_odd(kernel)
    img = np.asarray(img)
    if kernel > min(img.shape[:2]):
        raise InvalidKernel(f"kernel {kernel} exceeds image size {img.shape[:2]}")
    return ndimage.median_filter(img, size=kernel, mode="nearest")


def adaptive_binarize(img, window=15, offset=10.0):
    """On (dark stroke) where luminance < local window mean - offset."""
    _check_odd(window)
    img = np.asarray(img, dtype=np.float64)
    local_mean = ndimage.uniform_filter(img, size=window, mode="nearest")
    return img < local_mean - offset


def _to_u8(img):
    img = np.asarray(img)
    if img.dtype == bool:
        # strokes dark on light paper
        return np.where(img, 0, 255).astype(np.uint8)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def canny_edges(img, low=50.0, high=150.0):
    """Gaussian smoothing (3x3), Sobel gradients, non-maximum suppression and
    hysteresis. Boolean inputs are read as dark strokes on white."""
    if not (0 < low < high):
        raise InvalidThresholds(f"need 0 < low < high, got low={low}, high={high}")
    smooth = cv2.GaussianBlur(_to_u8(img), (3, 3), 0)
    return cv2.Canny(smooth, float(low), float(high), apertureSize=3, L2gradient=True) > 0


# ------------------------------------------------------------------- detection


def hough_lines(edges, params: HoughLineParams = HoughLineParams()):
    edges = np.asarray(edges, dtype=bool)
    if not edges.any():
        return []
    found = cv2.HoughLinesP(
        edges.astype(np.uint8) * 255,
        params.rho,
        params.theta,
        params.threshold,
        minLineLength=params.min_line_length,
        maxLineGap=params.max_line_gap,
    )
    if found is None:
        return []
    prims = []
    for x0, y0, x1, y1 in np.asarray(found).reshape(-1, 4):
        if (x0, y0) != (x1, y1):
            prims.append(StrokePrimitive.line((x0, y0), (x1, y1)))
    return prims


def hough_circles(edges, params: HoughCircleParams = HoughCircleParams()):
    edges = np.asarray(edges, dtype=bool)
    if not edges.any():
        return []
    # HOUGH_GRADIENT needs gradient directions; a light blur gives the 1 px
    # edge ridges a usable orientation.
    blurred = cv2.GaussianBlur(edges.astype(np.uint8) * 255, (5, 5), 1.0)
    found = cv2.HoughCircles(
        blurred,
        cv2.HOUGH_GRADIENT,
        params.dp,
        params.min_dist,
        param1=params.canny_high,
        param2=params.accumulator,
        minRadius=params.min_radius,
        maxRadius=params.max_radius,
    )
    if found is None:
        return []
    kept = []
    for cx, cy, r in np.asarray(found).reshape(-1, 3)[:, :3]:
        if r <= 0:
            continue
        dup = any(
            np.hypot(cx - k[0], cy - k[1]) <= params.merge_center and abs(r - k[2]) <= params.merge_radius for k in kept
        )
        if not dup:
            kept.append((float(cx), float(cy), float(r)))
    frag = _fragments(edges, params.max_fragment)
    near, near_frag = _near(edges, 1), _near(frag, 1)
    # a wider tolerance roughly bounds what any snapped placement can reach,
    # so most candidates are rejected without the snapping search
    reach = 1 + params.refine
    wide, wide_frag = _near(edges, reach), _near(frag, reach)

    def supported(prim, all_map, frag_map):
        path = prim.path()
        return (
            _on_along(path, all_map, edges.shape)[0].mean() >= params.solid_support
            or _on_along(path, frag_map, edges.shape)[0].mean() >= params.min_support
        )

    out = []
    for cx, cy, r in kept:
        prim = StrokePrimitive.circle((cx, cy), r)
        if not supported(prim, wide, wide_frag):
            continue
        prim = _refined(prim, near, edges.shape, params.refine)
        if supported(prim, near, near_frag):
            out.append(prim)
    return out


def _fragments(edges, max_extent):
    """Edge pixels whose 8-connected component fits in a max_extent box."""
    n, labels, stats, _ = cv2.connectedComponentsWithStats(edges.astype(np.uint8), connectivity=8)
    small = (stats[:, cv2.CC_STAT_WIDTH] <= max_extent) & (stats[:, cv2.CC_STAT_HEIGHT] <= max_extent)
    small[0] = False
    return small[labels]


# ---------------------------------------------------------------------- paths


def bresenham(p0, p1):
    x0, y0 = int(round(p0[0])), int(round(p0[1]))
    x1, y1 = int(round(p1[0])), int(round(p1[1]))
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    pts = []
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return np.array(pts, dtype=np.int64)


def midpoint_circle(center, radius):
    """Midpoint-circle pixels ordered by angle around the centre."""
    cx, cy = int(round(center[0])), int(round(center[1]))
    r = int(round(radius))
    if r <= 0:
        return np.array([[cx, cy]], dtype=np.int64)
    octant = []
    x, y, d = r, 0, 1 - r
    while x >= y:
        octant.append((x, y))
        y += 1
        if d < 0:
            d += 2 * y + 1
        else:
            x -= 1
            d += 2 * (y - x) + 1
    pts = set()
    for x, y in octant:
        for sx, sy in ((x, y), (y, x)):
            pts.update({(sx, sy), (-sx, sy), (sx, -sy), (-sx, -sy)})
    pts = np.array(sorted(pts), dtype=np.int64)
    angle = np.arctan2(pts[:, 1], pts[:, 0])
    order = np.lexsort((pts[:, 1], pts[:, 0], angle))
    return pts[order] + np.array([cx, cy])


def _runs(flags, cyclic):
    """Alternating (on-run, following gap) lengths along a boolean path."""
    flags = np.asarray(flags, dtype=bool)
    n = len(flags)
    if n == 0 or not flags.any():
        return []
    if flags.all():
        return [(n, 0)]
    if cyclic:
        # rotate so the path starts at the beginning of an on-run
        starts = np.flatnonzero(flags & ~np.roll(flags, 1))
        flags = np.roll(flags, -int(starts[0]))
    else:
        first = int(np.argmax(flags))
        flags = flags[first:]
        last = len(flags) - int(np.argmax(flags[::-1]))
        flags = flags[:last]
    change = np.flatnonzero(np.diff(flags.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [len(flags)]])
    lengths = np.diff(bounds)
    ons = lengths[0::2]
    gaps = list(lengths[1::2])
    if len(gaps) < len(ons):
        gaps.append(0)
    return [(int(a), int(b)) for a, b in zip(ons, gaps)]


def _on_along(path, near, shape):
    """On-flags of path pixels under a two-layer tolerance map from _near.

    Each pixel reads the layer dilated across its local tangent, so the
    tolerance absorbs misplacement without shortening gaps along the path.
    """
    h, w = shape
    inside = (path[:, 0] >= 0) & (path[:, 0] < w) & (path[:, 1] >= 0) & (path[:, 1] < h)
    flags = np.zeros(len(path), dtype=bool)
    p = path[inside]
    if len(path) > 1:
        t = np.abs(np.gradient(path.astype(np.float64), axis=0))
        layer = (t[:, 1] > t[:, 0]).astype(np.intp)[inside]
    else:
        layer = np.zeros(len(p), np.intp)
    flags[inside] = near[layer, p[:, 1], p[:, 0]]
    return flags, inside


def _refined(prim, near, shape, reach):
    """Shift the primitive by up to ``reach`` px (perpendicular for lines,
    radial for circles) to the placement with the most on-pixels."""
    if reach <= 0:
        return prim
    best, best_hits = prim, -1
    if prim.kind == "line":
        d = np.subtract(prim.p1, prim.p0)
        normal = np.array([-d[1], d[0]]) / np.hypot(*d)
        candidates = [
            replace(prim, p0=tuple(np.add(prim.p0, k * normal)), p1=tuple(np.add(prim.p1, k * normal)))
            for k in range(-reach, reach + 1)
        ]
    else:
        candidates = [
            replace(prim, center=(prim.center[0] + dx, prim.center[1] + dy), radius=prim.radius + dr)
            for dr in range(-reach, reach + 1)
            for dx in range(-reach, reach + 1)
            for dy in range(-reach, reach + 1)
            if prim.radius + dr > 0
        ]
    # stable preference for the unshifted candidate on ties
    candidates.sort(key=lambda c: 0 if c == prim else 1)
    for cand in candidates:
        flags, _ = _on_along(cand.path(), near, shape)
        hits = int(flags.sum())
        if hits > best_hits:
            best, best_hits = cand, hits
    return best


def _near(edges, tolerance):
    """Layer 0 dilated vertically (for x-major paths), layer 1 horizontally."""
    edges = np.asarray(edges, dtype=bool)
    if tolerance <= 0:
        return np.stack([edges, edges])
    k = 2 * tolerance + 1
    return np.stack([
        ndimage.binary_dilation(edges, structure=np.ones((k, 1), bool)),
        ndimage.binary_dilation(edges, structure=np.ones((1, k), bool)),
    ])


def classify_stroke(prim: StrokePrimitive, edges, thresholds: ClassifyParams = ClassifyParams(), near=None):
    """Walk the primitive's raster path over the edge map and label it.

    Dashed iff at least ``min_dash_count`` on-runs, median on-run at most
    ``max_dash_len``, median gap at least ``min_gap`` and no on-run longer
    than ``max_run_ratio`` times the median. Everything else, including ambiguous strokes, is
    Solid: a missed dash only leaves interior clutter, while erasing a piece
    of outline opens the silhouette.
    """
    edges = np.asarray(edges, dtype=bool)
    if near is None:
        near = _near(edges, thresholds.tolerance)
    _, inside = _on_along(prim.path(), near, edges.shape)
    if not inside.any():
        raise OutOfBounds("primitive lies entirely outside the image")
    prim = _refined(prim, near, edges.shape, thresholds.refine)
    flags, inside = _on_along(prim.path(), near, edges.shape)
    stats = _runs(flags[inside] if prim.kind == "line" else flags, cyclic=prim.kind == "circle")
    if not stats:
        stats = [(0, int(len(flags)))]
    ons = [a for a, _ in stats if a > 0]
    gaps = [b for _, b in stats if b > 0]
    label = SOLID
    if (
        len(ons) >= thresholds.min_dash_count
        and median(ons) <= thresholds.max_dash_len
        and max(ons) <= thresholds.max_run_ratio * median(ons)
        and gaps
        and median(gaps) >= thresholds.min_gap
    ):
        label = DASHED
    return replace(prim, classification=label, run_stats=stats)


def classify_all(prims, edges, thresholds: ClassifyParams = ClassifyParams()):
    edges = np.asarray(edges, dtype=bool)
    near = _near(edges, thresholds.tolerance)
    out = []
    for p in prims:
        try:
            out.append(classify_stroke(p, edges, thresholds, near=near))
        except OutOfBounds:
            continue
    return out


def _path_mask(prims, shape):
    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    for p in prims:
        path = p.path()
        ok = (path[:, 0] >= 0) & (path[:, 0] < w) & (path[:, 1] >= 0) & (path[:, 1] < h)
        path = path[ok]
        mask[path[:, 1], path[:, 0]] = True
    return mask


def remove_dashed(edges, prims, erase_radius=2.0, protect_radius=1.0):
    """Turn off edge pixels within ``erase_radius`` of any Dashed path.

    Pixels within ``protect_radius`` of a Solid path are kept unless they lie
    on the Dashed path itself, so dashed strokes ending on an outline do not
    notch it.
    """
    edges = np.asarray(edges, dtype=bool)
    dashed = [p for p in prims if p.classification == DASHED]
    if not dashed:
        return edges.copy()
    on_dashed = _path_mask(dashed, edges.shape)
    near_dashed = ndimage.distance_transform_edt(~on_dashed) <= erase_radius
    solid = [p for p in prims if p.classification == SOLID]
    if solid:
        near_solid = ndimage.distance_transform_edt(~_path_mask(solid, edges.shape)) <= protect_radius
        erase = near_dashed & ~(near_solid & ~on_dashed)
    else:
        erase = near_dashed
    return edges & ~erase


# ------------------------------------------------------------------ mask/color


def extract_mask(edges):
    """Filled union of the outermost closed contours of the edge map.

    One 3x3 closing bridges single-pixel breaks before border following.
    Contours enclosing no pixels beyond their own border (open strokes) are
    discarded.
    """
    edges = np.asarray(edges, dtype=bool)
    if not edges.any():
        raise NoContour("edge map is empty")
    closed = cv2.morphologyEx(edges.astype(np.uint8), cv2.MORPH_CLOSE, np.ones((3, 3), np.uint8))
    contours, _ = cv2.findContours(closed, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        raise NoContour("no contour found")
    mask = np.zeros(edges.shape, np.uint8)
    kept = 0
    for c in contours:
        filled = np.zeros(edges.shape, np.uint8)
        cv2.drawContours(filled, [c], -1, 1, thickness=cv2.FILLED)
        border = np.zeros(edges.shape, np.uint8)
        cv2.drawContours(border, [c], -1, 1, thickness=1)
        if (filled & (1 - border)).any():
            mask |= filled
            kept += 1
    if not kept:
        raise NoClosedContour("all contours are open after closing")
    return mask.astype(bool)


def colorize(view_edges, mask, fill=DEFAULT_FILL, stroke=DEFAULT_STROKE, background=DEFAULT_BACKGROUND):
    view_edges = np.asarray(view_edges, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if view_edges.shape != mask.shape:
        raise DimMismatch(f"edges {view_edges.shape} vs mask {mask.shape}")
    out = np.empty(mask.shape + (3,), dtype=np.float64)
    out[...] = background
    out[mask] = fill
    out[view_edges] = stroke
    return out


@dataclass
class SketchParams:
    median_kernel: int = 3  # 0 or 1 disables the filter
    binarize_window: int = 15
    binarize_offset: float = 10.0
    canny_low: float = 50.0
    canny_high: float = 150.0
    lines: HoughLineParams = field(default_factory=HoughLineParams)
    circles: HoughCircleParams = field(default_factory=HoughCircleParams)
    classify: ClassifyParams = field(default_factory=ClassifyParams)
    fill: tuple = DEFAULT_FILL
    stroke: tuple = DEFAULT_STROKE
    background: tuple = DEFAULT_BACKGROUND


@dataclass
class ViewResult:
    edges: np.ndarray
    cleaned: np.ndarray
    primitives: list
    mask: np.ndarray
    reference: np.ndarray

    @property
    def dashed_count(self):
        return sum(p.classification == DASHED for p in self.primitives)


def process_view(gray, params: SketchParams = SketchParams()):
    """Filter -> binarize -> Canny -> Hough -> classify -> drop dashed ->
    mask -> colorize for one view."""
    img = np.asarray(gray)
    if params.median_kernel and params.median_kernel > 1:
        img = median_filter(img, params.median_kernel)
    binary = adaptive_binarize(img, params.binarize_window, params.binarize_offset)
    edges = canny_edges(binary, params.canny_low, params.canny_high)
    prims = hough_lines(edges, params.lines) + hough_circles(edges, params.circles)
    prims = classify_all(prims, edges, params.classify)
    cleaned = remove_dashed(edges, prims, params.classify.erase_radius)
    mask = extract_mask(cleaned)
    ref = colorize(cleaned, mask, params.fill, params.stroke, params.background)
    return ViewResult(edges, cleaned, prims, mask, ref)
