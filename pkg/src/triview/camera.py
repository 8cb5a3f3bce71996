"""Camera geometry for the three orthographic views.

Rotations are built from ZYX Euler angles, placed with 4x4 homogeneous
extrinsics and projected through a pinhole intrinsic (or an orthographic
scale when ``projection == "orthographic"``).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BehindCamera, PoseConstructionFailed, UnknownConvention

VIEWS = ("front", "left", "bottom")

CAM_TO_WORLD = "cam_to_world"
WORLD_TO_CAM = "world_to_cam"

# Camera-local axes x right, y down, z into the scene, as described for the
# authoring convention. The reconstruction backend uses the same axes, so the
# default flip between them is the identity.
SOURCE = "source"
TARGET = "target"
CONVENTIONS = (SOURCE, TARGET)
DEFAULT_FLIP = (1.0, 1.0, 1.0)

# Euler triples (alpha about z, beta about y, gamma about x, degrees) and
# camera placements for front, left and bottom at distance 5.
VIEW_EULER = {"front": (0.0, 90.0, 90.0), "left": (90.0, 0.0, 0.0), "bottom": (0.0, 180.0, 90.0)}
VIEW_POSITION = {"front": (0.0, 0.0, 5.0), "left": (0.0, -5.0, 0.0), "bottom": (0.0, 0.0, -5.0)}
REFERENCE_DISTANCE = 5.0

LOOKAT_TOL = 1e-9


@dataclass(frozen=True)
class EulerAnglesZYX:
    alpha: float
    beta: float
    gamma: float


def _cos_sin_deg(angle):
    """cos/sin of an angle in degrees, exact at multiples of 90."""
    q, r = divmod(float(angle), 90.0)
    if r == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    rad = math.radians(angle)
    return math.cos(rad), math.sin(rad)


def rot_z(alpha):
    c, s = _cos_sin_deg(alpha)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(beta):
    c, s = _cos_sin_deg(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(gamma):
    c, s = _cos_sin_deg(gamma)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_from_euler(e: EulerAnglesZYX) -> np.ndarray:
    """R = Rz(alpha) Ry(beta) Rx(gamma)."""
    return rot_z(e.alpha) @ rot_y(e.beta) @ rot_x(e.gamma)


def _rotation_reversed(e: EulerAnglesZYX) -> np.ndarray:
    # Opposite composition reading, Rx(gamma) Ry(beta) Rz(alpha).
    return rot_x(e.gamma) @ rot_y(e.beta) @ rot_z(e.alpha)


COMPOSITIONS = {"as_written": rotation_from_euler, "reversed": _rotation_reversed}


def is_rotation(m, tol=1e-12) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    ortho = np.max(np.abs(m.T @ m - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(m) - 1.0) < tol)


@dataclass(frozen=True)
class Extrinsic:
    rotation: np.ndarray
    translation: np.ndarray
    direction: str = WORLD_TO_CAM
    convention: str = TARGET

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, p):
        return np.asarray(p, dtype=float) @ self.rotation.T + self.translation


def compose_extrinsic(r, t, direction=WORLD_TO_CAM, convention=TARGET) -> Extrinsic:
    if direction not in (CAM_TO_WORLD, WORLD_TO_CAM):
        raise ValueError(f"unknown direction {direction!r}")
    if convention not in CONVENTIONS:
        raise UnknownConvention(convention)
    return Extrinsic(
        np.array(r, dtype=float).reshape(3, 3), np.array(t, dtype=float).reshape(3), direction, convention
    )


def invert_extrinsic(T: Extrinsic) -> Extrinsic:
    rt = T.rotation.T
    flipped = WORLD_TO_CAM if T.direction == CAM_TO_WORLD else CAM_TO_WORLD
    return Extrinsic(rt, -rt @ T.translation, flipped, T.convention)


def convert_convention(e: Extrinsic, to: str, flip=DEFAULT_FLIP) -> Extrinsic:
    """Re-express camera-local axes in another convention.

    ``flip`` is the diagonal of the axis-flip matrix relating the two
    conventions. The conversion is an involution.
    """
    if to not in CONVENTIONS or e.convention not in CONVENTIONS:
        raise UnknownConvention(to if to not in CONVENTIONS else e.convention)
    if to == e.convention:
        return e
    f = np.diag(np.asarray(flip, dtype=float))
    if e.direction == WORLD_TO_CAM:
        # camera coordinates are flipped after the world transform
        return Extrinsic(f @ e.rotation, f @ e.translation, e.direction, to)
    return Extrinsic(e.rotation @ f, e.translation.copy(), e.direction, to)


@dataclass(frozen=True)
class Intrinsic:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def resized(self, width, height) -> "Intrinsic":
        """Same camera sampled on a ``width`` x ``height`` pixel grid.

        Pixel centres sit at integer coordinates, so the principal point maps
        through the affine (c + 0.5) * s - 0.5.
        """
        sx = width / self.width
        sy = height / self.height
        return Intrinsic(
            self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5, int(width), int(height)
        )


def default_intrinsic() -> Intrinsic:
    return Intrinsic(fx=2480.0, fy=2080.0, cx=960.0, cy=540.0, width=1920, height=1080)


@dataclass(frozen=True)
class CameraPose:
    intrinsic: Intrinsic
    extrinsic: Extrinsic
    view_id: str
    projection: str = "perspective"
    # pixels per scene unit for the orthographic mode, (sx, sy)
    ortho_scale: tuple = (1.0, 1.0)

    @property
    def center(self) -> np.ndarray:
        return -self.extrinsic.rotation.T @ self.extrinsic.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Camera-local +z expressed in world coordinates."""
        return self.extrinsic.rotation[2].copy()

    def resized(self, width, height) -> "CameraPose":
        k = self.intrinsic
        new = k.resized(width, height)
        scale = (self.ortho_scale[0] * width / k.width, self.ortho_scale[1] * height / k.height)
        return replace(self, intrinsic=new, ortho_scale=scale)


def project(p, pose: CameraPose):
    """World point -> (u, v, depth). Raises BehindCamera for depth <= 0."""
    ext = pose.extrinsic
    if ext.direction != WORLD_TO_CAM or ext.convention != TARGET:
        raise ValueError("projection needs a world-to-camera pose in the target convention")
    pc = ext.apply(p)
    depth = float(pc[2])
    if depth <= 0.0:
        raise BehindCamera(f"depth {depth:.6g} <= 0")
    k = pose.intrinsic
    if pose.projection == "orthographic":
        return pose.ortho_scale[0] * pc[0] + k.cx, pose.ortho_scale[1] * pc[1] + k.cy, depth
    return k.fx * pc[0] / depth + k.cx, k.fy * pc[1] / depth + k.cy, depth


def project_many(points, pose: CameraPose):
    """Vectorised projection; returns u, v, depth arrays (no culling)."""
    pc = pose.extrinsic.apply(np.asarray(points, dtype=float).reshape(-1, 3))
    k = pose.intrinsic
    depth = pc[:, 2]
    if pose.projection == "orthographic":
        return pose.ortho_scale[0] * pc[:, 0] + k.cx, pose.ortho_scale[1] * pc[:, 1] + k.cy, depth
    with np.errstate(divide="ignore", invalid="ignore"):
        return k.fx * pc[:, 0] / depth + k.cx, k.fy * pc[:, 1] / depth + k.cy, depth


@dataclass
class PoseAssignment:
    """Which reading of the Euler/position table produced valid cameras."""

    composition: str
    placement: str  # "listed" or "axis_derived"
    positions: dict = field(default_factory=dict)
    listed_position_matches: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "composition": self.composition,
            "placement": self.placement,
            "positions": {k: [float(x) for x in v] for k, v in self.positions.items()},
            "listed_position_matches": dict(self.listed_position_matches),
        }


def _looks_at_origin(pose: CameraPose) -> bool:
    c = pose.center
    axis = pose.optical_axis
    # distance from the origin to the optical-axis line, and facing direction
    dist = np.linalg.norm(np.cross(axis, -c))
    return bool(dist < LOOKAT_TOL * max(1.0, np.linalg.norm(c)) and axis @ (-c) > 0)


def _orthogonal_triad(poses) -> bool:
    axes = [p.optical_axis for p in poses]
    return all(abs(a @ b) < LOOKAT_TOL for a, b in itertools.combinations(axes, 2))


def _make_pose(r_c2w, center, view, intrinsic, flip, projection, distance):
    c2w = compose_extrinsic(r_c2w, center, CAM_TO_WORLD, SOURCE)
    w2c = invert_extrinsic(convert_convention(c2w, TARGET, flip))
    scale = (intrinsic.fx / distance, intrinsic.fy / distance)
    return CameraPose(intrinsic, w2c, view, projection, scale)


def canonical_poses(distance=REFERENCE_DISTANCE, intrinsic=None, projection="perspective", flip=DEFAULT_FLIP):
    """Front, left and bottom cameras looking at the origin from ``distance``.

    The tabulated Euler triples and positions are tried first under both
    composition readings and every pairing. If no pairing yields three
    origin-looking cameras with mutually orthogonal axes, each camera is
    placed at ``-distance * axis`` of its own rotation instead, and that
    triad is validated the same way.

    Returns ``(poses, assignment)`` where ``poses`` maps view id -> CameraPose.
    """
    if not distance > 0:
        raise ValueError("distance must be positive")
    if projection not in ("perspective", "orthographic"):
        raise ValueError(f"unknown projection {projection!r}")
    intrinsic = intrinsic or default_intrinsic()
    scale = distance / REFERENCE_DISTANCE
    listed = {v: np.array(VIEW_POSITION[v]) * scale for v in VIEWS}

    found = []
    for comp_name, comp in COMPOSITIONS.items():
        rots = {v: comp(EulerAnglesZYX(*VIEW_EULER[v])) for v in VIEWS}
        for perm in itertools.permutations(VIEWS):
            poses = {
                v: _make_pose(rots[v], listed[p], v, intrinsic, flip, projection, distance) for v, p in zip(VIEWS, perm)
            }
            if all(_looks_at_origin(p) for p in poses.values()) and _orthogonal_triad(poses.values()):
                found.append((comp_name, perm, poses))
    if len(found) == 1:
        comp_name, perm, poses = found[0]
        assignment = PoseAssignment(
            comp_name, "listed", {v: poses[v].center for v in VIEWS}, {v: p for v, p in zip(VIEWS, perm)}
        )
        return poses, assignment
    if len(found) > 1:
        raise PoseConstructionFailed(f"{len(found)} pairings are valid; assignment is ambiguous")

    derived = []
    for comp_name, comp in COMPOSITIONS.items():
        poses = {}
        for v in VIEWS:
            r = comp(EulerAnglesZYX(*VIEW_EULER[v]))
            probe = _make_pose(r, np.zeros(3), v, intrinsic, flip, projection, distance)
            center = -distance * probe.optical_axis
            poses[v] = _make_pose(r, center, v, intrinsic, flip, projection, distance)
        if all(_looks_at_origin(p) for p in poses.values()) and _orthogonal_triad(poses.values()):
            derived.append((comp_name, poses))
    if len(derived) != 1:
        raise PoseConstructionFailed(
            "no unique composition reading gives three origin-looking cameras with orthogonal axes"
        )
    comp_name, poses = derived[0]
    matches = {}
    for v in VIEWS:
        hit = [w for w in VIEWS if np.allclose(poses[v].center, listed[w], atol=1e-9)]
        matches[v] = hit[0] if hit else None
    return poses, PoseAssignment(comp_name, "axis_derived", {v: poses[v].center for v in VIEWS}, matches)


def poses_to_json(poses, assignment=None) -> str:
    doc = {"views": {}}
    for v, pose in poses.items():
        k = pose.intrinsic
        doc["views"][v] = {
            "w2c": pose.extrinsic.matrix.reshape(-1).tolist(),
            "K": k.K.reshape(-1).tolist(),
            "width": k.width,
            "height": k.height,
            "projection": pose.projection,
            "ortho_scale": list(pose.ortho_scale),
        }
    if assignment is not None:
        doc["assignment"] = assignment.to_dict()
    return json.dumps(doc, indent=2)


def poses_from_json(text: str):
    doc = json.loads(text)
    poses = {}
    for v, d in doc["views"].items():
        m = np.array(d["w2c"], dtype=float).reshape(4, 4)
        K = np.array(d["K"], dtype=float).reshape(3, 3)
        k = Intrinsic(K[0, 0], K[1, 1], K[0, 2], K[1, 2], int(d["width"]), int(d["height"]))
        ext = Extrinsic(m[:3, :3].copy(), m[:3, 3].copy(), WORLD_TO_CAM, TARGET)
        poses[v] = CameraPose(k, ext, v, d.get("projection", "perspective"), tuple(d.get("ortho_scale", (1.0, 1.0))))
    return poses
