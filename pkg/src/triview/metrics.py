"""Point-cloud comparison: normalization, rigid registration, Chamfer,
Hausdorff and Earth Mover's distances."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import DegenerateCloud, EmptyCloud, RegistrationFailed

NORMALIZED_SIDE = 5.0


def _as_cloud(pc, name="cloud"):
    pts = np.asarray(pc, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloud(f"{name} is empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} has non-finite coordinates")
    return pts


def normalize(pc, side=NORMALIZED_SIDE):
    """Centre the bounding box at the origin and scale uniformly so its
    largest side equals ``side``."""
    pts = _as_cloud(pc)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateCloud("all points coincide")
    return (pts - 0.5 * (lo + hi)) * (side / extent)


@dataclass
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, pts):
        return self.scale * np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


def octahedral_rotations():
    """The 24 proper rotations that map coordinate axes onto coordinate axes."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            m[range(3), perm] = signs
            if np.linalg.det(m) > 0:
                out.append(m)
    return out


def _kabsch(src, dst):
    """Rotation and translation minimizing sum |R src + t - dst|^2."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 60
    tolerance: float = 1e-10  # stop when the mean residual changes less than this
    max_points: int = 4096  # ICP works on a fixed-seed subsample above this size
    seed: int = 0


def _icp(src, tree, dst, r, t, cfg):
    prev = np.inf
    for _ in range(cfg.max_iterations):
        moved = src @ r.T + t
        dist, idx = tree.query(moved)
        err = float(dist.mean())
        if not np.isfinite(err):
            return None
        if abs(prev - err) < cfg.tolerance:
            break
        prev = err
        r, t = _kabsch(src, dst[idx])
    return r, t


def _subsample(pts, m, seed):
    if len(pts) <= m:
        return pts
    return pts[np.sort(np.random.default_rng(seed).choice(len(pts), m, replace=False))]


def register(pred, gt, cfg: RegistrationConfig = RegistrationConfig()):
    """Multi-start point-to-point ICP from the 24 axis-aligned rotations;
    keeps whichever start or refined pose has the lowest Chamfer distance."""
    pred = _as_cloud(pred, "pred")
    gt = _as_cloud(gt, "gt")
    src = _subsample(pred, cfg.max_points, cfg.seed)
    dst = _subsample(gt, cfg.max_points, cfg.seed + 1)
    tree_dst = cKDTree(dst)
    best, best_cd = None, np.inf
    diverged = 0
    for r0 in octahedral_rotations():
        t0 = dst.mean(axis=0) - src.mean(axis=0) @ r0.T
        res = _icp(src, tree_dst, dst, r0, t0, cfg)
        diverged += res is None
        # ICP minimises the one-sided pred->gt error, which can slide a
        # volume-filled cloud onto one face; the start itself stays a candidate
        for r, t in filter(None, (res, (r0, t0))):
            cd = chamfer(src @ r.T + t, dst, tree_b=tree_dst)
            if cd < best_cd:
                best, best_cd = (r, t), cd
    if diverged == 24:
        raise RegistrationFailed("ICP diverged from every initial rotation")
    return RigidTransform(best[0], best[1], 1.0)


def _directed(a, b, tree_b=None):
    tree = cKDTree(b) if tree_b is None else tree_b
    return tree.query(a)[0]


def chamfer(a, b, tree_b=None):
    """Mean nearest-neighbour distance from a to b plus from b to a."""
    a = _as_cloud(a, "A")
    b = _as_cloud(b, "B")
    return float(_directed(a, b, tree_b).mean() + _directed(b, a).mean())


def directed_hausdorff(a, b):
    return float(_directed(_as_cloud(a, "A"), _as_cloud(b, "B")).max())


def hausdorff(a, b):
    """Largest nearest-neighbour distance in either direction."""
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


@dataclass(frozen=True)
class EmdConfig:
    sample_count: int = 1024
    exact_limit: int = 256
    max_relative_gap: float = 0.01
    seed: int = 0


def _canonical_sample(pts, m, seed):
    """Fixed-seed resample to ``m`` points from a lexicographically sorted
    copy, so equal multisets give equal samples regardless of order.

    Sort keys are rounded to 1e-9 so clouds that agree up to floating-point
    noise (a registered exact copy) also sort alike.
    """
    keys = np.round(pts, 9)
    pts = pts[np.lexsort(keys.T[::-1])]
    n = len(pts)
    if n == m:
        return pts
    rng = np.random.default_rng(seed)
    if n > m:
        return pts[np.sort(rng.choice(n, m, replace=False))]
    extra = rng.choice(n, m - n, replace=True)
    return np.concatenate([pts, pts[np.sort(extra)]])


@numba.njit(cache=True)
def _auction_phase(benefit, prices, eps, owner, assigned):
    """Gauss-Seidel forward auction for maximizing total benefit."""
    n = benefit.shape[0]
    for i in range(n):
        assigned[i] = -1
    for j in range(n):
        owner[j] = -1
    queue = np.arange(n)
    head = 0
    tail = n  # queue holds unassigned persons, circular of length n
    count = n
    while count > 0:
        i = queue[head % n]
        head += 1
        count -= 1
        best_j = -1
        best_v = -np.inf
        second_v = -np.inf
        for j in range(n):
            v = benefit[i, j] - prices[j]
            if v > best_v:
                second_v = best_v
                best_v = v
                best_j = j
            elif v > second_v:
                second_v = v
        if second_v == -np.inf:
            second_v = best_v
        prices[best_j] += best_v - second_v + eps
        prev = owner[best_j]
        owner[best_j] = i
        assigned[i] = best_j
        if prev >= 0:
            assigned[prev] = -1
            queue[tail % n] = prev
            tail += 1
            count += 1
    return assigned


def auction_assignment(cost, max_relative_gap=0.01, max_phases=64):
    """Epsilon-scaling auction for the min-cost square assignment.

    Returns ``(assignment, cost_sum, lower_bound)``; the lower bound comes
    from the dual prices, so ``(cost_sum - lower_bound) / cost_sum`` is a
    certified bound on the relative gap to the optimum.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    benefit = -cost
    prices = np.zeros(n)
    owner = np.empty(n, dtype=np.int64)
    assigned = np.empty(n, dtype=np.int64)
    spread = float(cost.max() - cost.min())
    eps = max(spread / 4.0, 1e-12)
    rows = np.arange(n)
    for _ in range(max_phases):
        _auction_phase(benefit, prices, eps, owner, assigned)
        total = float(cost[rows, assigned].sum())
        lower = float(np.min(cost + prices[None, :], axis=1).sum() - prices.sum())
        if total <= 0 or total - lower <= max_relative_gap * total:
            return assigned.copy(), total, min(lower, total)
        eps /= 5.0
    return assigned.copy(), total, min(lower, total)


@dataclass
class EmdResult:
    mean: float
    total: float
    n_samples: int
    exact: bool
    lower_bound: float


def emd(a, b, cfg: EmdConfig = EmdConfig(), method="auto"):
    """Min-cost bijection between equal-size resamples of a and b.

    ``method`` is 'auto' (exact up to ``cfg.exact_limit`` points), 'exact'
    or 'auction'. Clouds that already have the same size not above the
    sample count are used as they are.
    """
    a = _as_cloud(a, "A")
    b = _as_cloud(b, "B")
    if len(a) == len(b) and len(a) <= cfg.sample_count:
        m = len(a)
    else:
        m = int(cfg.sample_count)
    a = _canonical_sample(a, m, cfg.seed)
    b = _canonical_sample(b, m, cfg.seed)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    if method not in ("auto", "exact", "auction"):
        raise ValueError(f"unknown method {method!r}")
    exact = method == "exact" or (method == "auto" and m <= cfg.exact_limit)
    if exact:
        r, c = linear_sum_assignment(cost)
        total = float(cost[r, c].sum())
        lower = total
    else:
        _, total, lower = auction_assignment(cost, cfg.max_relative_gap)
    return EmdResult(total / m, total, m, exact, lower)


@dataclass
class MetricsReport:
    cd: float
    hd: float
    emd_mean: float
    emd_sum: float
    n_samples: int
    n_pred: int
    n_gt: int
    registration: np.ndarray

    @property
    def emd(self):
        return self.emd_mean

    def to_dict(self):
        return {
            "cd": self.cd,
            "hd": self.hd,
            "emd_mean": self.emd_mean,
            "emd_sum": self.emd_sum,
            "n_samples": self.n_samples,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
            "registration": np.asarray(self.registration).tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def summary(self):
        return f"CD {self.cd:.4f}  HD {self.hd:.4f}  EMD {self.emd_mean:.4f} (sum {self.emd_sum:.3f}, n={self.n_samples})"


@dataclass(frozen=True)
class EvalConfig:
    registration: RegistrationConfig = RegistrationConfig()
    emd: EmdConfig = EmdConfig()
    register: bool = True


def evaluate(pred, gt, cfg: EvalConfig = EvalConfig()):
    """Normalize both clouds, register pred onto gt, then measure."""
    pred = normalize(_as_cloud(pred, "pred"))
    gt = normalize(_as_cloud(gt, "gt"))
    xf = register(pred, gt, cfg.registration) if cfg.register else RigidTransform()
    aligned = xf.apply(pred)
    e = emd(aligned, gt, cfg.emd)
    return MetricsReport(
        chamfer(aligned, gt), hausdorff(aligned, gt), e.mean, e.total, e.n_samples, len(pred), len(gt), xf.matrix
    )


def sample_mesh(vertices, faces, n, rng=None):
    """Area-uniform surface samples from a triangle mesh."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) == 0:
        raise EmptyCloud("mesh has no faces")
    rng = np.random.default_rng(0) if rng is None else rng
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    if area.sum() <= 0:
        raise DegenerateCloud("mesh has zero surface area")
    tri = rng.choice(len(f), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.uniform(size=n))[:, None]
    r2 = rng.uniform(size=n)[:, None]
    return (1 - r1) * a[tri] + r1 * (1 - r2) * b[tri] + r1 * r2 * c[tri]
