import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from triview.errors import DegenerateCloud, EmptyCloud
from triview.metrics import (
    EmdConfig,
    EvalConfig,
    RigidTransform,
    auction_assignment,
    chamfer,
    directed_hausdorff,
    emd,
    evaluate,
    hausdorff,
    normalize,
    octahedral_rotations,
    register,
    sample_mesh,
)


def brute_nn(a, b):
    """All-pairs nearest-neighbour distances from a to b."""
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1)


def brute_chamfer(a, b):
    return brute_nn(a, b).mean() + brute_nn(b, a).mean()


def brute_hausdorff(a, b):
    return max(brute_nn(a, b).max(), brute_nn(b, a).max())


def brute_emd(a, b):
    """Minimum over every bijection, for tiny clouds."""
    n = len(a)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def cube_surface(rng, n, half=0.5):
    pts = rng.uniform(-half, half, (n, 3))
    axis = rng.integers(0, 3, n)
    pts[np.arange(n), axis] = rng.choice([-half, half], n)
    return pts


# ----------------------------------------------------------------- normalize


def test_normalize_unit_cube_corners():
    corners = np.array(list(itertools.product([0, 1], repeat=3)), float)
    out = normalize(corners)
    assert np.allclose(out, (corners - 0.5) * 5)


def test_normalize_idempotent_and_anisotropic(rng):
    pts = rng.uniform(size=(200, 3)) * [1, 2, 4] + [3, -1, 7]
    once = normalize(pts)
    assert np.allclose(normalize(once), once, atol=1e-12)
    sides = once.max(0) - once.min(0)
    assert sides.max() == pytest.approx(5.0)
    assert np.allclose(sides / sides.max(), (pts.max(0) - pts.min(0)) / (pts.max(0) - pts.min(0)).max())
    assert np.allclose(0.5 * (once.max(0) + once.min(0)), 0, atol=1e-12)


def test_normalize_errors():
    with pytest.raises(DegenerateCloud):
        normalize(np.ones((5, 3)))
    with pytest.raises(EmptyCloud):
        normalize(np.zeros((0, 3)))


# ------------------------------------------------------------ CD / HD / EMD


def test_metric_examples():
    a = np.array([[0.0, 0, 0]])
    b = np.array([[1.0, 0, 0]])
    two = np.array([[0.0, 0, 0], [1, 0, 0]])
    assert chamfer(a, b) == 2.0
    assert chamfer(two, a) == 0.5
    assert hausdorff(two, a) == 1.0
    assert chamfer(two, two) == 0 and hausdorff(two, two) == 0
    assert emd(two, np.array([[2.0, 0, 0], [3, 0, 0]])).mean == 2.0
    assert emd(two, two[::-1]).mean == 0.0
    with pytest.raises(EmptyCloud):
        chamfer(a, np.zeros((0, 3)))
    with pytest.raises(EmptyCloud):
        hausdorff(np.zeros((0, 3)), a)


def test_chamfer_and_hausdorff_match_brute_force(rng):
    for _ in range(20):
        a = rng.normal(size=(int(rng.integers(1, 80)), 3))
        b = rng.normal(size=(int(rng.integers(1, 80)), 3))
        assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-12)
        assert hausdorff(a, b) == pytest.approx(brute_hausdorff(a, b), abs=1e-12)


def test_symmetry_and_bounds(rng):
    for _ in range(100):
        a = rng.normal(size=(int(rng.integers(1, 60)), 3))
        b = rng.normal(size=(int(rng.integers(1, 60)), 3)) + rng.normal(size=3)
        assert chamfer(a, b) == chamfer(b, a)
        assert hausdorff(a, b) == hausdorff(b, a)
        hd = hausdorff(a, b)
        assert hd >= directed_hausdorff(a, b) and hd >= directed_hausdorff(b, a)
        assert chamfer(a, b) <= 2 * hd
        assert chamfer(a, b) >= 0


def test_emd_exact_matches_permutation_oracle(rng):
    for _ in range(10):
        a, b = rng.normal(size=(2, 6, 3))
        assert emd(a, b, method="exact").mean == pytest.approx(brute_emd(a, b), abs=1e-12)


def test_auction_within_one_percent_of_hungarian(rng):
    worst = 0.0
    for _ in range(50):
        a, b = rng.uniform(size=(2, 64, 3))
        cost = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
        r, c = linear_sum_assignment(cost)
        opt = cost[r, c].sum()
        assign, total, lower = auction_assignment(cost, 0.01)
        assert sorted(assign) == list(range(64))
        assert total == pytest.approx(cost[np.arange(64), assign].sum())
        assert lower <= opt + 1e-9
        worst = max(worst, (total - opt) / opt)
    assert worst <= 0.01


def test_emd_auction_path_and_resampling(rng):
    a = rng.uniform(size=(700, 3))
    b = rng.uniform(size=(900, 3))
    cfg = EmdConfig(sample_count=300, exact_limit=256)
    res = emd(a, b, cfg)
    assert not res.exact and res.n_samples == 300
    assert (res.total - res.lower_bound) <= 0.01 * res.total
    # order of the input points does not change the resample
    again = emd(a[rng.permutation(700)], b[rng.permutation(900)], cfg)
    assert again.total == res.total
    assert emd(a, a, cfg).mean == 0.0


# -------------------------------------------------------------- registration


def test_octahedral_group():
    rots = octahedral_rotations()
    assert len(rots) == 24
    for r in rots:
        assert np.allclose(r @ r.T, np.eye(3)) and np.isclose(np.linalg.det(r), 1)
        assert set(np.abs(r).ravel()) <= {0.0, 1.0}
    assert len({tuple(r.astype(int).ravel()) for r in rots}) == 24


def test_register_identity_and_quarter_turn(rng):
    gt = normalize(np.vstack([cube_surface(rng, 1500) * [1, 0.6, 0.3], [[0.5, 0.3, 0.15]]]))
    xf = register(gt, gt)
    assert chamfer(xf.apply(gt), gt) < 1e-9
    rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    pred = gt @ rz.T
    xf = register(pred, gt)
    assert chamfer(xf.apply(pred), gt) < 1e-9
    assert np.allclose(xf.rotation, rz.T, atol=1e-9)


def test_register_improves_noisy_copy(rng):
    gt = normalize(cube_surface(rng, 1500) * [1, 0.7, 0.4])
    small = np.radians(4)
    rot = np.array([[math.cos(small), -math.sin(small), 0], [math.sin(small), math.cos(small), 0], [0, 0, 1]])
    pred = (gt + rng.uniform(-0.01, 0.01, gt.shape)) @ rot.T + [0.05, -0.03, 0.02]
    before = chamfer(pred, gt)
    xf = register(pred, gt)
    assert chamfer(xf.apply(pred), gt) < before


def test_rigid_transform_matrix():
    r = octahedral_rotations()[5]
    xf = RigidTransform(r, [1.0, 2, 3])
    p = np.array([[0.3, -0.2, 0.9]])
    hom = np.hstack([p, [[1.0]]]) @ xf.matrix.T
    assert np.allclose(hom[:, :3], xf.apply(p))


# ------------------------------------------------------------------ evaluate


def test_evaluate_rigid_copy_is_zero(rng):
    gt = cube_surface(rng, 2000) * [1.0, 0.8, 0.5]
    for r in octahedral_rotations()[::6]:
        pred = gt @ r.T + rng.normal(size=3)
        rep = evaluate(pred, gt)
        assert rep.cd < 1e-6 and rep.hd < 1e-6 and rep.emd < 1e-6


def test_evaluate_outliers_hausdorff(rng):
    gt = cube_surface(rng, 3000)
    n_out = 300
    # outliers on a concentric cube of half-side 0.1 sit 0.4 inside the
    # unit cube surface, i.e. 2.0 after normalization to side 5
    outliers = cube_surface(rng, n_out, half=0.1)
    pred = np.vstack([gt, outliers])
    rep = evaluate(pred, gt)
    assert rep.hd == pytest.approx(2.0, abs=0.05)
    assert rep.cd < 0.25 * rep.hd


def test_report_serialization(rng):
    gt = cube_surface(rng, 500)
    rep = evaluate(gt, gt, EvalConfig(register=False))
    d = rep.to_dict()
    assert set(d) >= {"cd", "hd", "emd_mean", "emd_sum", "n_samples", "registration"}
    assert "CD" in rep.summary()


def test_sample_mesh_on_surface(rng):
    v = np.array(list(itertools.product([-1, 1], repeat=3)), float)
    faces = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
             [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    pts = sample_mesh(v, faces, 3000, rng)
    assert pts.shape == (3000, 3)
    assert np.allclose(np.abs(pts).max(axis=1), 1.0)
    # area-uniform: each of the six faces gets about a sixth
    counts = np.array([(np.isclose(pts[:, i], s)).sum() for i in range(3) for s in (-1, 1)])
    assert (np.abs(counts / 3000 - 1 / 6) < 0.03).all()
