import math

import numpy as np
import pytest

from triview.camera import VIEWS, canonical_poses, project
from triview.errors import CloudCollapsed, DimMismatch, TooSmall
from triview.gsplat import (
    Culled,
    GaussianCloud,
    LossWeights,
    OptimConfig,
    backward,
    covariance_3d,
    export_points,
    logit,
    loss_dssim,
    loss_l1,
    loss_mask_bce,
    loss_total,
    optimize,
    project_gaussian,
    render,
    render_with_state,
    support_of,
)
from triview.gsplat.cloud import PARAMS
from triview.gsplat.project import BLUR, SIGMA_SUPPORT

POSES, _ = canonical_poses(5.0)
FRONT = POSES["front"]


def cloud_of(positions, log_scales=None, quats=None, opacities=None, colors=None):
    positions = np.atleast_2d(np.asarray(positions, float))
    n = len(positions)
    return GaussianCloud(
        positions,
        np.zeros((n, 3)) if log_scales is None else log_scales,
        np.tile([1.0, 0, 0, 0], (n, 1)) if quats is None else quats,
        logit(np.full(n, 0.5) if opacities is None else np.asarray(opacities, float)),
        np.full((n, 3), 0.5) if colors is None else colors,
    )


def random_cloud(rng, n, spread=0.8):
    c = GaussianCloud(
        rng.uniform(-spread, spread, (n, 3)),
        rng.uniform(np.log(0.15), np.log(0.5), (n, 3)),
        rng.normal(size=(n, 4)),
        rng.uniform(-2, 2, n),
        rng.uniform(0, 1, (n, 3)),
    )
    c.normalize_quats()
    return c


# ----------------------------------------------------------------- geometry


def test_covariance_examples():
    assert np.allclose(covariance_3d([0, 0, 0], [1, 0, 0, 0])[0], np.eye(3))
    assert np.allclose(covariance_3d([math.log(2), 0, 0], [1, 0, 0, 0])[0], np.diag([4.0, 1, 1]))
    h = math.sqrt(0.5)
    assert np.allclose(covariance_3d([math.log(2), 0, 0], [h, 0, 0, h])[0], np.diag([1.0, 4, 1]))


def test_covariance_spd(rng):
    cov = covariance_3d(rng.normal(size=(50, 3)), rng.normal(size=(50, 4)))
    assert np.allclose(cov, np.transpose(cov, (0, 2, 1)))
    assert (np.linalg.eigvalsh(cov) > 0).all()


def test_project_origin_and_isotropy():
    for v in VIEWS:
        mean, cov, depth = project_gaussian([0, 0, 0], [math.log(0.2)] * 3, [1, 0, 0, 0], POSES[v])
        assert np.allclose(mean, [960, 540])
        assert depth == pytest.approx(5.0)
    # isotropic in pixels only when fx == fy; use a square-pixel camera
    k = FRONT.intrinsic
    from dataclasses import replace

    square = replace(FRONT, intrinsic=replace(k, fy=k.fx))
    _, cov, _ = project_gaussian([0, 0, 0], [math.log(0.2)] * 3, [1, 0, 0, 0], square)
    assert abs(cov[0, 1]) < 1e-9 and abs(cov[0, 0] - cov[1, 1]) < 1e-9


def numeric_world_jacobian(p, pose, h=1e-6):
    jac = np.zeros((2, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        up = np.array(project(p + e, pose)[:2])
        um = np.array(project(p - e, pose)[:2])
        jac[:, i] = (up - um) / (2 * h)
    return jac


@pytest.mark.parametrize("projection", ["perspective", "orthographic"])
def test_projected_covariance_matches_numeric_jacobian(rng, projection):
    poses, _ = canonical_poses(5.0, projection=projection)
    for _ in range(10):
        p = rng.uniform(-0.8, 0.8, 3)
        s = rng.uniform(-2, -0.5, 3)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        for v in VIEWS:
            mean, cov, _ = project_gaussian(p, s, q, poses[v])
            assert np.allclose(mean, project(p, poses[v])[:2], atol=1e-9)
            j = numeric_world_jacobian(p, poses[v])
            expect = j @ covariance_3d(s, q)[0] @ j.T + BLUR * np.eye(2)
            assert np.allclose(cov, expect, rtol=1e-6, atol=1e-6)


def test_behind_camera_culled():
    with pytest.raises(Culled):
        project_gaussian([-10.0, 0, 0], [0, 0, 0], [1, 0, 0, 0], FRONT)


# ------------------------------------------------------------------ render


def test_empty_cloud_renders_background():
    view = render(GaussianCloud.empty(), FRONT, (64, 48), background=(0.2, 0.3, 0.4))
    assert view.rgb.shape == (48, 64, 3)
    assert np.allclose(view.rgb, [0.2, 0.3, 0.4]) and not view.alpha.any()


def test_single_gaussian_matches_formula():
    size = (96, 54)
    pose = FRONT.resized(*size)
    c = cloud_of([0, 0, 0], log_scales=np.full((1, 3), math.log(0.1)), opacities=[0.8], colors=[[1.0, 0, 0]])
    view = render(c, pose, size, background=(0, 0, 1))
    mean, cov, _ = project_gaussian(c.positions[0], c.log_scales[0], c.quats[0], pose)
    inv = np.linalg.inv(cov)
    radius = SIGMA_SUPPORT * math.sqrt(np.linalg.eigvalsh(cov).max())
    expect = np.zeros(size[::-1])
    for y in range(size[1]):
        for x in range(size[0]):
            d = np.array([x, y]) - mean
            if d @ d <= radius * radius:
                expect[y, x] = min(0.99, 0.8 * math.exp(-0.5 * d @ inv @ d))
    assert np.allclose(view.alpha, expect, atol=1e-12)
    assert np.allclose(view.rgb[..., 0], expect, atol=1e-12)
    assert np.allclose(view.rgb[..., 2], 1 - expect, atol=1e-12)
    cy, cx = np.unravel_index(np.argmax(view.alpha), view.alpha.shape)
    assert np.hypot(cx - mean[0], cy - mean[1]) <= 0.75


def test_alpha_peaks_at_center_and_decreases_radially():
    c = cloud_of([0, 0, 0], log_scales=np.full((1, 3), math.log(0.01)), opacities=[0.9])
    view = render(c, FRONT, background=(1, 1, 1))
    a = view.alpha
    assert np.unravel_index(np.argmax(a), a.shape) == (540, 960)
    row = a[540, 960:]
    nz = row[row > 0]
    assert len(nz) > 5 and (np.diff(nz) < 0).all()


def test_two_coincident_gaussians_nearer_dominates():
    size = (64, 36)
    pose = FRONT.resized(*size)
    # the front camera sits on -x looking along +x, so smaller x is nearer
    c = cloud_of([[-0.2, 0, 0], [0.2, 0, 0]], log_scales=np.full((2, 3), math.log(0.05)), opacities=[0.6, 0.6],
                 colors=[[1.0, 0, 0], [0, 1.0, 0]])
    view = render(c, pose, size, background=(0, 0, 0))
    depths = [project(p, pose)[2] for p in c.positions]
    near, far = (0, 1) if depths[0] < depths[1] else (1, 0)
    y, x = np.unravel_index(np.argmax(view.alpha), view.alpha.shape)
    px = view.rgb[y, x]
    assert px[near] > px[far]
    # at the shared center both alphas are known in closed form
    st = render_with_state(c, pose, size)[1]
    a = []
    for i in range(2):
        d = np.array([x, y]) - st.splats.means2d[i]
        a.append(min(0.99, 0.6 * math.exp(-0.5 * d @ np.linalg.inv(st.splats.cov2d[i]) @ d)))
    assert px[near] == pytest.approx(a[near], abs=1e-12)
    assert px[far] == pytest.approx(a[far] * (1 - a[near]), abs=1e-12)


def test_alpha_bounds_random(rng):
    for _ in range(10):
        c = random_cloud(rng, 30)
        view = render(c, POSES[VIEWS[rng.integers(3)]], (80, 45))
        assert view.alpha.min() >= 0 and view.alpha.max() <= 1
        assert view.rgb.min() >= -1e-12 and view.rgb.max() <= 1 + 1e-12


def test_order_invariance(rng):
    c = random_cloud(rng, 40)
    perm = rng.permutation(40)
    d = c.subset(perm)
    for v in VIEWS:
        a = render(c, POSES[v], (80, 45))
        b = render(d, POSES[v], (80, 45))
        assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.alpha, b.alpha)


# ------------------------------------------------------------------ losses


def brute_ssim(x, y):
    """Mean SSIM over fully covered 11x11 Gaussian windows, by explicit loops."""
    g = np.exp(-((np.arange(11) - 5) ** 2) / (2 * 1.5**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            a, b = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            ma, mb = (w * a).sum(), (w * b).sum()
            va = (w * a * a).sum() - ma * ma
            vb = (w * b * b).sum() - mb * mb
            cab = (w * a * b).sum() - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_l1_examples():
    white, black = np.ones((8, 8, 3)), np.zeros((8, 8, 3))
    assert loss_l1(white, white) == 0.0
    assert loss_l1(black, white) == 1.0
    half = white.copy()
    half[:4] = 0
    assert loss_l1(half, white) == 0.5
    with pytest.raises(DimMismatch):
        loss_l1(white, np.ones((8, 9, 3)))


def test_dssim_matches_brute_force(rng):
    x = rng.uniform(size=(18, 20, 3))
    y = np.clip(x + rng.normal(scale=0.2, size=x.shape), 0, 1)
    expect = 1 - np.mean([brute_ssim(x[..., c], y[..., c]) for c in range(3)])
    assert loss_dssim(x, y) == pytest.approx(expect, abs=1e-12)


def test_dssim_examples(rng):
    x = rng.uniform(size=(32, 32, 3))
    assert loss_dssim(x, x) == pytest.approx(0.0, abs=1e-12)
    inv = loss_dssim(1 - x, x)
    assert 0 < inv <= 2
    a, b = 0.3, 0.7
    lum = (2 * a * b + 1e-4) / (a * a + b * b + 1e-4)
    assert loss_dssim(np.full((16, 16), a), np.full((16, 16), b)) == pytest.approx(1 - lum, abs=1e-12)
    with pytest.raises(TooSmall):
        loss_dssim(np.zeros((10, 40)), np.zeros((10, 40)))


def test_bce_examples(rng):
    ref = (rng.uniform(size=(20, 20)) > 0.5).astype(float)
    assert loss_mask_bce(ref, ref) <= 1e-5
    assert loss_mask_bce(np.full((20, 20), 0.5), ref) == pytest.approx(math.log(2), abs=1e-9)
    assert loss_mask_bce(np.zeros((1, 1)), np.ones((1, 1))) == pytest.approx(-math.log(1e-6), abs=1e-9)
    assert -math.log(1e-6) == pytest.approx(13.8155, abs=1e-4)


def test_losses_nonnegative(rng):
    for _ in range(20):
        x, y = rng.uniform(size=(2, 16, 16, 3))
        m, r = rng.uniform(size=(2, 16, 16))
        assert loss_l1(x, y) >= 0 and loss_dssim(x, y) >= 0 and loss_mask_bce(m, r) >= 0


def test_total_degenerate_weights(rng):
    x, y = rng.uniform(size=(2, 16, 16, 3))
    m, r = rng.uniform(size=(2, 16, 16))
    assert loss_total(x, y, m, r, LossWeights(0.0, 0.0)) == loss_l1(x, y)
    assert loss_total(x, y, m, r, LossWeights(1.0, 0.0)) == loss_dssim(x, y)
    w = LossWeights(0.2, 1.0)
    expect = 0.8 * loss_l1(x, y) + 0.2 * loss_dssim(x, y) + loss_mask_bce(m, r)
    assert loss_total(x, y, m, r, w) == pytest.approx(expect, abs=1e-15)
    assert loss_total(y, y, r.round(), r.round(), w) <= 1e-5
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.0)


# --------------------------------------------------------------- gradients


def fd_scene(seed):
    rng = np.random.default_rng(seed)
    poses = [POSES[v].resized(32, 32) for v in VIEWS]
    c = random_cloud(rng, int(rng.integers(1, 6)))
    refs = []
    for p in poses:
        x = render(c, p, (32, 32)).rgb
        off = rng.uniform(0.05, 0.3, x.shape) * rng.choice([-1, 1], x.shape)
        refs.append(x + np.where((x + off < 0) | (x + off > 1), -off, off))
    masks = [(rng.uniform(size=(32, 32)) > 0.5).astype(float) for _ in VIEWS]
    # the pixel support and sort order are frozen at the evaluation point so
    # the finite differences see the same piecewise-smooth branch
    sups = [support_of(render_with_state(c, p, (32, 32))[1]) for p in poses]
    return c, poses, refs, masks, sups


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_central_differences(seed):
    c, poses, refs, masks, sups = fd_scene(seed)
    _, _, grads = backward(c, poses, refs, masks, supports=sups)
    h = 1e-4
    for k in PARAMS:
        arr = getattr(c, k)
        for idx in np.ndindex(arr.shape):
            cp, cm = c.copy(), c.copy()
            getattr(cp, k)[idx] += h
            getattr(cm, k)[idx] -= h
            fd = (backward(cp, poses, refs, masks, supports=sups)[0] - backward(cm, poses, refs, masks, supports=sups)[0]) / (2 * h)
            an = grads[k][idx]
            assert abs(an - fd) / max(abs(an), abs(fd), 1e-7) <= 1e-3, (k, idx, an, fd)


def test_zero_cloud_gradients_empty():
    poses = [POSES[v].resized(32, 32) for v in VIEWS]
    refs = [np.ones((32, 32, 3))] * 3
    masks = [np.zeros((32, 32))] * 3
    loss, _, grads = backward(GaussianCloud.empty(), poses, refs, masks)
    assert all(grads[k].shape[0] == 0 for k in PARAMS)
    assert loss <= 1e-5


def test_self_target_gradient_vanishes(rng):
    poses = [POSES[v].resized(32, 32) for v in VIEWS]
    c = random_cloud(rng, 4)
    views = [render(c, p, (32, 32)) for p in poses]
    refs = [v.rgb for v in views]
    masks = [v.alpha for v in views]
    # the mask term's optimum is at m = m_ref; L1 and D-SSIM are zero with
    # zero (sub)gradient at x = x_ref
    _, parts, grads = backward(c, poses, refs, masks, LossWeights(0.2, 0.0))
    assert parts["l1"] == 0 and parts["dssim"] == pytest.approx(0, abs=1e-12)
    norm = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    assert norm < 1e-6


# ---------------------------------------------------------------- optimize


def small_problem(seed=0, n=12):
    rng = np.random.default_rng(seed)
    poses = [POSES[v].resized(32, 32) for v in VIEWS]
    target = random_cloud(rng, n, 0.5)
    views = [render(target, p, (32, 32)) for p in poses]
    start = target.copy()
    start.positions += rng.normal(scale=0.05, size=start.positions.shape)
    start.colors[:] = 0.5
    return start, [v.rgb for v in views], [(v.alpha > 0.5).astype(float) for v in views], poses


def test_zero_iterations_unchanged():
    start, refs, masks, poses = small_problem()
    out, trace = optimize(start, refs, masks, poses, OptimConfig(iterations=0))
    for k in PARAMS:
        assert np.array_equal(getattr(out, k), getattr(start, k))
    assert len(trace.rows) == 1


def test_optimize_deterministic_and_decreasing():
    start, refs, masks, poses = small_problem()
    cfg = OptimConfig(iterations=60, lr_color=0.02, prune_interval=0)
    a, ta = optimize(start, refs, masks, poses, cfg)
    b, tb = optimize(start, refs, masks, poses, cfg)
    for k in PARAMS:
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert ta.final < ta.initial
    assert np.allclose(np.linalg.norm(a.quats, axis=1), 1.0, atol=1e-9)


def test_pruning_and_collapse():
    start, refs, masks, poses = small_problem()
    start.opacity_logits[:3] = logit(0.001)
    cfg = OptimConfig(iterations=2, prune_interval=1, lr_opacity=0.0)
    out, _ = optimize(start, refs, masks, poses, cfg)
    assert len(out) == len(start) - 3
    start.opacity_logits[:] = logit(0.001)
    with pytest.raises(CloudCollapsed):
        optimize(start, refs, masks, poses, cfg)


def test_loss_trace_csv(tmp_path):
    start, refs, masks, poses = small_problem()
    _, trace = optimize(start, refs, masks, poses, OptimConfig(iterations=3))
    path = tmp_path / "loss.csv"
    trace.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,l1,dssim,bce,total"
    assert len(lines) == 1 + 4


def test_export_points_examples():
    assert export_points(GaussianCloud.empty(), 0.5).shape == (0, 3)
    c = cloud_of([[0, 0, 0], [1, 1, 1]], opacities=[0.2, 0.9])
    assert np.array_equal(export_points(c, 0.0), c.positions)
    assert np.array_equal(export_points(c, 0.5), [[1.0, 1, 1]])
