"""EWA projection of 3D Gaussians to screen-space splats, with its adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import CameraPose
from ..errors import TriviewError
from .cloud import GaussianCloud, sigmoid

NEAR_PLANE = 0.2
BLUR = 0.3  # isotropic pixel-variance floor added to every splat
SIGMA_SUPPORT = 3.0


class Culled(TriviewError):
    """The Gaussian is at or behind the near plane."""


def quat_to_rot(q):
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((len(q), 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _rot_vjp(q, g):
    """Gradient w.r.t. a unit quaternion given dL/dR (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    gy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    gz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return np.stack([gw, gx, gy, gz], axis=1)


def covariance_3d(log_scales, quats):
    """R diag(exp(s))^2 R^T for (N, 3) log-scales and (N, 4) quaternions."""
    log_scales = np.atleast_2d(np.asarray(log_scales, dtype=np.float64))
    quats = np.atleast_2d(np.asarray(quats, dtype=np.float64))
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    m = quat_to_rot(q) * np.exp(log_scales)[:, None, :]
    return m @ np.transpose(m, (0, 2, 1))


@dataclass
class Splats:
    """Screen-space splats of a cloud for one camera, plus the intermediates
    the adjoint needs."""

    means2d: np.ndarray  # (N, 2) pixel coordinates
    cov2d: np.ndarray  # (N, 2, 2)
    conics: np.ndarray  # (N, 3) inverse covariance (a, b, c)
    depths: np.ndarray  # (N,)
    radii: np.ndarray  # (N,) support radius in pixels, 0 when culled
    opacities: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    valid: np.ndarray  # (N,) bool
    # cached for the backward pass
    t_cam: np.ndarray = None
    jac: np.ndarray = None
    cov3d: np.ndarray = None
    rot: np.ndarray = None
    scales: np.ndarray = None
    qhat: np.ndarray = None
    qnorm: np.ndarray = None


def _jacobian(t, pose: CameraPose):
    k = pose.intrinsic
    n = len(t)
    jac = np.zeros((n, 2, 3))
    if pose.projection == "orthographic":
        jac[:, 0, 0] = pose.ortho_scale[0]
        jac[:, 1, 1] = pose.ortho_scale[1]
        return jac
    tz = t[:, 2]
    jac[:, 0, 0] = k.fx / tz
    jac[:, 0, 2] = -k.fx * t[:, 0] / tz**2
    jac[:, 1, 1] = k.fy / tz
    jac[:, 1, 2] = -k.fy * t[:, 1] / tz**2
    return jac


def project_gaussians(cloud: GaussianCloud, pose: CameraPose) -> Splats:
    n = len(cloud)
    w2c = pose.extrinsic
    W = w2c.rotation
    t = cloud.positions @ W.T + w2c.translation
    depths = t[:, 2].copy()
    valid = depths > NEAR_PLANE
    # culled entries are evaluated at a safe depth and masked out afterwards
    t_safe = t.copy()
    t_safe[~valid, 2] = 1.0
    k = pose.intrinsic
    means = np.empty((n, 2))
    if pose.projection == "orthographic":
        means[:, 0] = pose.ortho_scale[0] * t_safe[:, 0] + k.cx
        means[:, 1] = pose.ortho_scale[1] * t_safe[:, 1] + k.cy
    else:
        means[:, 0] = k.fx * t_safe[:, 0] / t_safe[:, 2] + k.cx
        means[:, 1] = k.fy * t_safe[:, 1] / t_safe[:, 2] + k.cy

    qnorm = np.linalg.norm(cloud.quats, axis=1)
    qhat = cloud.quats / qnorm[:, None]
    rot = quat_to_rot(qhat)
    scales = np.exp(cloud.log_scales)
    m = rot * scales[:, None, :]
    cov3d = m @ np.transpose(m, (0, 2, 1))
    jac = _jacobian(t_safe, pose)
    tj = jac @ W
    cov2d = tj @ cov3d @ np.transpose(tj, (0, 2, 1))
    cov2d[:, 0, 0] += BLUR
    cov2d[:, 1, 1] += BLUR
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = np.where(valid, SIGMA_SUPPORT * np.sqrt(lam), 0.0)
    return Splats(
        means, cov2d, conics, depths, radii, sigmoid(cloud.opacity_logits), cloud.colors.copy(), valid,
        t_cam=t_safe, jac=jac, cov3d=cov3d, rot=rot, scales=scales, qhat=qhat, qnorm=qnorm,
    )


def project_gaussian(position, log_scale, quat, pose: CameraPose):
    """Single-Gaussian projection; returns (mean2d, cov2d, depth)."""
    cloud = GaussianCloud([position], [log_scale], [quat], [0.0], [[0.0, 0.0, 0.0]])
    s = project_gaussians(cloud, pose)
    if not s.valid[0]:
        raise Culled(f"depth {s.depths[0]:.6g} is at or behind the near plane {NEAR_PLANE}")
    return s.means2d[0].copy(), s.cov2d[0].copy(), float(s.depths[0])


def project_backward(splats: Splats, pose: CameraPose, g_means, g_conics):
    """Chain screen-space gradients back to position, log-scale and raw
    quaternion gradients. Culled Gaussians receive zero."""
    n = len(splats.means2d)
    W = pose.extrinsic.rotation
    k = pose.intrinsic
    t = splats.t_cam
    valid = splats.valid
    g_means = np.where(valid[:, None], g_means, 0.0)
    g_conics = np.where(valid[:, None], g_conics, 0.0)

    # conic = inverse(cov2d): dL/dcov = -K G K with G the symmetric gradient
    conic = np.empty((n, 2, 2))
    conic[:, 0, 0] = splats.conics[:, 0]
    conic[:, 0, 1] = conic[:, 1, 0] = splats.conics[:, 1]
    conic[:, 1, 1] = splats.conics[:, 2]
    gk = np.empty((n, 2, 2))
    gk[:, 0, 0] = g_conics[:, 0]
    gk[:, 0, 1] = gk[:, 1, 0] = 0.5 * g_conics[:, 1]
    gk[:, 1, 1] = g_conics[:, 2]
    g_cov2 = -conic @ gk @ conic

    tj = splats.jac @ W
    g_cov3 = np.transpose(tj, (0, 2, 1)) @ g_cov2 @ tj
    g_tj = 2.0 * g_cov2 @ tj @ splats.cov3d
    g_jac = g_tj @ W.T

    g_t = np.zeros((n, 3))
    if pose.projection == "orthographic":
        g_t[:, 0] = g_means[:, 0] * pose.ortho_scale[0]
        g_t[:, 1] = g_means[:, 1] * pose.ortho_scale[1]
    else:
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        fx, fy = k.fx, k.fy
        g_t[:, 0] = g_means[:, 0] * fx / tz
        g_t[:, 1] = g_means[:, 1] * fy / tz
        g_t[:, 2] = -g_means[:, 0] * fx * tx / tz**2 - g_means[:, 1] * fy * ty / tz**2
        g_t[:, 0] += -g_jac[:, 0, 2] * fx / tz**2
        g_t[:, 1] += -g_jac[:, 1, 2] * fy / tz**2
        g_t[:, 2] += (
            -g_jac[:, 0, 0] * fx / tz**2
            + g_jac[:, 0, 2] * 2 * fx * tx / tz**3
            - g_jac[:, 1, 1] * fy / tz**2
            + g_jac[:, 1, 2] * 2 * fy * ty / tz**3
        )
    g_pos = g_t @ W

    # cov3d = M M^T, M = R diag(s)
    m = splats.rot * splats.scales[:, None, :]
    g_m = 2.0 * g_cov3 @ m
    g_rot = g_m * splats.scales[:, None, :]
    g_scales = np.einsum("nij,nij->nj", g_m, splats.rot)
    g_log_scales = g_scales * splats.scales
    g_qhat = _rot_vjp(splats.qhat, g_rot)
    # through q / |q|: project onto the tangent of the unit sphere
    radial = np.sum(g_qhat * splats.qhat, axis=1, keepdims=True)
    g_quats = (g_qhat - radial * splats.qhat) / splats.qnorm[:, None]
    g_pos[~valid] = 0.0
    g_log_scales[~valid] = 0.0
    g_quats[~valid] = 0.0
    return g_pos, g_log_scales, g_quats
