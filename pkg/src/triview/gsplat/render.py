from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import CameraPose
from .cloud import GaussianCloud
from .project import Splats, project_backward, project_gaussians
from .raster import rasterize_backward, rasterize_forward


@dataclass
class RenderedView:
    rgb: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)


@dataclass
class RenderState:
    """Everything the adjoint needs from a forward render."""

    pose: CameraPose
    splats: Splats
    order: np.ndarray
    sup_means: np.ndarray
    sup_radii: np.ndarray
    background: np.ndarray
    trans: np.ndarray
    last: np.ndarray  # per pixel, order index of the last contributing splat


@dataclass(frozen=True)
class Support:
    """Frozen pixel support and compositing order of a reference render."""

    order: np.ndarray
    means: np.ndarray
    radii: np.ndarray


def _pose_for(pose: CameraPose, image_size):
    if image_size is None:
        return pose
    w, h = image_size
    if (w, h) == (pose.intrinsic.width, pose.intrinsic.height):
        return pose
    return pose.resized(w, h)


def depth_order(splats: Splats):
    """Valid splat indices sorted by (depth, insertion index)."""
    idx = np.flatnonzero(splats.valid)
    return idx[np.argsort(splats.depths[idx], kind="stable")].astype(np.int64)


def render_with_state(cloud: GaussianCloud, pose: CameraPose, image_size=None, background=(1.0, 1.0, 1.0), support=None):
    pose = _pose_for(pose, image_size)
    k = pose.intrinsic
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    splats = project_gaussians(cloud, pose)
    if support is None:
        order = depth_order(splats)
        sup_means, sup_radii = splats.means2d, splats.radii
    else:
        order, sup_means, sup_radii = support.order, support.means, support.radii
    rgb, trans, last = rasterize_forward(
        order, splats.means2d, splats.conics, splats.opacities, splats.colors,
        sup_means, sup_radii, bg, k.width, k.height,
    )
    view = RenderedView(rgb, 1.0 - trans)
    return view, RenderState(pose, splats, order, sup_means, sup_radii, bg, trans, last)


def render(cloud: GaussianCloud, pose: CameraPose, image_size=None, background=(1.0, 1.0, 1.0)) -> RenderedView:
    """Alpha-composite the cloud front to back; ``image_size`` is (width,
    height) and rescales the pose's intrinsics when it differs."""
    return render_with_state(cloud, pose, image_size, background)[0]


def support_of(state: RenderState) -> Support:
    return Support(state.order.copy(), state.sup_means.copy(), state.sup_radii.copy())


def render_backward(state: RenderState, g_rgb, g_alpha):
    """Gradients of a scalar w.r.t. every cloud parameter, given dL/drgb and
    dL/dalpha for this render."""
    s = state.splats
    g_means, g_conics, g_opac, g_colors = rasterize_backward(
        state.order, s.means2d, s.conics, s.opacities, s.colors,
        state.sup_means, state.sup_radii, state.background, state.trans, state.last,
        np.ascontiguousarray(g_rgb, dtype=np.float64), np.ascontiguousarray(g_alpha, dtype=np.float64),
    )
    g_pos, g_log_scales, g_quats = project_backward(s, state.pose, g_means, g_conics)
    g_logits = g_opac * s.opacities * (1.0 - s.opacities)
    return {
        "positions": g_pos,
        "log_scales": g_log_scales,
        "quats": g_quats,
        "opacity_logits": g_logits,
        "colors": g_colors,
    }
