"""Differentiable Gaussian splatting on the CPU."""

from .cloud import GaussianCloud, export_points, logit, sigmoid
from .losses import LossWeights, loss_dssim, loss_l1, loss_mask_bce, loss_total
from .optim import LossTrace, OptimConfig, backward, optimize
from .project import Culled, covariance_3d, project_gaussian, project_gaussians
from .render import RenderedView, render, render_backward, render_with_state, support_of

__all__ = [
    "Culled",
    "GaussianCloud",
    "LossTrace",
    "LossWeights",
    "OptimConfig",
    "RenderedView",
    "backward",
    "covariance_3d",
    "export_points",
    "logit",
    "loss_dssim",
    "loss_l1",
    "loss_mask_bce",
    "loss_total",
    "optimize",
    "project_gaussian",
    "project_gaussians",
    "render",
    "render_backward",
    "render_with_state",
    "sigmoid",
    "support_of",
]
