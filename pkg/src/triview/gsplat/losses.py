"""Image losses with their exact gradients.

Each ``*_grad`` function returns ``(value, d value / d x)`` for the rendered
argument; the reference is treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..errors import DimMismatch, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2
BCE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_mask: float = 1.0

    def __post_init__(self):
        for name in ("lambda_ssim", "lambda_mask"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _gauss_1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


_KERNEL = _gauss_1d()
_HALF = SSIM_WINDOW // 2


def _check(x, ref):
    if x.shape != ref.shape:
        raise DimMismatch(f"{x.shape} vs {ref.shape}")


def _filter(img):
    k = _KERNEL
    return cv2.sepFilter2D(img, cv2.CV_64F, k, k, borderType=cv2.BORDER_CONSTANT)


def _filter_valid(img):
    """Separable Gaussian correlation keeping only fully covered positions."""
    return _filter(np.ascontiguousarray(img, dtype=np.float64))[_HALF:-_HALF, _HALF:-_HALF]


def _filter_valid_adjoint(grad, shape):
    # the kernel is symmetric, so the adjoint is the same zero-padded filter
    full = np.zeros(shape)
    full[_HALF:-_HALF, _HALF:-_HALF] = grad
    return _filter(full)


def loss_l1_grad(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check(x, ref)
    diff = x - ref
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def loss_l1(x, ref):
    return loss_l1_grad(x, ref)[0]


def _ssim_channel(x, y, want_grad):
    mx, my = _filter_valid(x), _filter_valid(y)
    exx, eyy, exy = _filter_valid(x * x), _filter_valid(y * y), _filter_valid(x * y)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    a1 = 2 * mx * my + C1
    a2 = 2 * cxy + C2
    b1 = mx * mx + my * my + C1
    b2 = vx + vy + C2
    smap = (a1 * a2) / (b1 * b2)
    if not want_grad:
        return smap, None
    # partials of the map w.r.t. the filtered statistics of x
    d_exx = -smap / b2
    d_exy = 2 * a1 / (b1 * b2)
    d_mx = 2 * my * a2 / (b1 * b2) - 2 * mx * smap / b1 - 2 * my * a1 / (b1 * b2) + 2 * mx * smap / b2
    return smap, (d_mx, d_exx, d_exy)


def _as_channels(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def loss_dssim_grad(x, ref, want_grad=True):
    """1 - mean SSIM (11x11 Gaussian window, sigma 1.5), per channel."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check(x, ref)
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise TooSmall(f"image {x.shape[:2]} is smaller than the {SSIM_WINDOW}px SSIM window")
    xc, rc = _as_channels(x), _as_channels(ref)
    nch = xc.shape[2]
    total = 0.0
    grad = np.zeros_like(xc) if want_grad else None
    for ch in range(nch):
        smap, parts = _ssim_channel(xc[..., ch], rc[..., ch], want_grad)
        total += smap.mean()
        if want_grad:
            scale = -1.0 / (smap.size * nch)
            d_mx, d_exx, d_exy = (p * scale for p in parts)
            shape = xc.shape[:2]
            grad[..., ch] = (
                _filter_valid_adjoint(d_mx, shape)
                + 2 * xc[..., ch] * _filter_valid_adjoint(d_exx, shape)
                + rc[..., ch] * _filter_valid_adjoint(d_exy, shape)
            )
    value = 1.0 - total / nch
    if want_grad:
        grad = grad.reshape(x.shape)
    return float(value), grad


def loss_dssim(x, ref):
    return loss_dssim_grad(x, ref, want_grad=False)[0]


def loss_mask_bce_grad(m, ref):
    m = np.asarray(m, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check(m, ref)
    mc = np.clip(m, BCE_EPS, 1.0 - BCE_EPS)
    per_px = -(ref * np.log(mc) + (1.0 - ref) * np.log1p(-mc))
    inside = (m > BCE_EPS) & (m < 1.0 - BCE_EPS)
    grad = np.where(inside, (-ref / mc + (1.0 - ref) / (1.0 - mc)), 0.0) / m.size
    return float(per_px.mean()), grad


def loss_mask_bce(m, ref):
    return loss_mask_bce_grad(m, ref)[0]


def loss_total_grad(x, x_ref, m, m_ref, w: LossWeights = LossWeights()):
    """(1 - ls) L1 + ls D-SSIM + lm BCE; returns (total, parts, dx, dm)."""
    l1, g1 = loss_l1_grad(x, x_ref)
    if w.lambda_ssim > 0:
        ds, gs = loss_dssim_grad(x, x_ref)
    else:
        ds, gs = loss_dssim(x, x_ref), 0.0
    bce, gm = loss_mask_bce_grad(m, m_ref)
    total = (1.0 - w.lambda_ssim) * l1 + w.lambda_ssim * ds + w.lambda_mask * bce
    gx = (1.0 - w.lambda_ssim) * g1 + w.lambda_ssim * gs
    parts = {"l1": l1, "dssim": ds, "bce": bce, "total": total}
    return total, parts, gx, w.lambda_mask * gm


def loss_total(x, x_ref, m, m_ref, w: LossWeights = LossWeights()):
    l1 = loss_l1(x, x_ref)
    ds = loss_dssim(x, x_ref)
    bce = loss_mask_bce(m, m_ref)
    return (1.0 - w.lambda_ssim) * l1 + w.lambda_ssim * ds + w.lambda_mask * bce
