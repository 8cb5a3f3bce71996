"""Splat-major compositing kernels.

Splats are visited in ascending depth order; every pixel therefore sees its
contributors front to back, exactly as a per-pixel loop would. The adjoint
walks the same order backwards and recovers each transmittance by division,
accumulating per-splat gradients in a fixed order (bit-reproducible).

Support is the disk of radius ``sup_radii[i]`` around ``sup_means[i]``. It is
passed separately from the means used for evaluation so that callers can hold
the pixel support fixed, e.g. for finite-difference checks.

A pixel stops accepting splats once its transmittance falls below
``T_MIN``; the index of its last contributor is kept so the adjoint skips
exactly the same splats.
"""

import math

import numpy as np
from numba import njit

ALPHA_MAX = 0.99
T_MIN = 1e-4


@njit(cache=True, fastmath=True)
def _span(c, r, size):
    lo = int(math.ceil(c - r))
    hi = int(math.floor(c + r))
    if lo < 0:
        lo = 0
    if hi > size - 1:
        hi = size - 1
    return lo, hi


@njit(cache=True, fastmath=True)
def _row(sx, rem, x0, x1):
    """Pixel columns of one disk row, clipped to [x0, x1]; empty if rem < 0."""
    if rem < 0.0:
        return 1, 0
    half = math.sqrt(rem)
    xa = int(math.ceil(sx - half))
    xb = int(math.floor(sx + half))
    if xa < x0:
        xa = x0
    if xb > x1:
        xb = x1
    return xa, xb


@njit(cache=True, fastmath=True)
def rasterize_forward(order, means, conics, opac, colors, sup_means, sup_radii, bg, width, height):
    rgb = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    last = np.full((height, width), -1, dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        r = sup_radii[i]
        if r <= 0.0:
            continue
        sx, sy = sup_means[i, 0], sup_means[i, 1]
        x0, x1 = _span(sx, r, width)
        y0, y1 = _span(sy, r, height)
        if x0 > x1 or y0 > y1:
            continue
        u, v = means[i, 0], means[i, 1]
        ca, cb, cc = conics[i, 0], conics[i, 1], conics[i, 2]
        o = opac[i]
        r2 = r * r
        for y in range(y0, y1 + 1):
            ey = y - sy
            dy = y - v
            xa, xb = _row(sx, r2 - ey * ey, x0, x1)
            for x in range(xa, xb + 1):
                t = trans[y, x]
                if t < T_MIN:
                    continue
                dx = x - u
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                a = o * math.exp(-0.5 * q)
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                last[y, x] = k
                w = a * t
                rgb[y, x, 0] += colors[i, 0] * w
                rgb[y, x, 1] += colors[i, 1] * w
                rgb[y, x, 2] += colors[i, 2] * w
                trans[y, x] = t * (1.0 - a)
    for y in range(height):
        for x in range(width):
            t = trans[y, x]
            rgb[y, x, 0] += bg[0] * t
            rgb[y, x, 1] += bg[1] * t
            rgb[y, x, 2] += bg[2] * t
    return rgb, trans, last


@njit(cache=True, fastmath=True)
def rasterize_backward(order, means, conics, opac, colors, sup_means, sup_radii, bg, trans_final, last, g_rgb, g_alpha):
    height, width = trans_final.shape
    n = means.shape[0]
    g_means = np.zeros((n, 2))
    g_conics = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_colors = np.zeros((n, 3))
    t_cur = trans_final.copy()
    behind = np.empty((height, width, 3))
    for y in range(height):
        for x in range(width):
            for ch in range(3):
                behind[y, x, ch] = bg[ch] * trans_final[y, x]
    for k in range(order.shape[0] - 1, -1, -1):
        i = order[k]
        r = sup_radii[i]
        if r <= 0.0:
            continue
        sx, sy = sup_means[i, 0], sup_means[i, 1]
        x0, x1 = _span(sx, r, width)
        y0, y1 = _span(sy, r, height)
        if x0 > x1 or y0 > y1:
            continue
        u, v = means[i, 0], means[i, 1]
        ca, cb, cc = conics[i, 0], conics[i, 1], conics[i, 2]
        o = opac[i]
        c0, c1, c2 = colors[i, 0], colors[i, 1], colors[i, 2]
        r2 = r * r
        gu = 0.0
        gv = 0.0
        gca = 0.0
        gcb = 0.0
        gcc = 0.0
        go = 0.0
        gc0 = 0.0
        gc1 = 0.0
        gc2 = 0.0
        for y in range(y0, y1 + 1):
            ey = y - sy
            dy = y - v
            xa, xb = _row(sx, r2 - ey * ey, x0, x1)
            for x in range(xa, xb + 1):
                if k > last[y, x]:
                    continue
                dx = x - u
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                g = math.exp(-0.5 * q)
                a = o * g
                clamped = a > ALPHA_MAX
                if clamped:
                    a = ALPHA_MAX
                inv = 1.0 / (1.0 - a)
                t_i = t_cur[y, x] * inv
                w = a * t_i
                gr0 = g_rgb[y, x, 0]
                gr1 = g_rgb[y, x, 1]
                gr2 = g_rgb[y, x, 2]
                gc0 += gr0 * w
                gc1 += gr1 * w
                gc2 += gr2 * w
                d_a = (
                    gr0 * (c0 * t_i - behind[y, x, 0] * inv)
                    + gr1 * (c1 * t_i - behind[y, x, 1] * inv)
                    + gr2 * (c2 * t_i - behind[y, x, 2] * inv)
                    + g_alpha[y, x] * trans_final[y, x] * inv
                )
                behind[y, x, 0] += c0 * w
                behind[y, x, 1] += c1 * w
                behind[y, x, 2] += c2 * w
                t_cur[y, x] = t_i
                if not clamped:
                    go += d_a * g
                    d_q = -0.5 * g * o * d_a
                    gu += d_q * (-2.0) * (ca * dx + cb * dy)
                    gv += d_q * (-2.0) * (cb * dx + cc * dy)
                    gca += d_q * dx * dx
                    gcb += d_q * 2.0 * dx * dy
                    gcc += d_q * dy * dy
        g_means[i, 0] = gu
        g_means[i, 1] = gv
        g_conics[i, 0] = gca
        g_conics[i, 1] = gcb
        g_conics[i, 2] = gcc
        g_opac[i] = go
        g_colors[i, 0] = gc0
        g_colors[i, 1] = gc1
        g_colors[i, 2] = gc2
    return g_means, g_conics, g_opac, g_colors
