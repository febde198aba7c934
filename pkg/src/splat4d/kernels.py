"""Numba kernels for the tile rasterizer.

Each kernel processes a contiguous range of tiles and only writes pixels
owned by those tiles plus per-(tile, splat) pair slots, so running tile
ranges on several threads is bit-identical to a serial pass.  Per-Gaussian
reductions happen outside the kernels in fixed pair order.

Pixel centers sit at half-integer coordinates.  `conic` rows are (A, B, C)
of the inverse 2D covariance; the falloff exponent is
-(A dx^2 + 2 B dx dy + C dy^2) / 2.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TILE = 16
ALPHA_CLAMP = 0.99


@njit(nogil=True, cache=True)
def forward_range(tile_lo, tile_hi, tile_offsets, pair_splat,
                  means, conics, colors, opacities, skip_power,
                  width, height, tiles_x, bg,
                  alpha_min, t_stop,
                  image, final_t, n_contrib, pair_wsum):
    for tid in range(tile_lo, tile_hi):
        start = tile_offsets[tid]
        end = tile_offsets[tid + 1]
        tx = tid % tiles_x
        ty = tid // tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        for py in range(y0, y1):
            pyc = py + 0.5
            for px in range(x0, x1):
                pxc = px + 0.5
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                last = 0
                for k in range(start, end):
                    s = pair_splat[k]
                    dx = pxc - means[s, 0]
                    dy = pyc - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                        - conics[s, 1] * dx * dy
                    if power > 0.0 or power < skip_power[s]:
                        # below skip_power, alpha = o * exp(power) < alpha_min
                        continue
                    alpha = opacities[s] * np.exp(power)
                    if alpha > ALPHA_CLAMP:
                        alpha = ALPHA_CLAMP
                    if alpha < alpha_min:
                        continue
                    w = T * alpha
                    r += w * colors[s, 0]
                    g += w * colors[s, 1]
                    b += w * colors[s, 2]
                    pair_wsum[k] += w
                    T *= 1.0 - alpha
                    last = k - start + 1
                    if T < t_stop:
                        break
                image[py, px, 0] = r + T * bg[0]
                image[py, px, 1] = g + T * bg[1]
                image[py, px, 2] = b + T * bg[2]
                final_t[py, px] = T
                n_contrib[py, px] = last


@njit(nogil=True, cache=True)
def backward_range(tile_lo, tile_hi, tile_offsets, pair_splat,
                   means, conics, colors, opacities, skip_power,
                   width, height, tiles_x, bg,
                   alpha_min,
                   d_image, final_t, n_contrib,
                   pair_dmean, pair_dconic, pair_dcolor, pair_dopac):
    for tid in range(tile_lo, tile_hi):
        start = tile_offsets[tid]
        tx = tid % tiles_x
        ty = tid // tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        for py in range(y0, y1):
            pyc = py + 0.5
            for px in range(x0, x1):
                pxc = px + 0.5
                last = n_contrib[py, px]
                if last == 0:
                    continue
                gr = d_image[py, px, 0]
                gg = d_image[py, px, 1]
                gb = d_image[py, px, 2]
                T = final_t[py, px]
                # colors already accumulated behind the current splat,
                # seeded with the background term T_final * bg
                sr = T * bg[0]
                sg = T * bg[1]
                sb = T * bg[2]
                for k in range(start + last - 1, start - 1, -1):
                    s = pair_splat[k]
                    dx = pxc - means[s, 0]
                    dy = pyc - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                        - conics[s, 1] * dx * dy
                    if power > 0.0 or power < skip_power[s]:
                        continue
                    G = np.exp(power)
                    alpha = opacities[s] * G
                    clamped = alpha > ALPHA_CLAMP
                    if clamped:
                        alpha = ALPHA_CLAMP
                    if alpha < alpha_min:
                        continue
                    T = T / (1.0 - alpha)  # transmittance in front of splat k
                    w = T * alpha
                    pair_dcolor[k, 0] += w * gr
                    pair_dcolor[k, 1] += w * gg
                    pair_dcolor[k, 2] += w * gb
                    # d C / d alpha = T c_k - S / (1 - alpha)
                    inv1a = 1.0 / (1.0 - alpha)
                    d_alpha = (T * colors[s, 0] - sr * inv1a) * gr \
                        + (T * colors[s, 1] - sg * inv1a) * gg \
                        + (T * colors[s, 2] - sb * inv1a) * gb
                    sr += w * colors[s, 0]
                    sg += w * colors[s, 1]
                    sb += w * colors[s, 2]
                    if clamped:
                        continue  # alpha pinned at 0.99: no gradient inflow
                    pair_dopac[k] += d_alpha * G
                    dG = d_alpha * opacities[s] * G
                    # power = -(A dx^2 + 2 B dx dy + C dy^2)/2
                    pair_dconic[k, 0] += dG * (-0.5 * dx * dx)
                    pair_dconic[k, 1] += dG * (-dx * dy)
                    pair_dconic[k, 2] += dG * (-0.5 * dy * dy)
                    # d power / d mean = (A dx + B dy, B dx + C dy)
                    pair_dmean[k, 0] += dG * (conics[s, 0] * dx + conics[s, 1] * dy)
                    pair_dmean[k, 1] += dG * (conics[s, 1] * dx + conics[s, 2] * dy)


@njit(nogil=True, cache=True)
def backtrack_range(tile_lo, tile_hi, tile_offsets, pair_splat,
                    means, conics, opacities, skip_power,
                    width, height, tiles_x,
                    alpha_min, t_stop, error_map,
                    pair_err, pair_w):
    """Accumulate blending-weighted per-pixel error per (tile, splat) pair.

    Walks the identical compositing order as the forward pass; pair_w ends
    up equal to the forward pair_wsum and is kept for self-containment.
    """
    for tid in range(tile_lo, tile_hi):
        start = tile_offsets[tid]
        end = tile_offsets[tid + 1]
        tx = tid % tiles_x
        ty = tid // tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        for py in range(y0, y1):
            pyc = py + 0.5
            for px in range(x0, x1):
                pxc = px + 0.5
                q = error_map[py, px]
                T = 1.0
                for k in range(start, end):
                    s = pair_splat[k]
                    dx = pxc - means[s, 0]
                    dy = pyc - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                        - conics[s, 1] * dx * dy
                    if power > 0.0 or power < skip_power[s]:
                        continue
                    alpha = opacities[s] * np.exp(power)
                    if alpha > ALPHA_CLAMP:
                        alpha = ALPHA_CLAMP
                    if alpha < alpha_min:
                        continue
                    w = T * alpha
                    pair_err[k] += w * q
                    pair_w[k] += w
                    T *= 1.0 - alpha
                    if T < t_stop:
                        break
