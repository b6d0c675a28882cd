"""Per-tile compositing kernels.

Each tile owns a contiguous slice of the (tile, gaussian) pair list, so the
backward kernel writes per-pair partial gradients without contention. The
caller reduces pairs into per-gaussian sums in a fixed order. Pairs beyond
their (slightly padded) cutoff radius skip the exponential; the alpha test
that follows is what decides membership.
"""

import math

import numpy as np
from numba import njit, prange

ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


@njit(cache=True, parallel=True)
def composite_forward(width, height, tile, tiles_x, ranges, order, q_cut, means2d, conics, colors, opacity,
                      out_color, out_alpha):
    n_tiles = ranges.shape[0]
    for t in prange(n_tiles):
        x0 = (t % tiles_x) * tile
        y0 = (t // tiles_x) * tile
        start = ranges[t, 0]
        end = ranges[t, 1]
        for py in range(y0, min(y0 + tile, height)):
            for px in range(x0, min(x0 + tile, width)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                for k in range(start, end):
                    g = order[k]
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                    if q > q_cut[g]:
                        continue
                    a = opacity[g] * math.exp(-0.5 * q)
                    if a < ALPHA_MIN:
                        continue
                    w = a * T
                    c0 += colors[g, 0] * w
                    c1 += colors[g, 1] * w
                    c2 += colors[g, 2] * w
                    T *= 1.0 - a
                    if T < T_MIN:
                        break
                out_color[py, px, 0] = c0
                out_color[py, px, 1] = c1
                out_color[py, px, 2] = c2
                out_alpha[py, px] = 1.0 - T


@njit(cache=True, parallel=True)
def composite_backward(width, height, tile, tiles_x, ranges, order, q_cut, means2d, conics, colors, opacity,
                       grad_color, grad_alpha, g_mean, g_conic, g_color, g_opacity):
    """Accumulate dL/d(mean2d, conic, color, opacity) per pair slot ``k``.

    The conic gradient is taken w.r.t. (A, B, C) in q = A dx^2 + 2B dx dy + C dy^2.
    """
    n_tiles = ranges.shape[0]
    for t in prange(n_tiles):
        x0 = (t % tiles_x) * tile
        y0 = (t // tiles_x) * tile
        start = ranges[t, 0]
        end = ranges[t, 1]
        n = end - start
        if n == 0:
            continue
        slot = np.empty(n, dtype=np.int64)
        alpha = np.empty(n)
        trans = np.empty(n)
        for py in range(y0, min(y0 + tile, height)):
            for px in range(x0, min(x0 + tile, width)):
                gc0 = grad_color[py, px, 0]
                gc1 = grad_color[py, px, 1]
                gc2 = grad_color[py, px, 2]
                ga = grad_alpha[py, px]
                if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 and ga == 0.0:
                    continue
                # replay the forward pass to recover the contributor list
                T = 1.0
                m = 0
                for k in range(start, end):
                    g = order[k]
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                    if q > q_cut[g]:
                        continue
                    a = opacity[g] * math.exp(-0.5 * q)
                    if a < ALPHA_MIN:
                        continue
                    slot[m] = k
                    alpha[m] = a
                    trans[m] = T
                    m += 1
                    T *= 1.0 - a
                    if T < T_MIN:
                        break
                acc0 = 0.0
                acc1 = 0.0
                acc2 = 0.0
                behind = 1.0
                for j in range(m - 1, -1, -1):
                    k = slot[j]
                    g = order[k]
                    a = alpha[j]
                    Ti = trans[j]
                    w = a * Ti
                    g_color[k, 0] += gc0 * w
                    g_color[k, 1] += gc1 * w
                    g_color[k, 2] += gc2 * w
                    d_a = Ti * (gc0 * (colors[g, 0] - acc0) + gc1 * (colors[g, 1] - acc1)
                                + gc2 * (colors[g, 2] - acc2)) + ga * Ti * behind
                    acc0 = colors[g, 0] * a + (1.0 - a) * acc0
                    acc1 = colors[g, 1] * a + (1.0 - a) * acc1
                    acc2 = colors[g, 2] * a + (1.0 - a) * acc2
                    behind *= 1.0 - a
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    falloff = a / opacity[g]
                    g_opacity[k] += d_a * falloff
                    d_q = -0.5 * a * d_a
                    g_mean[k, 0] += d_q * -2.0 * (conics[g, 0] * dx + conics[g, 1] * dy)
                    g_mean[k, 1] += d_q * -2.0 * (conics[g, 1] * dx + conics[g, 2] * dy)
                    g_conic[k, 0] += d_q * dx * dx
                    g_conic[k, 1] += d_q * 2.0 * dx * dy
                    g_conic[k, 2] += d_q * dy * dy
