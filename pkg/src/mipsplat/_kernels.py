"""Compiled per-pixel compositing loops.

Both kernels run in parallel over tiles. Every tile owns a disjoint block of
pixels and a disjoint slice of the (tile, splat) pair list, so results do not
depend on the thread count.
"""

import math
import warnings

import numpy as np
from numba import njit, prange

warnings.filterwarnings("ignore", message="The TBB threading layer")

# Layout of the per-pair gradient rows written by ``composite_backward``.
G_MEAN_X, G_MEAN_Y, G_CONIC_A, G_CONIC_B, G_CONIC_C, G_OPACITY = 0, 1, 2, 3, 4, 5
G_COLOR = 6
N_GRAD = 9


@njit(parallel=True, cache=True)
def composite_forward(means, conics, opacities, colors, tile_splats, tile_offsets,
                      tiles_x, width, height, tile_size, background, alpha_min, t_min):
    n_tiles = tile_offsets.shape[0] - 1
    image = np.zeros((height, width, 3))
    final_t = np.ones((height, width))
    n_end = np.zeros((height, width), dtype=np.int64)
    for ti in prange(n_tiles):
        tx = ti % tiles_x
        ty = ti // tiles_x
        start = tile_offsets[ti]
        end = tile_offsets[ti + 1]
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                fx = px + 0.5
                fy = py + 0.5
                t = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                last = start
                for k in range(start, end):
                    s = tile_splats[k]
                    dx = fx - means[s, 0]
                    dy = fy - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    if power > 0.0:
                        continue
                    a = opacities[s] * math.exp(power)
                    if a < alpha_min:
                        continue
                    w = a * t
                    r += colors[s, 0] * w
                    g += colors[s, 1] * w
                    b += colors[s, 2] * w
                    t *= 1.0 - a
                    last = k + 1
                    if t < t_min:
                        break
                image[py, px, 0] = r + t * background[0]
                image[py, px, 1] = g + t * background[1]
                image[py, px, 2] = b + t * background[2]
                final_t[py, px] = t
                n_end[py, px] = last
    return image, final_t, n_end


@njit(parallel=True, cache=True)
def composite_backward(means, conics, opacities, colors, tile_splats, tile_offsets,
                       tiles_x, width, height, tile_size, background, alpha_min,
                       n_end, grad_image, max_len):
    n_tiles = tile_offsets.shape[0] - 1
    grads = np.zeros((tile_splats.shape[0], N_GRAD))
    for ti in prange(n_tiles):
        alphas = np.empty(max_len)
        trans = np.empty(max_len)
        tx = ti % tiles_x
        ty = ti // tiles_x
        start = tile_offsets[ti]
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                end = n_end[py, px]
                if end <= start:
                    continue
                gr = grad_image[py, px, 0]
                gg = grad_image[py, px, 1]
                gb = grad_image[py, px, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                fx = px + 0.5
                fy = py + 0.5
                # replay the forward pass to recover alpha and transmittance
                t = 1.0
                for k in range(start, end):
                    s = tile_splats[k]
                    dx = fx - means[s, 0]
                    dy = fy - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    a = 0.0
                    if power <= 0.0:
                        a = opacities[s] * math.exp(power)
                        if a < alpha_min:
                            a = 0.0
                    alphas[k - start] = a
                    trans[k - start] = t
                    t *= 1.0 - a
                # walk back to front; (br, bgc, bb) is the color seen behind splat k
                br = background[0]
                bgc = background[1]
                bb = background[2]
                for k in range(end - 1, start - 1, -1):
                    a = alphas[k - start]
                    if a == 0.0:
                        continue
                    s = tile_splats[k]
                    tk = trans[k - start]
                    w = a * tk
                    grads[k, G_COLOR] += w * gr
                    grads[k, G_COLOR + 1] += w * gg
                    grads[k, G_COLOR + 2] += w * gb
                    cr = colors[s, 0]
                    cg = colors[s, 1]
                    cb = colors[s, 2]
                    dl_da = tk * (gr * (cr - br) + gg * (cg - bgc) + gb * (cb - bb))
                    br = cr * a + (1.0 - a) * br
                    bgc = cg * a + (1.0 - a) * bgc
                    bb = cb * a + (1.0 - a) * bb
                    dx = fx - means[s, 0]
                    dy = fy - means[s, 1]
                    c0 = conics[s, 0]
                    c1 = conics[s, 1]
                    c2 = conics[s, 2]
                    grads[k, G_OPACITY] += dl_da * (a / opacities[s])
                    dl_dpow = dl_da * a
                    grads[k, G_MEAN_X] += dl_dpow * (c0 * dx + c1 * dy)
                    grads[k, G_MEAN_Y] += dl_dpow * (c1 * dx + c2 * dy)
                    grads[k, G_CONIC_A] += -0.5 * dl_dpow * dx * dx
                    grads[k, G_CONIC_B] += -dl_dpow * dx * dy
                    grads[k, G_CONIC_C] += -0.5 * dl_dpow * dy * dy
    return grads
