"""Numba kernels for tile binning and front-to-back compositing.

Splats are given as flat arrays: ``means2d`` (M, 2), ``conics`` (M, 3) holding
the upper triangle ``(a, b, c)`` of the inverse screen covariance, ``colors``
(M, 3) and ``alphas`` (M,). Tiles are independent work units; every write
inside the tile loop targets memory owned by that tile, so the output does
not depend on the thread count.
"""
import math
import os

import numba
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

TILE = 16
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


def tile_grid(width, height):
    return (width + TILE - 1) // TILE, (height + TILE - 1) // TILE


def bin_splats(means2d, extents, depths, width, height):
    """Duplicate splats per overlapped tile and sort by ``(tile, depth, index)``.

    Returns ``(order, ranges)``: ``order[k]`` is the splat index of the k-th
    sorted instance and ``ranges[tile]`` its ``[start, end)`` slice.
    """
    tx, ty = tile_grid(width, height)
    m = len(depths)
    if m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((tx * ty, 2), dtype=np.int64)
    u, v = means2d[:, 0], means2d[:, 1]
    x0 = np.clip(np.floor((u - extents) / TILE), 0, tx - 1).astype(np.int64)
    x1 = np.clip(np.floor((u + extents) / TILE), 0, tx - 1).astype(np.int64)
    y0 = np.clip(np.floor((v - extents) / TILE), 0, ty - 1).astype(np.int64)
    y1 = np.clip(np.floor((v + extents) / TILE), 0, ty - 1).astype(np.int64)
    # splats whose box lies fully outside the grid touch no tile
    outside = (u + extents < 0) | (u - extents > tx * TILE - 1) | (v + extents < 0) | (v - extents > ty * TILE - 1)
    nx = np.where(outside, 0, x1 - x0 + 1)
    ny = np.where(outside, 0, y1 - y0 + 1)
    counts = nx * ny
    total = int(counts.sum())
    splat = np.repeat(np.arange(m, dtype=np.int64), counts)
    offset = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    nxr = np.repeat(nx, counts)
    tiles = (np.repeat(y0, counts) + offset // np.maximum(nxr, 1)) * tx + np.repeat(x0, counts) + offset % np.maximum(nxr, 1)
    sort = np.lexsort((splat, depths[splat], tiles))
    tiles = tiles[sort]
    order = splat[sort]
    ids = np.arange(tx * ty)
    ranges = np.stack([np.searchsorted(tiles, ids, "left"), np.searchsorted(tiles, ids, "right")], axis=1)
    return order, ranges.astype(np.int64)


@numba.njit(parallel=True, cache=True)
def composite_forward(order, ranges, means2d, conics, colors, alphas, bg, width, height):
    tx = (width + TILE - 1) // TILE
    rgb = np.empty((height, width, 3))
    trans = np.empty((height, width))
    last = np.empty((height, width), dtype=np.int64)
    count = np.zeros((height, width), dtype=np.int64)
    for tile in numba.prange(ranges.shape[0]):
        start = ranges[tile, 0]
        end = ranges[tile, 1]
        ty0 = (tile // tx) * TILE
        tx0 = (tile % tx) * TILE
        for py in range(ty0, min(ty0 + TILE, height)):
            for px in range(tx0, min(tx0 + TILE, width)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                stop = start
                n = 0
                for k in range(start, end):
                    i = order[k]
                    dx = px - means2d[i, 0]
                    dy = py - means2d[i, 1]
                    power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
                    if power > 0.0:
                        continue
                    a = alphas[i] * math.exp(power)
                    if a < ALPHA_MIN:
                        continue
                    test_T = T * (1.0 - a)
                    if test_T < T_MIN:
                        break
                    c0 += colors[i, 0] * a * T
                    c1 += colors[i, 1] * a * T
                    c2 += colors[i, 2] * a * T
                    T = test_T
                    n += 1
                    stop = k + 1
                rgb[py, px, 0] = c0 + T * bg[0]
                rgb[py, px, 1] = c1 + T * bg[1]
                rgb[py, px, 2] = c2 + T * bg[2]
                trans[py, px] = T
                last[py, px] = stop
                count[py, px] = n
    return rgb, trans, last, count


@numba.njit(parallel=True, cache=True)
def composite_backward(order, ranges, last, means2d, conics, colors, alphas, bg, grad_rgb, width, height):
    """Per-instance gradients, columns: du, dv, da, db, dc, dr, dg, db_, dalpha."""
    tx = (width + TILE - 1) // TILE
    inst = np.zeros((order.shape[0], 9))
    for tile in numba.prange(ranges.shape[0]):
        start = ranges[tile, 0]
        end = ranges[tile, 1]
        if end == start:
            continue
        ty0 = (tile // tx) * TILE
        tx0 = (tile % tx) * TILE
        buf_k = np.empty(end - start, dtype=np.int64)
        buf_T = np.empty(end - start)
        buf_a = np.empty(end - start)
        for py in range(ty0, min(ty0 + TILE, height)):
            for px in range(tx0, min(tx0 + TILE, width)):
                g0 = grad_rgb[py, px, 0]
                g1 = grad_rgb[py, px, 1]
                g2 = grad_rgb[py, px, 2]
                T = 1.0
                n = 0
                for k in range(start, last[py, px]):
                    i = order[k]
                    dx = px - means2d[i, 0]
                    dy = py - means2d[i, 1]
                    power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
                    if power > 0.0:
                        continue
                    a = alphas[i] * math.exp(power)
                    if a < ALPHA_MIN:
                        continue
                    buf_k[n] = k
                    buf_T[n] = T
                    buf_a[n] = a
                    T = T * (1.0 - a)
                    n += 1
                # suffix = colour composited behind the current splat, incl. background
                s0 = T * bg[0]
                s1 = T * bg[1]
                s2 = T * bg[2]
                for j in range(n - 1, -1, -1):
                    k = buf_k[j]
                    i = order[k]
                    Tj = buf_T[j]
                    a = buf_a[j]
                    w = a * Tj
                    inst[k, 5] += g0 * w
                    inst[k, 6] += g1 * w
                    inst[k, 7] += g2 * w
                    inv = 1.0 / (1.0 - a)
                    d_a = (g0 * (colors[i, 0] * Tj - s0 * inv)
                           + g1 * (colors[i, 1] * Tj - s1 * inv)
                           + g2 * (colors[i, 2] * Tj - s2 * inv))
                    s0 += colors[i, 0] * w
                    s1 += colors[i, 1] * w
                    s2 += colors[i, 2] * w
                    dx = px - means2d[i, 0]
                    dy = py - means2d[i, 1]
                    gauss = a / alphas[i]
                    inst[k, 8] += d_a * gauss
                    d_power = d_a * a
                    ca = conics[i, 0]
                    cb = conics[i, 1]
                    cc = conics[i, 2]
                    inst[k, 0] += d_power * (ca * dx + cb * dy)
                    inst[k, 1] += d_power * (cb * dx + cc * dy)
                    inst[k, 2] += d_power * (-0.5 * dx * dx)
                    inst[k, 3] += d_power * (-dx * dy)
                    inst[k, 4] += d_power * (-0.5 * dy * dy)
    return inst


@numba.njit(cache=True)
def reduce_instances(order, inst, m):
    out = np.zeros((m, inst.shape[1]))
    for k in range(order.shape[0]):
        out[order[k]] += inst[k]
    return out
