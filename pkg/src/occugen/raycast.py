"""Amanatides-Woo voxel traversal kernels.

All kernels work in voxel units relative to a dense array: a point ``p``
lives in cell ``floor(p)``, and directions are unit vectors (the lattice is
isotropic, so a unit world direction is a unit voxel direction).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_INF = np.inf


@njit(cache=True)
def _init_axis(o, d):
    i = math.floor(o)
    if d > 0.0:
        return i, 1, (i + 1.0 - o) / d, 1.0 / d
    if d < 0.0:
        return i, -1, (o - i) / -d, -1.0 / d
    return i, 0, _INF, _INF


@njit(cache=True)
def _cast_one(grid, blocking, o, d, max_t, out):
    """Walk one ray. Writes traversed cells to ``out``.

    Returns (n_traversed, hit, hit_t, hx, hy, hz). A cell is traversed when
    its entry parameter is below ``max_t``; the first blocking cell is the
    hit and is not listed as traversed. Leaving the array ends the ray.
    """
    nx, ny, nz = grid.shape
    ix, sx, tx, dtx = _init_axis(o[0], d[0])
    iy, sy, ty, dty = _init_axis(o[1], d[1])
    iz, sz, tz, dtz = _init_axis(o[2], d[2])
    t = 0.0
    n = 0
    while True:
        if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz:
            return n, False, t, ix, iy, iz
        if t >= max_t:
            return n, False, t, ix, iy, iz
        if blocking[grid[ix, iy, iz]]:
            return n, True, t, ix, iy, iz
        if n < out.shape[0]:
            out[n, 0] = ix
            out[n, 1] = iy
            out[n, 2] = iz
        n += 1
        if tx < ty:
            if tx < tz:
                ix += sx
                t = tx
                tx += dtx
            else:
                iz += sz
                t = tz
                tz += dtz
        else:
            if ty < tz:
                iy += sy
                t = ty
                ty += dty
            else:
                iz += sz
                t = tz
                tz += dtz


def ray_capacity(max_t: float) -> int:
    return int(3 * (math.ceil(max_t) + 2)) + 3


@njit(cache=True)
def cast_rays(grid, blocking, origins, dirs, max_t, cap):
    """Batch traversal. Returns counts, cells (R, cap, 3), hit, hit_t, hit_cells."""
    r = dirs.shape[0]
    counts = np.zeros(r, np.int64)
    cells = np.empty((r, cap, 3), np.int64)
    hit = np.zeros(r, np.bool_)
    hit_t = np.full(r, np.inf)
    hit_cells = np.full((r, 3), -1, np.int64)
    for q in range(r):
        n, h, t, hx, hy, hz = _cast_one(grid, blocking, origins[q], dirs[q], max_t, cells[q])
        counts[q] = n
        if h:
            hit[q] = True
            hit_t[q] = t
            hit_cells[q, 0] = hx
            hit_cells[q, 1] = hy
            hit_cells[q, 2] = hz
    return counts, cells, hit, hit_t, hit_cells


@njit(cache=True)
def count_unknown(state, origins, dirs, max_t):
    """Unique unknown (state 0) cells seen from each origin before occupied (2) cells."""
    nx, ny, nz = state.shape
    stamp = np.zeros(state.shape, np.int32)
    counts = np.zeros(origins.shape[0], np.int64)
    for v in range(origins.shape[0]):
        mark = v + 1
        o = origins[v]
        total = 0
        for q in range(dirs.shape[0]):
            d = dirs[q]
            ix, sx, tx, dtx = _init_axis(o[0], d[0])
            iy, sy, ty, dty = _init_axis(o[1], d[1])
            iz, sz, tz, dtz = _init_axis(o[2], d[2])
            t = 0.0
            while True:
                if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz:
                    break
                if t >= max_t:
                    break
                s = state[ix, iy, iz]
                if s == 2:
                    break
                if s == 0 and stamp[ix, iy, iz] != mark:
                    stamp[ix, iy, iz] = mark
                    total += 1
                if tx < ty:
                    if tx < tz:
                        ix += sx
                        t = tx
                        tx += dtx
                    else:
                        iz += sz
                        t = tz
                        tz += dtz
                else:
                    if ty < tz:
                        iy += sy
                        t = ty
                        ty += dty
                    else:
                        iz += sz
                        t = tz
                        tz += dtz
        counts[v] = total
    return counts
