"""Numba-jitted implementations of the hot geometry kernels.

Arithmetic mirrors `segboost.kernels._numpy_impl` exactly (same float64
expressions, same rounding) so both backends return identical arrays.
"""

import math

import numpy as np
from numba import njit

BACKEND = "numba"


@njit(cache=True)
def star_dists(labels, dirs_y, dirs_x, max_steps):
    h, w = labels.shape
    n_rays = dirs_y.shape[0]
    out = np.zeros((h, w, n_rays), dtype=np.float32)
    for y in range(h):
        for x in range(w):
            own = labels[y, x]
            if own == 0:
                continue
            for k in range(n_rays):
                d = float(max_steps)
                for t in range(1, max_steps + 1):
                    py = int(math.floor(y + t * dirs_y[k] + 0.5))
                    px = int(math.floor(x + t * dirs_x[k] + 0.5))
                    if py < 0 or py >= h or px < 0 or px >= w or labels[py, px] != own:
                        d = float(t)
                        break
                out[y, x, k] = d
    return out


@njit(cache=True)
def three_class_map(labels):
    h, w = labels.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            own = labels[y, x]
            if own == 0:
                continue
            cls = np.uint8(1)
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    if dy == 0 and dx == 0:
                        continue
                    ny = y + dy
                    nx = x + dx
                    if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] != own:
                        cls = np.uint8(2)
            out[y, x] = cls
    return out


@njit(cache=True)
def _point_in_polygon(vy, vx, py, px):
    inside = False
    n = vy.shape[0]
    j = n - 1
    for i in range(n):
        if (vy[i] > py) != (vy[j] > py):
            xc = (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i]
            if px < xc:
                inside = not inside
        j = i
    return inside


@njit(cache=True)
def prep_polygon_masks(ys, xs, dists, dirs_y, dirs_x, h, w):
    n = ys.shape[0]
    n_rays = dirs_y.shape[0]
    y0s = np.zeros(n, dtype=np.int64)
    x0s = np.zeros(n, dtype=np.int64)
    hs = np.zeros(n, dtype=np.int64)
    ws = np.zeros(n, dtype=np.int64)
    offs = np.zeros(n + 1, dtype=np.int64)
    vys = np.zeros((n, n_rays), dtype=np.float64)
    vxs = np.zeros((n, n_rays), dtype=np.float64)
    for c in range(n):
        miny = 1e300
        maxy = -1e300
        minx = 1e300
        maxx = -1e300
        for k in range(n_rays):
            vy = ys[c] + dists[c, k] * dirs_y[k]
            vx = xs[c] + dists[c, k] * dirs_x[k]
            vys[c, k] = vy
            vxs[c, k] = vx
            if vy < miny:
                miny = vy
            if vy > maxy:
                maxy = vy
            if vx < minx:
                minx = vx
            if vx > maxx:
                maxx = vx
        y0 = max(0, int(math.floor(miny)))
        y1 = min(h - 1, int(math.ceil(maxy)))
        x0 = max(0, int(math.floor(minx)))
        x1 = min(w - 1, int(math.ceil(maxx)))
        hh = max(0, y1 - y0 + 1)
        ww = max(0, x1 - x0 + 1)
        y0s[c] = y0
        x0s[c] = x0
        hs[c] = hh
        ws[c] = ww
        offs[c + 1] = offs[c] + hh * ww
    flat = np.zeros(offs[n], dtype=np.bool_)
    for c in range(n):
        base = offs[c]
        for iy in range(hs[c]):
            py = y0s[c] + iy
            row = base + iy * ws[c]
            for ix in range(ws[c]):
                px = x0s[c] + ix
                flat[row + ix] = _point_in_polygon(vys[c], vxs[c], py, px)
    return y0s, x0s, hs, ws, offs, flat


@njit(cache=True)
def nms_keep(y0s, x0s, hs, ws, offs, flat, iou_threshold):
    n = y0s.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    areas = np.zeros(n, dtype=np.int64)
    for c in range(n):
        s = 0
        for i in range(offs[c], offs[c + 1]):
            if flat[i]:
                s += 1
        areas[c] = s
    for c in range(n):
        ok = True
        for a in range(c):
            if not keep[a]:
                continue
            oy0 = max(y0s[c], y0s[a])
            oy1 = min(y0s[c] + hs[c], y0s[a] + hs[a]) - 1
            ox0 = max(x0s[c], x0s[a])
            ox1 = min(x0s[c] + ws[c], x0s[a] + ws[a]) - 1
            if oy1 < oy0 or ox1 < ox0:
                continue
            inter = 0
            for py in range(oy0, oy1 + 1):
                rc = offs[c] + (py - y0s[c]) * ws[c] - x0s[c]
                ra = offs[a] + (py - y0s[a]) * ws[a] - x0s[a]
                for px in range(ox0, ox1 + 1):
                    if flat[rc + px] and flat[ra + px]:
                        inter += 1
            if inter == 0:
                continue
            iou = inter / (areas[c] + areas[a] - inter)
            if iou > iou_threshold:
                ok = False
                break
        keep[c] = ok
    return keep


@njit(cache=True)
def render_masks(y0s, x0s, hs, ws, offs, flat, h, w):
    out = np.zeros((h, w), dtype=np.int32)
    next_id = 1
    n = y0s.shape[0]
    for c in range(n):
        claimed = False
        for iy in range(hs[c]):
            py = y0s[c] + iy
            row = offs[c] + iy * ws[c]
            for ix in range(ws[c]):
                px = x0s[c] + ix
                if flat[row + ix] and out[py, px] == 0:
                    out[py, px] = next_id
                    claimed = True
        if claimed:
            next_id += 1
    return out
