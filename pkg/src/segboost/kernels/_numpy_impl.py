"""Pure-numpy implementations of the hot geometry kernels.

This backend is the portable fallback; `segboost.kernels._numba_impl`
mirrors every function with identical arithmetic so results are
bit-for-bit equal between backends.
"""

import numpy as np

BACKEND = "numpy"


def star_dists(labels, dirs_y, dirs_x, max_steps):
    """Radial boundary distances for every labelled pixel.

    For each pixel p with labels[p] > 0 and each ray k, marches in unit
    steps along (dirs_y[k], dirs_x[k]) and records the number of steps
    until the first pixel whose label differs from labels[p] (leaving
    the image counts as differing). Background pixels get all-zeros.

    Returns a float32 array of shape (H, W, n_rays).
    """
    h, w = labels.shape
    n_rays = dirs_y.shape[0]
    out = np.zeros((h, w, n_rays), dtype=np.float32)
    ys, xs = np.nonzero(labels)
    if ys.size == 0:
        return out
    own = labels[ys, xs]
    fy = ys.astype(np.float64)[:, None]
    fx = xs.astype(np.float64)[:, None]
    dist = np.zeros((ys.size, n_rays), dtype=np.float32)
    active = np.ones((ys.size, n_rays), dtype=bool)
    for t in range(1, int(max_steps) + 1):
        py = np.floor(fy + t * dirs_y[None, :] + 0.5).astype(np.int64)
        px = np.floor(fx + t * dirs_x[None, :] + 0.5).astype(np.int64)
        outside = (py < 0) | (py >= h) | (px < 0) | (px >= w)
        lab = labels[np.clip(py, 0, h - 1), np.clip(px, 0, w - 1)]
        differs = outside | (lab != own[:, None])
        done = active & differs
        dist[done] = t
        active &= ~differs
        if not active.any():
            break
    dist[active] = max_steps
    out[ys, xs] = dist
    return out


def three_class_map(labels):
    """Classify pixels as 0=background, 1=foreground, 2=border.

    Border pixels are labelled pixels with an in-bounds 8-neighbour
    carrying a different label (background or another instance).
    """
    h, w = labels.shape
    fg = labels > 0
    diff = np.zeros((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys0, ys1 = max(dy, 0), h + min(dy, 0)
            xs0, xs1 = max(dx, 0), w + min(dx, 0)
            a = labels[ys0:ys1, xs0:xs1]
            b = labels[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
            diff[ys0:ys1, xs0:xs1] |= a != b
    out = np.zeros((h, w), dtype=np.uint8)
    out[fg] = 1
    out[fg & diff] = 2
    return out


def _polygon_mask(vy, vx, y0, x0, hh, ww):
    # Even-odd rule evaluated at integer pixel centres of the bbox window.
    gy, gx = np.meshgrid(
        np.arange(y0, y0 + hh, dtype=np.int64),
        np.arange(x0, x0 + ww, dtype=np.int64),
        indexing="ij",
    )
    inside = np.zeros((hh, ww), dtype=bool)
    n = vy.shape[0]
    j = n - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n):
            cond = (vy[i] > gy) != (vy[j] > gy)
            xc = (vx[j] - vx[i]) * (gy - vy[i]) / (vy[j] - vy[i]) + vx[i]
            inside ^= cond & (gx < xc)
            j = i
    return inside


def prep_polygon_masks(ys, xs, dists, dirs_y, dirs_x, h, w):
    """Rasterize every candidate polygon into a shared flat buffer.

    Candidate c has centre (ys[c], xs[c]) and vertices
    centre + dists[c, k] * (dirs_y[k], dirs_x[k]). Returns per-candidate
    bbox origins/extents, offsets into the flat mask buffer, and the
    buffer itself.
    """
    n = ys.shape[0]
    y0s = np.zeros(n, dtype=np.int64)
    x0s = np.zeros(n, dtype=np.int64)
    hs = np.zeros(n, dtype=np.int64)
    ws = np.zeros(n, dtype=np.int64)
    offs = np.zeros(n + 1, dtype=np.int64)
    polys = []
    for c in range(n):
        vy = ys[c] + dists[c] * dirs_y
        vx = xs[c] + dists[c] * dirs_x
        y0 = max(0, int(np.floor(vy.min())))
        y1 = min(h - 1, int(np.ceil(vy.max())))
        x0 = max(0, int(np.floor(vx.min())))
        x1 = min(w - 1, int(np.ceil(vx.max())))
        hh = max(0, y1 - y0 + 1)
        ww = max(0, x1 - x0 + 1)
        y0s[c], x0s[c], hs[c], ws[c] = y0, x0, hh, ww
        offs[c + 1] = offs[c] + hh * ww
        polys.append((vy, vx, y0, x0, hh, ww))
    flat = np.zeros(int(offs[-1]), dtype=bool)
    for c, (vy, vx, y0, x0, hh, ww) in enumerate(polys):
        if hh > 0 and ww > 0:
            flat[offs[c]:offs[c + 1]] = _polygon_mask(vy, vx, y0, x0, hh, ww).ravel()
    return y0s, x0s, hs, ws, offs, flat


def _window(flat, offs, y0s, x0s, hs, ws, c, oy0, oy1, ox0, ox1):
    m = flat[offs[c]:offs[c + 1]].reshape(hs[c], ws[c])
    return m[oy0 - y0s[c]:oy1 - y0s[c] + 1, ox0 - x0s[c]:ox1 - x0s[c] + 1]


def nms_keep(y0s, x0s, hs, ws, offs, flat, iou_threshold):
    """Greedy suppression over candidates already sorted by priority.

    Candidate c is kept iff its rasterized IoU with every kept earlier
    candidate is <= iou_threshold.
    """
    n = y0s.shape[0]
    keep = np.zeros(n, dtype=bool)
    areas = np.array([int(flat[offs[c]:offs[c + 1]].sum()) for c in range(n)],
                     dtype=np.int64)
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
            wc = _window(flat, offs, y0s, x0s, hs, ws, c, oy0, oy1, ox0, ox1)
            wa = _window(flat, offs, y0s, x0s, hs, ws, a, oy0, oy1, ox0, ox1)
            inter = int((wc & wa).sum())
            if inter == 0:
                continue
            iou = inter / (areas[c] + areas[a] - inter)
            if iou > iou_threshold:
                ok = False
                break
        keep[c] = ok
    return keep


def render_masks(y0s, x0s, hs, ws, offs, flat, h, w):
    """Paint candidate masks into an int32 label map, priority order.

    Earlier candidates own contested pixels; a candidate that claims at
    least one pixel gets the next id.
    """
    out = np.zeros((h, w), dtype=np.int32)
    next_id = 1
    n = y0s.shape[0]
    for c in range(n):
        if hs[c] == 0 or ws[c] == 0:
            continue
        m = flat[offs[c]:offs[c + 1]].reshape(hs[c], ws[c])
        win = out[y0s[c]:y0s[c] + hs[c], x0s[c]:x0s[c] + ws[c]]
        claim = m & (win == 0)
        if claim.any():
            win[claim] = next_id
            next_id += 1
    return out
