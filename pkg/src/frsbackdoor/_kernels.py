"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``FRSBD_DISABLE_NUMBA`` is unset (or ``0``). Both paths are always
importable as ``*_numpy`` / ``*_numba`` so they can be compared directly.
"""

import os

import numpy as np

BORDER_ZERO = 0
BORDER_EDGE = 1

_disabled = os.environ.get("FRSBD_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("disabled by FRSBD_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# -- bilinear affine warp ---------------------------------------------------
#
# ``matrix`` maps continuous output coordinates (x, y) to continuous source
# coordinates. Pixel (row i, col j) has its centre at (j + 0.5, i + 0.5).

def warp_bilinear_numpy(src, matrix, out_h, out_w, border):
    c, h, w = src.shape
    jj, ii = np.meshgrid(np.arange(out_w) + 0.5, np.arange(out_h) + 0.5)
    u = matrix[0, 0] * jj + matrix[0, 1] * ii + matrix[0, 2]
    v = matrix[1, 0] * jj + matrix[1, 1] * ii + matrix[1, 2]
    fx = u - 0.5
    fy = v - 0.5
    if border == BORDER_EDGE:
        fx = np.clip(fx, 0.0, w - 1.0)
        fy = np.clip(fy, 0.0, h - 1.0)
    x0 = np.floor(fx)
    y0 = np.floor(fy)
    wx = fx - x0
    wy = fy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    out = np.zeros((c, out_h, out_w))
    if border == BORDER_EDGE:
        x1 = np.minimum(x1, w - 1)
        y1 = np.minimum(y1, h - 1)
        taps = ((y0, x0, (1.0 - wy) * (1.0 - wx)), (y0, x1, (1.0 - wy) * wx),
                (y1, x0, wy * (1.0 - wx)), (y1, x1, wy * wx))
        for yy, xx, wt in taps:
            out += src[:, yy, xx] * wt
        return out
    for yy, xx, wt in ((y0, x0, (1.0 - wy) * (1.0 - wx)), (y0, x1, (1.0 - wy) * wx),
                       (y1, x0, wy * (1.0 - wx)), (y1, x1, wy * wx)):
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        out += np.where(ok, src[:, yc, xc], 0.0) * wt
    return out


def tally_numpy(hits, counts, true_ids, pred_ids):
    np.add.at(hits, true_ids, (true_ids == pred_ids).astype(hits.dtype))
    np.add.at(counts, true_ids, 1)


if HAVE_NUMBA:

    @njit(cache=True)
    def warp_bilinear_numba(src, matrix, out_h, out_w, border):
        c, h, w = src.shape
        out = np.zeros((c, out_h, out_w))
        a, b, tx = matrix[0, 0], matrix[0, 1], matrix[0, 2]
        d, e, ty = matrix[1, 0], matrix[1, 1], matrix[1, 2]
        for i in range(out_h):
            yc = i + 0.5
            for j in range(out_w):
                xc = j + 0.5
                fx = a * xc + b * yc + tx - 0.5
                fy = d * xc + e * yc + ty - 0.5
                if border == 1:
                    fx = min(max(fx, 0.0), w - 1.0)
                    fy = min(max(fy, 0.0), h - 1.0)
                fx0 = np.floor(fx)
                fy0 = np.floor(fy)
                wx = fx - fx0
                wy = fy - fy0
                x0 = int(fx0)
                y0 = int(fy0)
                x1 = x0 + 1
                y1 = y0 + 1
                if border == 1:
                    x1 = min(x1, w - 1)
                    y1 = min(y1, h - 1)
                w00 = (1.0 - wy) * (1.0 - wx)
                w01 = (1.0 - wy) * wx
                w10 = wy * (1.0 - wx)
                w11 = wy * wx
                in_y0 = 0 <= y0 < h
                in_y1 = 0 <= y1 < h
                in_x0 = 0 <= x0 < w
                in_x1 = 0 <= x1 < w
                for ch in range(c):
                    acc = 0.0
                    if in_y0 and in_x0:
                        acc += src[ch, y0, x0] * w00
                    if in_y0 and in_x1:
                        acc += src[ch, y0, x1] * w01
                    if in_y1 and in_x0:
                        acc += src[ch, y1, x0] * w10
                    if in_y1 and in_x1:
                        acc += src[ch, y1, x1] * w11
                    out[ch, i, j] = acc
        return out

    @njit(cache=True)
    def tally_numba(hits, counts, true_ids, pred_ids):
        for k in range(true_ids.shape[0]):
            t = true_ids[k]
            if t == pred_ids[k]:
                hits[t] += 1
            counts[t] += 1

    warp_bilinear = warp_bilinear_numba
    tally = tally_numba
else:
    warp_bilinear_numba = None
    tally_numba = None
    warp_bilinear = warp_bilinear_numpy
    tally = tally_numpy


def warp(src, matrix, out_h, out_w, border=BORDER_ZERO):
    """Dispatch to the active backend with dtype normalisation."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    return warp_bilinear(src, matrix, int(out_h), int(out_w), int(border))


def tally_predictions(hits, counts, true_ids, pred_ids):
    tally(hits, counts, np.ascontiguousarray(true_ids, dtype=np.int64),
          np.ascontiguousarray(pred_ids, dtype=np.int64))
