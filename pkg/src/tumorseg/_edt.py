"""Exact squared Euclidean distance transform (lower envelope of parabolas).

Two separable 1-D passes; entries with infinite cost are skipped when the
envelope is built, so lines without any feature stay infinite.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _envelope_1d(f, spacing, out, v, z):
    n = f.shape[0]
    s2 = spacing * spacing
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            p = v[k]
            # abscissa where the parabolas rooted at p and q intersect
            s = ((fq + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = s2 * d * d + f[v[k]]


@numba.njit(cache=True)
def squared_edt_2d(mask, sy, sx):
    h, w = mask.shape
    g = np.empty((h, w), dtype=np.float64)
    col = np.empty(h, dtype=np.float64)
    buf = np.empty(max(h, w), dtype=np.float64)
    v = np.empty(max(h, w), dtype=np.int64)
    z = np.empty(max(h, w) + 1, dtype=np.float64)
    for c in range(w):
        for r in range(h):
            col[r] = 0.0 if mask[r, c] else np.inf
        _envelope_1d(col, sy, buf[:h], v, z)
        for r in range(h):
            g[r, c] = buf[r]
    out = np.empty((h, w), dtype=np.float64)
    for r in range(h):
        _envelope_1d(g[r], sx, out[r], v, z)
    return out
