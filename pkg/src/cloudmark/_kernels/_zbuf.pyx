# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled z-buffer winner selection.

Single pass over the projected points; for every pixel keeps the point with
the minimum depth, breaking exact depth ties toward the lower point index so
results are deterministic and match the NumPy fallback bit for bit.
"""

import numpy as np

cimport numpy as cnp


def zbuffer_argmin(
    cnp.int64_t[::1] pix,
    cnp.float64_t[::1] depth,
    cnp.int64_t[::1] ids,
    Py_ssize_t n_pixels,
):
    """Return, per flat pixel, the index of the nearest point (-1 if empty)."""
    cdef Py_ssize_t m = pix.shape[0]
    win_arr = np.full(n_pixels, -1, dtype=np.int64)
    best_arr = np.empty(n_pixels, dtype=np.float64)
    cdef cnp.int64_t[::1] win = win_arr
    cdef cnp.float64_t[::1] best = best_arr
    cdef Py_ssize_t t
    cdef cnp.int64_t p, i, w
    cdef double d

    for t in range(m):
        p = pix[t]
        d = depth[t]
        i = ids[t]
        w = win[p]
        if w < 0 or d < best[p] or (d == best[p] and i < w):
            win[p] = i
            best[p] = d
    return win_arr
