"""Pure-NumPy z-buffer winner selection, used when the extension is absent.

Sorts (pixel, depth, id) lexicographically so the first entry of every pixel
group is the minimum-depth point, with exact ties broken toward the lower
point index -- identical semantics to the compiled kernel.
"""

import numpy as np


def zbuffer_argmin(
    pix: np.ndarray, depth: np.ndarray, ids: np.ndarray, n_pixels: int
) -> np.ndarray:
    """Return, per flat pixel, the index of the nearest point (-1 if empty)."""
    win = np.full(n_pixels, -1, dtype=np.int64)
    if pix.size == 0:
        return win
    order = np.lexsort((ids, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win[pix_sorted[first]] = ids[order][first]
    return win
