"""Pure numpy fallbacks for the compiled kernels in ``_ckernels.pyx``.

Results are identical to the compiled path: the same squared-distance
formula, the same (distance, index) ordering and the same accumulation order.
"""

import numpy as np

_CHUNK_ELEMS = 1 << 22


class KDTree:
    """Drop-in stand-in for the compiled tree; answers queries by brute force."""

    def __init__(self, points, leaf_size=16):
        arr = np.ascontiguousarray(points, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        if arr.shape[0] < 1:
            raise ValueError("cannot index an empty point set")
        self._pts = arr
        self.n = arr.shape[0]
        self.leaf_size = leaf_size

    def query(self, queries, k):
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError("queries must have shape (M, 3)")
        if k < 1:
            raise ValueError("k must be >= 1")
        kk = min(k, self.n)
        m = q.shape[0]
        out_idx = np.empty((m, kk), dtype=np.int64)
        out_d = np.empty((m, kk), dtype=np.float64)
        step = max(1, _CHUNK_ELEMS // self.n)
        for lo in range(0, m, step):
            hi = min(m, lo + step)
            d = _sq_dist(q[lo:hi], self._pts)
            idx = _sorted_prefix(d, kk)
            out_idx[lo:hi] = idx
            out_d[lo:hi] = np.take_along_axis(d, idx, axis=1)
        return out_idx, out_d


def _sq_dist(q, p):
    dx = q[:, None, 0] - p[None, :, 0]
    dy = q[:, None, 1] - p[None, :, 1]
    dz = q[:, None, 2] - p[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def _sorted_prefix(d, k):
    n = d.shape[1]
    if k == n:
        return np.argsort(d, axis=1, kind="stable")
    cand = np.argpartition(d, k - 1, axis=1)[:, :k]
    cd = np.take_along_axis(d, cand, axis=1)
    thresh = cd.max(axis=1)
    # rows whose k-th distance is tied with points outside the candidate set
    ambiguous = (d <= thresh[:, None]).sum(axis=1) > k
    # lexicographic (distance, index): stable sort by index, then by distance
    o = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, o, axis=1)
    cd = np.take_along_axis(cd, o, axis=1)
    o = np.argsort(cd, axis=1, kind="stable")
    out = np.take_along_axis(cand, o, axis=1)
    for r in np.flatnonzero(ambiguous):
        out[r] = np.argsort(d[r], kind="stable")[:k]
    return out


def scatter_add_rows(out, index, src):
    """``out[index[i]] += src[i]`` accumulated in ascending ``i`` order."""
    index = np.asarray(index)
    if src.shape[0] != index.shape[0] or out.shape[1] != src.shape[1]:
        raise ValueError("shape mismatch in scatter_add_rows")
    if index.size and (index.min() < 0 or index.max() >= out.shape[0]):
        raise IndexError("scatter index out of range")
    np.add.at(out, index, src)
