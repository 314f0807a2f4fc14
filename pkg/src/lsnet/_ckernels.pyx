# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: exact k-d tree k-NN and row scatter-add.

Neighbors are ordered by ascending squared distance, ties by ascending point
index. Squared distance is accumulated as ``(dx*dx + dy*dy) + dz*dz`` so that
results agree bit-for-bit with the numpy fallback.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef fused real_t:
    float
    double


cdef inline bint _before(double da, long ia, double db, long ib) noexcept nogil:
    # strict (distance, index) ordering
    return da < db or (da == db and ia < ib)


cdef inline void _sift_down(double* hd, long* hi, long n, long pos) noexcept nogil:
    # max-heap on (distance, index)
    cdef long child
    cdef double td
    cdef long ti
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and _before(hd[child], hi[child], hd[child + 1], hi[child + 1]):
            child += 1
        if _before(hd[pos], hi[pos], hd[child], hi[child]):
            td = hd[pos]; hd[pos] = hd[child]; hd[child] = td
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            break


cdef inline void _sift_up(double* hd, long* hi, long pos) noexcept nogil:
    cdef long parent
    cdef double td
    cdef long ti
    while pos > 0:
        parent = (pos - 1) // 2
        if _before(hd[parent], hi[parent], hd[pos], hi[pos]):
            td = hd[pos]; hd[pos] = hd[parent]; hd[parent] = td
            ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
            pos = parent
        else:
            break


cdef class KDTree:
    """Balanced k-d tree over an ``(N, 3)`` float64 array."""

    cdef double[:, ::1] pts
    cdef long[::1] perm
    cdef long[::1] node_start
    cdef long[::1] node_end
    cdef long[::1] node_left
    cdef long[::1] node_right
    cdef double[:, ::1] node_lo
    cdef double[:, ::1] node_hi
    cdef long n_nodes
    cdef readonly long n
    cdef readonly long leaf_size

    def __init__(self, points, long leaf_size=16):
        arr = np.ascontiguousarray(points, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        if arr.shape[0] < 1:
            raise ValueError("cannot index an empty point set")
        self.pts = arr
        self.n = arr.shape[0]
        self.leaf_size = max(1, leaf_size)
        self.perm = np.arange(self.n, dtype=np.int64)
        cap = 2 * (self.n // self.leaf_size + 1) + 1
        cap = max(cap, 4 * self.n // self.leaf_size + 4)
        self.node_start = np.zeros(cap, dtype=np.int64)
        self.node_end = np.zeros(cap, dtype=np.int64)
        self.node_left = np.full(cap, -1, dtype=np.int64)
        self.node_right = np.full(cap, -1, dtype=np.int64)
        self.node_lo = np.zeros((cap, 3), dtype=np.float64)
        self.node_hi = np.zeros((cap, 3), dtype=np.float64)
        self.n_nodes = 0
        with nogil:
            self._build(0, self.n)

    cdef long _build(self, long start, long end) noexcept nogil:
        cdef long node = self.n_nodes
        cdef long i, d, p, mid, dim
        cdef double v, spread, best
        self.n_nodes += 1
        self.node_start[node] = start
        self.node_end[node] = end
        for d in range(3):
            self.node_lo[node, d] = self.pts[self.perm[start], d]
            self.node_hi[node, d] = self.pts[self.perm[start], d]
        for i in range(start + 1, end):
            p = self.perm[i]
            for d in range(3):
                v = self.pts[p, d]
                if v < self.node_lo[node, d]:
                    self.node_lo[node, d] = v
                if v > self.node_hi[node, d]:
                    self.node_hi[node, d] = v
        if end - start <= self.leaf_size:
            return node
        dim = 0
        best = -1.0
        for d in range(3):
            spread = self.node_hi[node, d] - self.node_lo[node, d]
            if spread > best:
                best = spread
                dim = d
        if best <= 0.0:
            # all points coincide; keep as a (large) leaf
            return node
        mid = start + (end - start) // 2
        self._select(start, end, mid, dim)
        self.node_left[node] = self._build(start, mid)
        self.node_right[node] = self._build(mid, end)
        return node

    cdef void _select(self, long lo, long hi, long kth, long dim) noexcept nogil:
        # quickselect on perm[lo:hi] by coordinate ``dim``
        cdef long left = lo, right = hi - 1, i, j, t
        cdef double pivot
        while right > left:
            pivot = self.pts[self.perm[(left + right) // 2], dim]
            i = left
            j = right
            while i <= j:
                while self.pts[self.perm[i], dim] < pivot:
                    i += 1
                while self.pts[self.perm[j], dim] > pivot:
                    j -= 1
                if i <= j:
                    t = self.perm[i]; self.perm[i] = self.perm[j]; self.perm[j] = t
                    i += 1
                    j -= 1
            if kth <= j:
                right = j
            elif kth >= i:
                left = i
            else:
                break

    def query(self, queries, long k):
        """Return ``(indices, sq_distances)`` of the ``min(k, N)`` nearest points."""
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError("queries must have shape (M, 3)")
        if k < 1:
            raise ValueError("k must be >= 1")
        cdef long kk = min(k, self.n)
        cdef long m = q.shape[0]
        out_idx = np.empty((m, kk), dtype=np.int64)
        out_d = np.empty((m, kk), dtype=np.float64)
        cdef double[:, ::1] qv = q
        cdef long[:, ::1] oi = out_idx
        cdef double[:, ::1] od = out_d
        cdef long[::1] stack = np.empty(self.n_nodes + 1, dtype=np.int64)
        cdef double* hd = <double*> malloc(kk * sizeof(double))
        cdef long* hi = <long*> malloc(kk * sizeof(long))
        cdef long r
        if hd == NULL or hi == NULL:
            free(hd); free(hi)
            raise MemoryError()
        try:
            with nogil:
                for r in range(m):
                    self._query_one(&qv[r, 0], kk, hd, hi, stack)
                    self._drain(hd, hi, kk, &oi[r, 0], &od[r, 0])
        finally:
            free(hd)
            free(hi)
        return out_idx, out_d

    cdef void _drain(self, double* hd, long* hi, long kk, long* oi, double* od) noexcept nogil:
        cdef long n = kk, j
        for j in range(kk - 1, -1, -1):
            od[j] = hd[0]
            oi[j] = hi[0]
            n -= 1
            hd[0] = hd[n]
            hi[0] = hi[n]
            _sift_down(hd, hi, n, 0)

    cdef inline double _box_dist(self, long node, double* q) noexcept nogil:
        cdef double s = 0.0, diff
        cdef long d
        for d in range(3):
            if q[d] < self.node_lo[node, d]:
                diff = self.node_lo[node, d] - q[d]
            elif q[d] > self.node_hi[node, d]:
                diff = q[d] - self.node_hi[node, d]
            else:
                diff = 0.0
            s = s + diff * diff
        return s

    cdef void _query_one(self, double* q, long kk, double* hd, long* hi, long[::1] stack) noexcept nogil:
        cdef long size = 0, top = 0, node, i, p, a, b
        cdef double dx, dy, dz, dist, da, db
        stack[top] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            # prune strictly so equal-distance candidates with lower index stay reachable
            if size == kk and self._box_dist(node, q) > hd[0]:
                continue
            a = self.node_left[node]
            if a < 0:
                for i in range(self.node_start[node], self.node_end[node]):
                    p = self.perm[i]
                    dx = q[0] - self.pts[p, 0]
                    dy = q[1] - self.pts[p, 1]
                    dz = q[2] - self.pts[p, 2]
                    dist = dx * dx + dy * dy + dz * dz
                    if size < kk:
                        hd[size] = dist
                        hi[size] = p
                        _sift_up(hd, hi, size)
                        size += 1
                    elif _before(dist, p, hd[0], hi[0]):
                        hd[0] = dist
                        hi[0] = p
                        _sift_down(hd, hi, kk, 0)
                continue
            b = self.node_right[node]
            da = self._box_dist(a, q)
            db = self._box_dist(b, q)
            # push farther child first so the nearer one is explored next
            if da <= db:
                stack[top] = b; top += 1
                stack[top] = a; top += 1
            else:
                stack[top] = a; top += 1
                stack[top] = b; top += 1


def scatter_add_rows(real_t[:, ::1] out, const long[::1] index, const real_t[:, ::1] src):
    """``out[index[i]] += src[i]`` accumulated in ascending ``i`` order."""
    cdef Py_ssize_t m = index.shape[0], d = src.shape[1], i, j
    cdef long n = out.shape[0]
    cdef long r
    if src.shape[0] != m or out.shape[1] != d:
        raise ValueError("shape mismatch in scatter_add_rows")
    for i in range(m):
        r = index[i]
        if r < 0 or r >= n:
            raise IndexError("scatter index out of range")
    with nogil:
        for i in range(m):
            r = index[i]
            for j in range(d):
                out[r, j] = out[r, j] + src[i, j]
