# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: the hot-path backend.

Interface and floating-point semantics are identical to ``_kernels_py``;
see that module's docstring for the shared contract.  The parity test suite
asserts bitwise-equal outputs between the two backends.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt
from libc.stdlib cimport free, malloc, realloc

cnp.import_array()

NAME = "compiled"

cdef enum:
    C_MODE_MOCHI = 0
    C_MODE_FIXED = 1
    C_MODE_PROXY_ONLY = 2

MODE_MOCHI = C_MODE_MOCHI
MODE_FIXED = C_MODE_FIXED
MODE_PROXY_ONLY = C_MODE_PROXY_ONLY

cdef double BAND_LO = 0.999999999999
cdef double BAND_HI = 1.000000000001

cdef inline bint _le_dist(double q2, double t) nogil:
    # True iff sqrt(q2) <= t, exactly; banded prefilter avoids the sqrt.
    cdef double t2
    if t < 0.0:
        return False
    t2 = t * t
    if q2 <= t2 * BAND_LO:
        return True
    if q2 >= t2 * BAND_HI:
        return False
    return sqrt(q2) <= t


cdef inline bint _ge_dist(double q2, double t) nogil:
    cdef double t2
    if t <= 0.0:
        return True
    t2 = t * t
    if q2 >= t2 * BAND_HI:
        return True
    if q2 <= t2 * BAND_LO:
        return False
    return sqrt(q2) >= t


# -- LBVH construction ---------------------------------------------------------


cdef inline unsigned int _expand_bits(unsigned int v) nogil:
    v &= 0x3FFu
    v = (v | (v << 16)) & 0x030000FFu
    v = (v | (v << 8)) & 0x0300F00Fu
    v = (v | (v << 4)) & 0x030C30C3u
    v = (v | (v << 2)) & 0x09249249u
    return v


def morton_codes(double[:, ::1] cent):
    cdef Py_ssize_t n = cent.shape[0]
    cdef cnp.ndarray[cnp.uint32_t, ndim=1] codes = np.empty(n, dtype=np.uint32)
    cdef unsigned int[::1] cv = codes
    cdef double lo0, lo1, lo2, hi0, hi1, hi2, e0, e1, e2, x
    cdef int c0, c1, c2
    cdef Py_ssize_t i
    if n == 0:
        return codes
    lo0 = hi0 = cent[0, 0]
    lo1 = hi1 = cent[0, 1]
    lo2 = hi2 = cent[0, 2]
    with nogil:
        for i in range(1, n):
            if cent[i, 0] < lo0: lo0 = cent[i, 0]
            if cent[i, 0] > hi0: hi0 = cent[i, 0]
            if cent[i, 1] < lo1: lo1 = cent[i, 1]
            if cent[i, 1] > hi1: hi1 = cent[i, 1]
            if cent[i, 2] < lo2: lo2 = cent[i, 2]
            if cent[i, 2] > hi2: hi2 = cent[i, 2]
        e0 = hi0 - lo0
        e1 = hi1 - lo1
        e2 = hi2 - lo2
        for i in range(n):
            c0 = 0
            c1 = 0
            c2 = 0
            if e0 > 0.0:
                x = (cent[i, 0] - lo0) / e0
                c0 = <int>(x * 1024.0)
                if c0 > 1023: c0 = 1023
            if e1 > 0.0:
                x = (cent[i, 1] - lo1) / e1
                c1 = <int>(x * 1024.0)
                if c1 > 1023: c1 = 1023
            if e2 > 0.0:
                x = (cent[i, 2] - lo2) / e2
                c2 = <int>(x * 1024.0)
                if c2 > 1023: c2 = 1023
            cv[i] = (_expand_bits(<unsigned int>c0) << 2) \
                  | (_expand_bits(<unsigned int>c1) << 1) \
                  | _expand_bits(<unsigned int>c2)
    return codes


cdef inline Py_ssize_t _find_split(unsigned int* codes, Py_ssize_t lo, Py_ssize_t hi) nogil:
    cdef unsigned int first = codes[lo]
    cdef unsigned int last = codes[hi - 1]
    cdef unsigned int diff
    cdef int bit = 0
    cdef Py_ssize_t a, b, mid
    if first == last:
        return (lo + hi) >> 1  # all codes equal: balanced split by index
    diff = first ^ last
    while (diff >> (bit + 1)) != 0:
        bit += 1
    a = lo + 1
    b = hi - 1
    while a < b:
        mid = (a + b) >> 1
        if (codes[mid] >> bit) & 1u:
            b = mid
        else:
            a = mid + 1
    return a


def build(double[:, ::1] bmin, double[:, ::1] bmax):
    cdef Py_ssize_t n = bmin.shape[0]
    if n < 1:
        raise ValueError("build requires at least one box")
    cdef cnp.ndarray cent = (np.asarray(bmin) + np.asarray(bmax)) * 0.5
    codes = morton_codes(cent)
    keys = (codes.astype(np.uint64) << np.uint64(32)) | np.arange(n, dtype=np.uint64)
    keys.sort()
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = (keys & np.uint64(0xFFFFFFFF)).astype(np.int64)
    cdef cnp.ndarray[cnp.uint32_t, ndim=1] sorted_codes = (keys >> np.uint64(32)).astype(np.uint32)

    cdef Py_ssize_t m = 2 * n - 1
    cdef cnp.ndarray[cnp.int32_t, ndim=1] left = np.full(m, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] right = np.full(m, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] prim = np.full(m, -1, dtype=np.int32)
    cdef int[::1] lv = left
    cdef int[::1] rv = right
    cdef int[::1] pv = prim
    cdef long long[::1] ov = order
    cdef unsigned int* cp = <unsigned int*>cnp.PyArray_DATA(sorted_codes)

    cdef Py_ssize_t stack_lo[256]
    cdef Py_ssize_t stack_hi[256]
    cdef Py_ssize_t sp = 0, next_node = 0, lo, hi, split, nleft, node
    with nogil:
        stack_lo[0] = 0
        stack_hi[0] = n
        sp = 1
        while sp > 0:
            sp -= 1
            lo = stack_lo[sp]
            hi = stack_hi[sp]
            node = next_node
            next_node += 1
            if hi - lo == 1:
                pv[node] = <int>ov[lo]
            else:
                split = _find_split(cp, lo, hi)
                nleft = split - lo
                lv[node] = <int>(node + 1)
                rv[node] = <int>(node + 2 * nleft)
                stack_lo[sp] = split
                stack_hi[sp] = hi
                sp += 1
                stack_lo[sp] = lo
                stack_hi[sp] = split
                sp += 1

    cdef cnp.ndarray[cnp.float64_t, ndim=2] node_min = np.empty((m, 3), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] node_max = np.empty((m, 3), dtype=np.float64)
    refit(node_min, node_max, left, right, prim, bmin, bmax)
    return node_min, node_max, left, right, prim


def refit(double[:, ::1] node_min, double[:, ::1] node_max,
          int[::1] left, int[::1] right, int[::1] prim,
          double[:, ::1] bmin, double[:, ::1] bmax):
    cdef Py_ssize_t m = left.shape[0]
    cdef Py_ssize_t i
    cdef int l, r, p, k
    cdef double a, b
    with nogil:
        for i in range(m - 1, -1, -1):
            if left[i] < 0:
                p = prim[i]
                for k in range(3):
                    node_min[i, k] = bmin[p, k]
                    node_max[i, k] = bmax[p, k]
            else:
                l = left[i]
                r = right[i]
                for k in range(3):
                    a = node_min[l, k]
                    b = node_min[r, k]
                    node_min[i, k] = a if a < b else b
                    a = node_max[l, k]
                    b = node_max[r, k]
                    node_max[i, k] = a if a > b else b


def query_point(double[:, ::1] node_min, double[:, ::1] node_max,
                int[::1] left, int[::1] right, int[::1] prim, q):
    cdef double qx = q[0], qy = q[1], qz = q[2]
    cdef int stack[256]
    cdef Py_ssize_t sp
    cdef int node
    hits = []
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if (node_min[node, 0] <= qx <= node_max[node, 0]
                and node_min[node, 1] <= qy <= node_max[node, 1]
                and node_min[node, 2] <= qz <= node_max[node, 2]):
            if left[node] < 0:
                hits.append(prim[node])
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
    hits.sort()
    return np.array(hits, dtype=np.int32)


# -- detectors ------------------------------------------------------------------


cdef struct PairBuf:
    int* data
    Py_ssize_t size
    Py_ssize_t cap


cdef inline bint _pairbuf_push(PairBuf* buf, int a, int b) nogil:
    cdef int* grown
    if buf.size == buf.cap:
        buf.cap = buf.cap * 2 if buf.cap else 1024
        grown = <int*>realloc(buf.data, buf.cap * 2 * sizeof(int))
        if grown == NULL:
            return False
        buf.data = grown
    buf.data[2 * buf.size] = a
    buf.data[2 * buf.size + 1] = b
    buf.size += 1
    return True


def detect(int mode, double[:, ::1] node_min, double[:, ::1] node_max,
           int[::1] left, int[::1] right, int[::1] prim,
           double[:, ::1] centers, double[::1] radii):
    cdef Py_ssize_t n = centers.shape[0]
    cdef long long candidates = 0, deduped = 0
    cdef PairBuf buf
    buf.data = NULL
    buf.size = 0
    buf.cap = 0

    cdef int stack[256]
    cdef Py_ssize_t sp, i
    cdef int node, j
    cdef double qx, qy, qz, ri, rj, dx, dy, dz, q2
    cdef bint ok = True

    with nogil:
        for i in range(n):
            if not ok:
                break
            qx = centers[i, 0]
            qy = centers[i, 1]
            qz = centers[i, 2]
            ri = radii[i]
            sp = 1
            stack[0] = 0
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if not (node_min[node, 0] <= qx <= node_max[node, 0]
                        and node_min[node, 1] <= qy <= node_max[node, 1]
                        and node_min[node, 2] <= qz <= node_max[node, 2]):
                    continue
                if left[node] >= 0:
                    stack[sp] = right[node]
                    sp += 1
                    stack[sp] = left[node]
                    sp += 1
                    continue
                j = prim[node]
                if j == i:
                    continue  # self-hit: skipped, not a candidate
                candidates += 1
                dx = qx - centers[j, 0]
                dy = qy - centers[j, 1]
                dz = qz - centers[j, 2]
                q2 = dx * dx + dy * dy + dz * dz
                rj = radii[j]
                if not _le_dist(q2, ri + rj):
                    continue
                if mode == C_MODE_MOCHI:
                    if _le_dist(q2, 2.0 * rj) and (j > i or _ge_dist(q2, 2.0 * ri)):
                        ok = _pairbuf_push(&buf, j if j < i else <int>i, j if j > i else <int>i)
                        if not ok:
                            break
                    else:
                        deduped += 1
                elif mode == C_MODE_FIXED:
                    if j > i:
                        ok = _pairbuf_push(&buf, <int>i, j)
                        if not ok:
                            break
                    else:
                        deduped += 1
                else:  # MODE_PROXY_ONLY
                    if _le_dist(q2, 2.0 * rj):
                        if ri > rj or (ri == rj and i < j):
                            ok = _pairbuf_push(&buf, j if j < i else <int>i, j if j > i else <int>i)
                            if not ok:
                                break
                        else:
                            deduped += 1

    if not ok:
        free(buf.data)
        raise MemoryError("pair buffer allocation failed")
    cdef cnp.ndarray[cnp.int32_t, ndim=2] pairs = np.empty((buf.size, 2), dtype=np.int32)
    cdef int[:, ::1] pview
    cdef Py_ssize_t t
    if buf.size:
        pview = pairs
        with nogil:
            for t in range(buf.size):
                pview[t, 0] = buf.data[2 * t]
                pview[t, 1] = buf.data[2 * t + 1]
    free(buf.data)
    return pairs, candidates, deduped


def detect_brute(double[:, ::1] centers, double[::1] radii):
    cdef Py_ssize_t n = centers.shape[0]
    cdef PairBuf buf
    buf.data = NULL
    buf.size = 0
    buf.cap = 0
    cdef Py_ssize_t i, j
    cdef double xi, yi, zi, ri, dx, dy, dz, q2
    cdef bint ok = True
    with nogil:
        for i in range(n):
            if not ok:
                break
            xi = centers[i, 0]
            yi = centers[i, 1]
            zi = centers[i, 2]
            ri = radii[i]
            for j in range(i + 1, n):
                dx = xi - centers[j, 0]
                dy = yi - centers[j, 1]
                dz = zi - centers[j, 2]
                q2 = dx * dx + dy * dy + dz * dz
                if _le_dist(q2, ri + radii[j]):
                    ok = _pairbuf_push(&buf, <int>i, <int>j)
                    if not ok:
                        break
    if not ok:
        free(buf.data)
        raise MemoryError("pair buffer allocation failed")
    cdef cnp.ndarray[cnp.int32_t, ndim=2] pairs = np.empty((buf.size, 2), dtype=np.int32)
    cdef int[:, ::1] pview
    cdef Py_ssize_t t
    if buf.size:
        pview = pairs
        with nogil:
            for t in range(buf.size):
                pview[t, 0] = buf.data[2 * t]
                pview[t, 1] = buf.data[2 * t + 1]
    free(buf.data)
    return pairs, n * (n - 1) // 2


cdef long long _brute_row(Py_ssize_t i, Py_ssize_t n, double* x, double* y,
                          double* z, double* r) nogil:
    # Branchless band counting so the compiler can vectorize; rows that hit
    # the ambiguous band (almost never) are redone with the exact predicate.
    cdef double xi = x[i], yi = y[i], zi = z[i], ri = r[i]
    cdef double dx, dy, dz, q2, s, t2
    cdef long long cnt = 0, band = 0
    cdef Py_ssize_t j
    for j in range(i + 1, n):
        dx = xi - x[j]
        dy = yi - y[j]
        dz = zi - z[j]
        q2 = dx * dx + dy * dy + dz * dz
        s = ri + r[j]
        t2 = s * s
        cnt += q2 <= t2 * BAND_LO
        band += (q2 < t2 * BAND_HI) - (q2 <= t2 * BAND_LO)
    if band != 0:
        cnt = 0
        for j in range(i + 1, n):
            dx = xi - x[j]
            dy = yi - y[j]
            dz = zi - z[j]
            q2 = dx * dx + dy * dy + dz * dz
            if _le_dist(q2, ri + r[j]):
                cnt += 1
    return cnt


def brute_count(double[:, ::1] centers, double[::1] radii, int threads=1):
    """Number of colliding pairs by exhaustive search (count only).

    With threads > 1 the row loop runs under OpenMP; the result is an exact
    integer reduction, identical for any thread count.
    """
    cdef Py_ssize_t n = centers.shape[0]
    cdef long long total = 0
    cdef Py_ssize_t i
    if n < 2:
        return 0
    arr = np.asarray(centers)
    xs = np.ascontiguousarray(arr[:, 0])
    ys = np.ascontiguousarray(arr[:, 1])
    zs = np.ascontiguousarray(arr[:, 2])
    cdef double[::1] xv = xs, yv = ys, zv = zs
    cdef double* x = &xv[0]
    cdef double* y = &yv[0]
    cdef double* z = &zv[0]
    cdef double* r = &radii[0]
    if threads <= 1:
        with nogil:
            for i in range(n - 1):
                total += _brute_row(i, n, x, y, z, r)
    else:
        for i in prange(n - 1, nogil=True, schedule='guided', num_threads=threads):
            total += _brute_row(i, n, x, y, z, r)
    return int(total)
