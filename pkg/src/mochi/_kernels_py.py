"""Pure-Python/numpy kernels: the fallback backend.

This module and the compiled extension ``mochi._kernels`` implement the same
interface and must produce bitwise-identical outputs (the parity test suite
enforces this).  The compiled backend is preferred at import time; this one
keeps the package fully functional without a C toolchain.

Floating-point contract shared by both backends:

* squared distances are formed as ``dx*dx + dy*dy + dz*dz`` (left to right),
* every threshold test against a distance is exactly ``sqrt(q) <= t`` /
  ``sqrt(q) >= t`` with IEEE correctly-rounded sqrt.  The kernels use a
  relative band of 1e-12 around ``t*t`` to skip the sqrt almost always; the
  band is provably wide enough that skipped cases cannot change the result.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_BAND_LO = 0.999999999999  # 1 - 1e-12
_BAND_HI = 1.000000000001  # 1 + 1e-12

# Detector modes shared with the compiled backend.
MODE_MOCHI = 0
MODE_FIXED = 1
MODE_PROXY_ONLY = 2


def _le_dist(q2: float, t: float) -> bool:
    """True iff sqrt(q2) <= t, exactly."""
    if t < 0.0:
        return False
    t2 = t * t
    if q2 <= t2 * _BAND_LO:
        return True
    if q2 >= t2 * _BAND_HI:
        return False
    return np.sqrt(q2) <= t


def _ge_dist(q2: float, t: float) -> bool:
    """True iff sqrt(q2) >= t, exactly."""
    if t <= 0.0:
        return True
    t2 = t * t
    if q2 >= t2 * _BAND_HI:
        return True
    if q2 <= t2 * _BAND_LO:
        return False
    return np.sqrt(q2) >= t


# -- LBVH construction ---------------------------------------------------------


def _expand_bits(v: np.ndarray) -> np.ndarray:
    v = v & np.uint32(0x3FF)
    v = (v | (v << 16)) & np.uint32(0x030000FF)
    v = (v | (v << 8)) & np.uint32(0x0300F00F)
    v = (v | (v << 4)) & np.uint32(0x030C30C3)
    v = (v | (v << 2)) & np.uint32(0x09249249)
    return v


def morton_codes(cent: np.ndarray) -> np.ndarray:
    """30-bit Morton codes (10 bits/axis) over the centroid bounding box."""
    lo = cent.min(axis=0)
    hi = cent.max(axis=0)
    ext = hi - lo
    cells = np.zeros(cent.shape, dtype=np.uint32)
    for k in range(3):
        if ext[k] > 0.0:
            x = (cent[:, k] - lo[k]) / ext[k]
            c = (x * 1024.0).astype(np.int32)
            np.minimum(c, 1023, out=c)
            cells[:, k] = c.astype(np.uint32)
    return (
        (_expand_bits(cells[:, 0]) << np.uint32(2))
        | (_expand_bits(cells[:, 1]) << np.uint32(1))
        | _expand_bits(cells[:, 2])
    )


def _find_split(codes, lo: int, hi: int) -> int:
    # hi exclusive, hi - lo >= 2; codes sorted ascending on [lo, hi)
    first = int(codes[lo])
    last = int(codes[hi - 1])
    if first == last:
        return (lo + hi) >> 1  # all codes equal: balanced split by index
    diff = first ^ last
    bit = 0
    while (diff >> (bit + 1)) != 0:
        bit += 1
    # lowest index whose code has the top differing bit set
    a, b = lo + 1, hi - 1
    while a < b:
        mid = (a + b) >> 1
        if (int(codes[mid]) >> bit) & 1:
            b = mid
        else:
            a = mid + 1
    return a


def build(bmin: np.ndarray, bmax: np.ndarray):
    """Build an LBVH over boxes; returns (node_min, node_max, left, right, prim).

    Nodes are stored in DFS preorder with the root at index 0, so children
    always have larger indices than their parent.  Leaves have left = -1 and
    carry the primitive index in ``prim``; internal nodes have prim = -1.
    """
    n = bmin.shape[0]
    if n < 1:
        raise ValueError("build requires at least one box")
    cent = (bmin + bmax) * 0.5
    codes = morton_codes(cent)
    keys = (codes.astype(np.uint64) << np.uint64(32)) | np.arange(n, dtype=np.uint64)
    keys.sort()
    order = (keys & np.uint64(0xFFFFFFFF)).astype(np.int64)
    sorted_codes = (keys >> np.uint64(32)).astype(np.uint32)

    m = 2 * n - 1
    left = np.full(m, -1, dtype=np.int32)
    right = np.full(m, -1, dtype=np.int32)
    prim = np.full(m, -1, dtype=np.int32)

    codes_list = sorted_codes.tolist()
    order_list = order.tolist()
    next_node = 0
    stack = [(0, n)]
    while stack:
        lo, hi = stack.pop()
        node = next_node
        next_node += 1
        if hi - lo == 1:
            prim[node] = order_list[lo]
        else:
            split = _find_split(codes_list, lo, hi)
            nleft = split - lo
            left[node] = node + 1
            right[node] = node + 2 * nleft
            stack.append((split, hi))
            stack.append((lo, split))

    node_min = np.empty((m, 3), dtype=np.float64)
    node_max = np.empty((m, 3), dtype=np.float64)
    refit(node_min, node_max, left, right, prim, bmin, bmax)
    return node_min, node_max, left, right, prim


def refit(node_min, node_max, left, right, prim, bmin, bmax) -> None:
    """Recompute bounds bottom-up in place; topology untouched.

    Children have larger indices than parents (preorder layout), so a single
    reverse sweep is bottom-up.
    """
    m = left.shape[0]
    lft = left.tolist()
    rgt = right.tolist()
    prm = prim.tolist()
    for i in range(m - 1, -1, -1):
        if lft[i] < 0:
            p = prm[i]
            node_min[i] = bmin[p]
            node_max[i] = bmax[p]
        else:
            l, r = lft[i], rgt[i]
            np.minimum(node_min[l], node_min[r], out=node_min[i])
            np.maximum(node_max[l], node_max[r], out=node_max[i])


def query_point(node_min, node_max, left, right, prim, q) -> np.ndarray:
    """Indices of leaf boxes containing q (closed test), sorted ascending."""
    qx, qy, qz = float(q[0]), float(q[1]), float(q[2])
    nmin = node_min.tolist()
    nmax = node_max.tolist()
    lft = left.tolist()
    prm = prim.tolist()
    rgt = right.tolist()
    hits = []
    stack = [0]
    while stack:
        node = stack.pop()
        lo = nmin[node]
        hi = nmax[node]
        if (
            lo[0] <= qx <= hi[0]
            and lo[1] <= qy <= hi[1]
            and lo[2] <= qz <= hi[2]
        ):
            if lft[node] < 0:
                hits.append(prm[node])
            else:
                stack.append(rgt[node])
                stack.append(lft[node])
    hits.sort()
    return np.array(hits, dtype=np.int32)


# -- detectors ------------------------------------------------------------------


def detect(mode, node_min, node_max, left, right, prim, centers, radii):
    """Stream every ray's BVH hits through the mode's narrow-phase rules.

    Returns (pairs, candidates, deduped): ``pairs`` is an (m, 2) int32 array
    of canonical (min, max) emissions in emission order (not yet sorted or
    uniquified -- the dcd wrapper owns that), ``candidates`` counts narrow
    -phase distance tests, ``deduped`` counts hits that detected a collision
    but were suppressed by the mode's dedup rule.
    """
    n = centers.shape[0]
    nmin = node_min.tolist()
    nmax = node_max.tolist()
    lft = left.tolist()
    rgt = right.tolist()
    prm = prim.tolist()
    cx = centers[:, 0].tolist()
    cy = centers[:, 1].tolist()
    cz = centers[:, 2].tolist()
    rr = radii.tolist()

    out_i: list[int] = []
    out_j: list[int] = []
    candidates = 0
    deduped = 0
    for i in range(n):
        qx, qy, qz = cx[i], cy[i], cz[i]
        ri = rr[i]
        stack = [0]
        while stack:
            node = stack.pop()
            lo = nmin[node]
            hi = nmax[node]
            if not (
                lo[0] <= qx <= hi[0]
                and lo[1] <= qy <= hi[1]
                and lo[2] <= qz <= hi[2]
            ):
                continue
            if lft[node] >= 0:
                stack.append(rgt[node])
                stack.append(lft[node])
                continue
            j = prm[node]
            if j == i:
                continue  # self-hit: skipped, not a candidate
            candidates += 1
            dx = qx - cx[j]
            dy = qy - cy[j]
            dz = qz - cz[j]
            q2 = dx * dx + dy * dy + dz * dz
            rj = rr[j]
            if not _le_dist(q2, ri + rj):
                continue
            if mode == MODE_MOCHI:
                if _le_dist(q2, 2.0 * rj) and (j > i or _ge_dist(q2, 2.0 * ri)):
                    out_i.append(i if i < j else j)
                    out_j.append(j if i < j else i)
                else:
                    deduped += 1
            elif mode == MODE_FIXED:
                if j > i:
                    out_i.append(i)
                    out_j.append(j)
                else:
                    deduped += 1
            else:  # MODE_PROXY_ONLY: only the larger-radius ray may emit
                if _le_dist(q2, 2.0 * rj):
                    if ri > rj or (ri == rj and i < j):
                        out_i.append(i if i < j else j)
                        out_j.append(j if i < j else i)
                    else:
                        deduped += 1

    pairs = np.empty((len(out_i), 2), dtype=np.int32)
    pairs[:, 0] = out_i
    pairs[:, 1] = out_j
    return pairs, candidates, deduped


_BLOCK = 256


def detect_brute(centers, radii):
    """All-pairs narrow phase; returns ((m,2) int32 pairs, candidates)."""
    n = centers.shape[0]
    r = radii
    rows_i: list[np.ndarray] = []
    rows_j: list[np.ndarray] = []
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        ii, jj = _brute_block(centers, r, lo, hi)
        rows_i.append(ii)
        rows_j.append(jj)
    pairs = np.empty((sum(len(a) for a in rows_i), 2), dtype=np.int32)
    if len(pairs):
        pairs[:, 0] = np.concatenate(rows_i)
        pairs[:, 1] = np.concatenate(rows_j)
    return pairs, n * (n - 1) // 2


def _brute_mask_block(centers, r, lo, hi):
    """Boolean collision mask for rows [lo,hi) against columns (j > i only)."""
    n = centers.shape[0]
    dx = centers[lo:hi, 0, None] - centers[None, :, 0]
    dy = centers[lo:hi, 1, None] - centers[None, :, 1]
    dz = centers[lo:hi, 2, None] - centers[None, :, 2]
    q2 = dx * dx + dy * dy + dz * dz
    s = r[lo:hi, None] + r[None, :]
    t2 = s * s
    inside = q2 <= t2 * _BAND_LO
    band = ~inside & (q2 < t2 * _BAND_HI)
    if band.any():
        inside = inside | (band & (np.sqrt(q2) <= s))
    upper = np.arange(n)[None, :] > np.arange(lo, hi)[:, None]
    return inside & upper


def _brute_block(centers, r, lo, hi):
    ii, jj = np.nonzero(_brute_mask_block(centers, r, lo, hi))
    return (ii + lo).astype(np.int32), jj.astype(np.int32)


def brute_count(centers, radii, threads: int = 1) -> int:
    """Number of colliding pairs by exhaustive search (count only).

    ``threads`` is accepted for interface parity with the compiled backend;
    this implementation is vectorized but single-threaded.
    """
    n = centers.shape[0]
    total = 0
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        total += int(_brute_mask_block(centers, radii, lo, hi).sum())
    return total
