"""Discrete collision detectors over rigid spheres.

Four detectors share one narrow-phase predicate (touching counts as
colliding) and one output shape:

* ``detect_mochi``      -- proxy-sphere reduction on a BVH of per-particle
                           proxy boxes; complete for arbitrary radii.
* ``detect_fixed_radius`` -- fixed-radius baseline on boxes of side
                           4 * max(radius); complete but wasteful for
                           non-uniform radii.
* ``detect_proxy_only`` -- deliberately incomplete variant (only the
                           larger-radius particle's ray may emit) used to
                           demonstrate the missed-collision failure mode.
* ``detect_brute``      -- the O(n^2) oracle.

Broad-phase hits stream straight through the narrow-phase rules; the
candidate list is never materialized, only final pairs are stored.  Pairs
are keyed canonically (i < j) and returned as a lexicographically sorted
array, so two detectors agree exactly iff their index arrays are equal.

Detection is read-only over the particle arrays and the BVH, so disjoint
query ranges may run in parallel workers with a set-union merge; the
counters below are plain sums and therefore order-insensitive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from ._backend import kernels
from .bvh import Bvh
from .geometry import CollisionPair, ParticleSystem, Vec3, spheres_collide

__all__ = [
    "DetectionResult",
    "DuplicatePairError",
    "process_hit",
    "detect_mochi",
    "detect_fixed_radius",
    "detect_proxy_only",
    "detect_brute",
    "count_brute",
    "detector",
    "DETECTOR_NAMES",
]


class DuplicatePairError(AssertionError):
    """A pair was emitted twice; raised only in verification mode."""


@dataclass
class DetectionResult:
    """Colliding pairs plus instrumentation counters.

    ``indices`` is an (m, 2) int32 array with i < j per row, sorted
    lexicographically and free of duplicates.  ``candidates_tested`` counts
    narrow-phase distance tests (self-hits are skipped and not counted);
    ``hits_deduplicated`` counts hits that detected a true collision but
    were suppressed by the detector's dedup rule (including the measure-zero
    case of a pair emitted by both rays and absorbed by set semantics).
    """

    indices: np.ndarray
    overlaps: np.ndarray
    normals: np.ndarray
    candidates_tested: int
    hits_deduplicated: int

    @property
    def pair_count(self) -> int:
        return len(self.indices)

    @cached_property
    def pairs(self) -> tuple[CollisionPair, ...]:
        return tuple(
            CollisionPair(int(i), int(j), float(ov), Vec3.from_array(nrm))
            for (i, j), ov, nrm in zip(self.indices, self.overlaps, self.normals)
        )

    def pair_index_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.indices}


def _pair_geometry(ps: ParticleSystem, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Overlap depth and i->j unit normal for each index pair.

    Coincident centers get normal (0,0,1) and overlap r_i + r_j, matching
    the scalar predicate.
    """
    if len(idx) == 0:
        return np.empty(0, dtype=np.float64), np.empty((0, 3), dtype=np.float64)
    ci = ps.centers[idx[:, 0]]
    cj = ps.centers[idx[:, 1]]
    d = cj - ci
    dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    overlaps = ps.radii[idx[:, 0]] + ps.radii[idx[:, 1]] - dist
    degenerate = dist == 0.0
    safe = np.where(degenerate, 1.0, dist)
    normals = d / safe[:, None]
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
        overlaps[degenerate] = ps.radii[idx[degenerate, 0]] + ps.radii[idx[degenerate, 1]]
    return overlaps, normals


def _finish(ps, raw_pairs, candidates, deduped, verify_unique=False) -> DetectionResult:
    """Sort emissions canonically, absorb duplicates, attach pair geometry."""
    if len(raw_pairs):
        order = np.lexsort((raw_pairs[:, 1], raw_pairs[:, 0]))
        sorted_pairs = raw_pairs[order]
        keep = np.ones(len(sorted_pairs), dtype=bool)
        keep[1:] = np.any(sorted_pairs[1:] != sorted_pairs[:-1], axis=1)
        dupes = int(len(sorted_pairs) - keep.sum())
        if dupes and verify_unique:
            first = sorted_pairs[~keep][0]
            raise DuplicatePairError(f"pair {tuple(first)} emitted more than once")
        deduped += dupes
        idx = np.ascontiguousarray(sorted_pairs[keep])
    else:
        idx = np.empty((0, 2), dtype=np.int32)
    overlaps, normals = _pair_geometry(ps, idx)
    return DetectionResult(idx, overlaps, normals, int(candidates), int(deduped))


# -- per-hit rule (scalar form) ---------------------------------------------------


def process_hit(ray_id: int, aabb_id: int, particles: ParticleSystem) -> Optional[CollisionPair]:
    """Narrow-phase rules applied to one broad-phase hit.

    The caller guarantees the hit occurred, i.e. the ray origin (center of
    ``ray_id``) lies inside the proxy box of ``aabb_id``.  Emits the pair iff
    all of:

    1. the spheres collide (r_i + r_j - dist >= 0),
    2. the ray origin is inside the proxy *sphere*, not just its box
       (2 r_j - dist >= 0),
    3. this ray wins the dedup tie-break (aabb_id > ray_id, or the mirror
       ray cannot detect: 2 r_i - dist <= 0).

    The returned pair is canonicalized to (min, max) index order.
    """
    if ray_id == aabb_id:
        raise ValueError("ray and AABB ids must be distinct")
    ci = particles.centers[ray_id]
    cj = particles.centers[aabb_id]
    ri = float(particles.radii[ray_id])
    rj = float(particles.radii[aabb_id])
    dx = float(ci[0]) - float(cj[0])
    dy = float(ci[1]) - float(cj[1])
    dz = float(ci[2]) - float(cj[2])
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if ri + rj - dist < 0.0:
        return None
    if 2.0 * rj - dist < 0.0:
        return None
    if not (aabb_id > ray_id or 2.0 * ri - dist <= 0.0):
        return None
    a, b = (ray_id, aabb_id) if ray_id < aabb_id else (aabb_id, ray_id)
    return spheres_collide(particles.particle(a), particles.particle(b), a, b)


# -- detectors ---------------------------------------------------------------------


def _check_particles(ps: ParticleSystem) -> None:
    if len(ps) < 1:
        raise ValueError("detection requires at least one particle")


def _proxy_bvh(ps: ParticleSystem, bvh: Optional[Bvh]) -> Bvh:
    if bvh is None:
        bmin, bmax = ps.proxy_aabbs()
        return Bvh.build_arrays(bmin, bmax)
    if bvh.primitive_count != len(ps):
        raise ValueError(
            f"BVH primitive count {bvh.primitive_count} != particle count {len(ps)}"
        )
    return bvh


def detect_mochi(particles: ParticleSystem, bvh: Optional[Bvh] = None,
                 *, verify_unique: bool = False) -> DetectionResult:
    """Proxy-sphere detection: complete for arbitrary radii.

    ``bvh`` must be built/refit over the proxy boxes of every particle; one
    is built on the fly when omitted.  With ``verify_unique`` a duplicate
    emission raises instead of being absorbed (used by the oracle sweeps).
    """
    _check_particles(particles)
    tree = _proxy_bvh(particles, bvh)
    raw, cand, dedup = kernels.detect(
        kernels.MODE_MOCHI, tree.node_min, tree.node_max, tree.left, tree.right,
        tree.prim, particles.centers, particles.radii,
    )
    return _finish(particles, raw, cand, dedup, verify_unique=verify_unique)


def detect_fixed_radius(particles: ParticleSystem) -> DetectionResult:
    """Fixed-radius baseline: boxes of side 4 * max(radius), dedup by i < j.

    Every collision is found from both directions here (dist <= r_i + r_j
    <= 2 r_max guarantees mutual box containment), so exactly one direction
    is discarded per pair.
    """
    _check_particles(particles)
    bmin, bmax = particles.baseline_aabbs()
    tree = Bvh.build_arrays(bmin, bmax)
    raw, cand, dedup = kernels.detect(
        kernels.MODE_FIXED, tree.node_min, tree.node_max, tree.left, tree.right,
        tree.prim, particles.centers, particles.radii,
    )
    return _finish(particles, raw, cand, dedup)


def detect_proxy_only(particles: ParticleSystem, bvh: Optional[Bvh] = None) -> DetectionResult:
    """Incomplete detector: only the larger-radius particle's ray may emit
    (ties fall back to the lower index).

    Misses pair (i, j) exactly when the larger's center lies outside the
    smaller's proxy sphere, i.e. r_big + r_small >= dist > 2 r_small.  Never
    reports false positives.
    """
    _check_particles(particles)
    tree = _proxy_bvh(particles, bvh)
    raw, cand, dedup = kernels.detect(
        kernels.MODE_PROXY_ONLY, tree.node_min, tree.node_max, tree.left, tree.right,
        tree.prim, particles.centers, particles.radii,
    )
    return _finish(particles, raw, cand, dedup)


def detect_brute(particles: ParticleSystem) -> DetectionResult:
    """O(n^2) oracle: tests all n(n-1)/2 unordered pairs."""
    if len(particles) < 1:
        raise ValueError("detection requires at least one particle")
    raw, cand = kernels.detect_brute(particles.centers, particles.radii)
    return _finish(particles, raw, cand, 0)


def count_brute(particles: ParticleSystem, threads: int = 1) -> int:
    """Colliding-pair count by exhaustive search; exact for any thread count."""
    return int(kernels.brute_count(particles.centers, particles.radii, threads))


DETECTOR_NAMES = ("mochi", "fixed_radius", "proxy_only", "brute")


def detector(name: str) -> Callable[..., DetectionResult]:
    """Detector registry used by the simulation loop and the CLI."""
    table = {
        "mochi": detect_mochi,
        "fixed_radius": detect_fixed_radius,
        "proxy_only": detect_proxy_only,
        "brute": detect_brute,
    }
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown detector {name!r}; expected one of {DETECTOR_NAMES}") from None
