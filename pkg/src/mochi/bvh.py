"""Software bounding-volume hierarchy over AABBs.

Stands in for an opaque hardware acceleration structure: build, refit in
place, and exact point-containment queries.  Construction is a linear BVH
(Morton-code sort of box centroids, 30-bit codes over the scene bounds,
then top-down hierarchy emission); ties in the code sort are broken by the
original box index, and ranges of equal codes fall back to balanced splits
by index, so construction is fully deterministic.  Query results depend only
on the leaf boxes, never on tree shape.

A built Bvh is immutable from the query side and may be probed by any number
of concurrent readers; build and refit require exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels
from .geometry import Aabb, Vec3

__all__ = ["Bvh", "BvhNode", "build", "refit", "query_point"]


@dataclass(frozen=True)
class BvhNode:
    """View of one node: internal nodes carry child indices, leaves carry the
    primitive index."""

    bounds: Aabb
    left: Optional[int]
    right: Optional[int]
    prim: Optional[int]

    @property
    def is_leaf(self) -> bool:
        return self.prim is not None


class Bvh:
    """Binary hierarchy with nodes in DFS preorder (root at index 0)."""

    __slots__ = ("node_min", "node_max", "left", "right", "prim", "primitive_count")

    root = 0

    def __init__(self, node_min, node_max, left, right, prim, primitive_count):
        self.node_min = node_min
        self.node_max = node_max
        self.left = left
        self.right = right
        self.prim = prim
        self.primitive_count = primitive_count

    # -- construction ----------------------------------------------------------

    @classmethod
    def build_arrays(cls, bmin: np.ndarray, bmax: np.ndarray) -> "Bvh":
        bmin = np.ascontiguousarray(bmin, dtype=np.float64)
        bmax = np.ascontiguousarray(bmax, dtype=np.float64)
        n = bmin.shape[0]
        if n < 1:
            raise ValueError("cannot build a BVH over zero boxes")
        if bmin.shape != (n, 3) or bmax.shape != (n, 3):
            raise ValueError("box arrays must have shape (n, 3)")
        if np.any(bmin > bmax):
            raise ValueError("invalid boxes: min > max")
        node_min, node_max, left, right, prim = kernels.build(bmin, bmax)
        return cls(node_min, node_max, left, right, prim, n)

    @classmethod
    def from_aabbs(cls, boxes: Sequence[Aabb]) -> "Bvh":
        if len(boxes) < 1:
            raise ValueError("cannot build a BVH over zero boxes")
        bmin = np.array([b.min for b in boxes], dtype=np.float64)
        bmax = np.array([b.max for b in boxes], dtype=np.float64)
        return cls.build_arrays(bmin, bmax)

    # -- maintenance -----------------------------------------------------------

    def refit_arrays(self, bmin: np.ndarray, bmax: np.ndarray) -> "Bvh":
        """Replace leaf bounds and recompute internal bounds bottom-up.

        Topology (child and primitive indices) is unchanged.  Mutates this
        Bvh in place and returns it.
        """
        bmin = np.ascontiguousarray(bmin, dtype=np.float64)
        bmax = np.ascontiguousarray(bmax, dtype=np.float64)
        if bmin.shape[0] != self.primitive_count:
            raise ValueError(
                f"refit box count {bmin.shape[0]} != primitive count {self.primitive_count}"
            )
        if np.any(bmin > bmax):
            raise ValueError("invalid boxes: min > max")
        kernels.refit(self.node_min, self.node_max, self.left, self.right, self.prim, bmin, bmax)
        return self

    def refit_aabbs(self, boxes: Sequence[Aabb]) -> "Bvh":
        if len(boxes) != self.primitive_count:
            raise ValueError(f"refit box count {len(boxes)} != primitive count {self.primitive_count}")
        bmin = np.array([b.min for b in boxes], dtype=np.float64)
        bmax = np.array([b.max for b in boxes], dtype=np.float64)
        return self.refit_arrays(bmin, bmax)

    # -- queries ----------------------------------------------------------------

    def query_point(self, q) -> np.ndarray:
        """Indices of primitives whose box contains q (closed test), sorted.

        Exact with respect to the leaf boxes of the last build/refit: no
        false positives and no false negatives.
        """
        return kernels.query_point(self.node_min, self.node_max, self.left, self.right, self.prim, q)

    # -- introspection ----------------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self.left)

    def node(self, i: int) -> BvhNode:
        bounds = Aabb(Vec3.from_array(self.node_min[i]), Vec3.from_array(self.node_max[i]))
        if self.left[i] < 0:
            return BvhNode(bounds, None, None, int(self.prim[i]))
        return BvhNode(bounds, int(self.left[i]), int(self.right[i]), None)

    def validate(self, bmin: np.ndarray | None = None, bmax: np.ndarray | None = None) -> None:
        """Check structural invariants; with boxes given, also check bounds.

        Verifies: every primitive appears in exactly one leaf, every node is
        reachable from the root exactly once, children bounds are contained
        in parent bounds, internal bounds equal the union of children, and
        (optionally) leaf bounds equal the primitive boxes.
        """
        m = self.node_count
        seen = np.zeros(m, dtype=bool)
        prim_seen = np.zeros(self.primitive_count, dtype=bool)
        stack = [self.root]
        while stack:
            i = stack.pop()
            if seen[i]:
                raise AssertionError(f"node {i} reachable more than once")
            seen[i] = True
            if self.left[i] < 0:
                p = int(self.prim[i])
                if prim_seen[p]:
                    raise AssertionError(f"primitive {p} in more than one leaf")
                prim_seen[p] = True
                if bmin is not None:
                    if not (np.array_equal(self.node_min[i], bmin[p]) and np.array_equal(self.node_max[i], bmax[p])):
                        raise AssertionError(f"leaf {i} bounds do not match primitive {p}")
            else:
                l, r = int(self.left[i]), int(self.right[i])
                stack.extend((l, r))
                want_min = np.minimum(self.node_min[l], self.node_min[r])
                want_max = np.maximum(self.node_max[l], self.node_max[r])
                if not (np.array_equal(self.node_min[i], want_min) and np.array_equal(self.node_max[i], want_max)):
                    raise AssertionError(f"internal node {i} bounds are not the union of its children")
        if not seen.all():
            raise AssertionError("unreachable nodes present")
        if not prim_seen.all():
            raise AssertionError("missing primitives in leaves")


# -- module-level operation forms ------------------------------------------------


def build(boxes: Sequence[Aabb]) -> Bvh:
    """Build a Bvh over a sequence of boxes (at least one)."""
    return Bvh.from_aabbs(boxes)


def refit(bvh: Bvh, boxes: Sequence[Aabb]) -> Bvh:
    """Refit ``bvh`` to new boxes; same topology, updated bounds (in place)."""
    return bvh.refit_aabbs(boxes)


def query_point(bvh: Bvh, q: Vec3) -> np.ndarray:
    """Exactly the primitive indices whose leaf box contains ``q``."""
    return bvh.query_point(q)
