"""Core geometric types and the sphere / proxy-sphere / AABB predicates.

Everything here is a pure function over immutable values, safe to call from
any number of workers.  All math is evaluated at native double precision with
no reassociation, so the predicates are bitwise deterministic for a fixed
input order.  Containment tests are closed (boundaries count as inside), so
a broad phase built on these boxes can never be tighter than the narrow
phase at a boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, other: "Vec3") -> "Vec3":  # type: ignore[override]
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def scale(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Vec3":
        return cls(float(a[0]), float(a[1]), float(a[2]))


ZERO = Vec3(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Particle:
    """A rigid sphere: the simulation's unit of state."""

    center: Vec3
    radius: float
    mass: float = 1.0
    velocity: Vec3 = ZERO
    force: Vec3 = ZERO

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise ValueError(f"radius must be positive and finite, got {self.radius}")
        if not (self.mass > 0.0 and math.isfinite(self.mass)):
            raise ValueError(f"mass must be positive and finite, got {self.mass}")
        for name in ("center", "velocity", "force"):
            v = getattr(self, name)
            if not v.is_finite():
                raise ValueError(f"{name} has non-finite components: {v}")


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box with componentwise min <= max."""

    min: Vec3
    max: Vec3

    def __post_init__(self):
        if not (self.min.is_finite() and self.max.is_finite()):
            raise ValueError("Aabb corners must be finite")
        if self.min.x > self.max.x or self.min.y > self.max.y or self.min.z > self.max.z:
            raise ValueError(f"Aabb min must be <= max componentwise: {self}")

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(
            Vec3(min(self.min.x, other.min.x), min(self.min.y, other.min.y), min(self.min.z, other.min.z)),
            Vec3(max(self.max.x, other.max.x), max(self.max.y, other.max.y), max(self.max.z, other.max.z)),
        )

    def contains_box(self, other: "Aabb") -> bool:
        return (
            self.min.x <= other.min.x and self.min.y <= other.min.y and self.min.z <= other.min.z
            and self.max.x >= other.max.x and self.max.y >= other.max.y and self.max.z >= other.max.z
        )

    def extent(self) -> Vec3:
        return self.max - self.min


@dataclass(frozen=True)
class CollisionPair:
    """An unordered colliding pair, stored with i < j.

    ``normal`` points from particle i toward particle j and has unit length,
    except in the coincident-centers degenerate case where it is fixed to
    (0, 0, 1) and ``overlap`` equals the sum of radii.
    """

    i: int
    j: int
    overlap: float
    normal: Vec3

    def __post_init__(self):
        if not self.i < self.j:
            raise ValueError(f"pair indices must satisfy i < j, got ({self.i}, {self.j})")
        if self.overlap < 0.0:
            raise ValueError(f"overlap must be non-negative, got {self.overlap}")

    def key(self) -> tuple[int, int]:
        return (self.i, self.j)


# -- scalar predicates --------------------------------------------------------


def proxy_radius(p: Particle) -> float:
    """Radius of the concentric proxy sphere: twice the particle's radius."""
    return 2.0 * p.radius


def proxy_aabb(p: Particle) -> Aabb:
    """AABB of the proxy sphere: [center - 2r, center + 2r] componentwise."""
    d = 2.0 * p.radius
    c = p.center
    return Aabb(Vec3(c.x - d, c.y - d, c.z - d), Vec3(c.x + d, c.y + d, c.z + d))


def baseline_aabb(p: Particle, r_max: float) -> Aabb:
    """Fixed-radius baseline box of side 4*r_max around the particle center.

    Rejects r_max < p.radius: the baseline reduction requires the global
    maximum radius.
    """
    if r_max < p.radius:
        raise ValueError(f"r_max ({r_max}) must be >= particle radius ({p.radius})")
    d = 2.0 * r_max
    c = p.center
    return Aabb(Vec3(c.x - d, c.y - d, c.z - d), Vec3(c.x + d, c.y + d, c.z + d))


def sphere_distance(a: Vec3, b: Vec3) -> float:
    dx = a.x - b.x
    dy = a.y - b.y
    dz = a.z - b.z
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def contact_normal(ci: Vec3, cj: Vec3, dist: float) -> Vec3:
    """Unit normal from i toward j; (0,0,1) for coincident centers."""
    if dist == 0.0:
        return Vec3(0.0, 0.0, 1.0)
    d = cj - ci
    return Vec3(d.x / dist, d.y / dist, d.z / dist)


def spheres_collide(a: Particle, b: Particle, ia: int = 0, ib: int = 1) -> Optional[CollisionPair]:
    """Exact sphere-sphere test; touching (overlap exactly 0) counts.

    ``ia``/``ib`` supply the particle indices recorded in the returned pair,
    which is canonicalized to i < j with the normal oriented i -> j.
    """
    if ia == ib:
        raise ValueError("particle indices must be distinct")
    dist = sphere_distance(a.center, b.center)
    overlap = a.radius + b.radius - dist
    if overlap < 0.0:
        return None
    if dist == 0.0:
        normal = Vec3(0.0, 0.0, 1.0)
        overlap = a.radius + b.radius
        return CollisionPair(min(ia, ib), max(ia, ib), overlap, normal)
    normal = contact_normal(a.center, b.center, dist)
    if ia < ib:
        return CollisionPair(ia, ib, overlap, normal)
    return CollisionPair(ib, ia, overlap, -normal)


def point_in_aabb(q: Vec3, box: Aabb) -> bool:
    """Closed-box containment (boundary points are inside)."""
    return (
        box.min.x <= q.x <= box.max.x
        and box.min.y <= q.y <= box.max.y
        and box.min.z <= q.z <= box.max.z
    )


def point_in_sphere(q: Vec3, center: Vec3, radius: float) -> bool:
    """Closed-ball containment: ||q - center|| <= radius."""
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    return sphere_distance(q, center) <= radius


# -- particle collections ------------------------------------------------------


class ParticleSystem:
    """Structure-of-arrays particle storage used by the detectors and the
    simulation loop.

    Arrays are float64 and C-contiguous: ``centers`` (n,3), ``radii`` (n,),
    ``masses`` (n,), ``velocities`` (n,3), ``forces`` (n,3).
    """

    __slots__ = ("centers", "radii", "masses", "velocities", "forces")

    def __init__(self, centers, radii, masses=None, velocities=None, forces=None):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.radii = np.ascontiguousarray(radii, dtype=np.float64)
        n = len(self.radii)
        if self.centers.shape != (n, 3):
            raise ValueError(f"centers must have shape ({n}, 3), got {self.centers.shape}")
        self.masses = (
            np.ones(n, dtype=np.float64)
            if masses is None
            else np.ascontiguousarray(masses, dtype=np.float64)
        )
        self.velocities = (
            np.zeros((n, 3), dtype=np.float64)
            if velocities is None
            else np.ascontiguousarray(velocities, dtype=np.float64)
        )
        self.forces = (
            np.zeros((n, 3), dtype=np.float64)
            if forces is None
            else np.ascontiguousarray(forces, dtype=np.float64)
        )
        if self.masses.shape != (n,) or self.velocities.shape != (n, 3) or self.forces.shape != (n, 3):
            raise ValueError("inconsistent array shapes")
        if n and (not np.all(self.radii > 0.0) or not np.all(self.masses > 0.0)):
            raise ValueError("radii and masses must be positive")
        for a in (self.centers, self.radii, self.masses, self.velocities, self.forces):
            if not np.all(np.isfinite(a)):
                raise ValueError("particle arrays must be finite")

    def __len__(self) -> int:
        return len(self.radii)

    def particle(self, i: int) -> Particle:
        return Particle(
            center=Vec3.from_array(self.centers[i]),
            radius=float(self.radii[i]),
            mass=float(self.masses[i]),
            velocity=Vec3.from_array(self.velocities[i]),
            force=Vec3.from_array(self.forces[i]),
        )

    @classmethod
    def from_particles(cls, particles: Iterable[Particle]) -> "ParticleSystem":
        ps = list(particles)
        centers = np.array([p.center for p in ps], dtype=np.float64).reshape(len(ps), 3)
        return cls(
            centers=centers,
            radii=np.array([p.radius for p in ps], dtype=np.float64),
            masses=np.array([p.mass for p in ps], dtype=np.float64),
            velocities=np.array([p.velocity for p in ps], dtype=np.float64).reshape(len(ps), 3),
            forces=np.array([p.force for p in ps], dtype=np.float64).reshape(len(ps), 3),
        )

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(
            self.centers.copy(),
            self.radii.copy(),
            self.masses.copy(),
            self.velocities.copy(),
            self.forces.copy(),
        )

    def proxy_aabbs(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-particle proxy-sphere boxes as (min, max) arrays of shape (n,3)."""
        d = (2.0 * self.radii)[:, None]
        return self.centers - d, self.centers + d

    def baseline_aabbs(self, r_max: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Fixed-radius baseline boxes of side 4*r_max; r_max defaults to the
        input maximum."""
        if r_max is None:
            r_max = float(self.radii.max())
        if len(self) and r_max < float(self.radii.max()):
            raise ValueError(f"r_max ({r_max}) must be >= the maximum particle radius")
        d = 2.0 * r_max
        return self.centers - d, self.centers + d
