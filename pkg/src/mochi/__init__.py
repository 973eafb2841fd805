"""Collision detection and DEM particle simulation over rigid spheres.

The broad phase runs on a software BVH; the default "mochi" detector indexes
per-particle proxy spheres (twice each radius) and exploits collision
symmetry so that one-directional detection suffices, staying complete for
arbitrarily non-uniform radii.  A fixed-radius baseline, a deliberately
incomplete proxy-only detector, and a brute-force oracle are included for
benchmarking and verification.
"""

from ._backend import BACKEND, get_backend
from .bvh import Bvh, BvhNode
from .dcd import (
    DetectionResult,
    DuplicatePairError,
    count_brute,
    detect_brute,
    detect_fixed_radius,
    detect_mochi,
    detect_proxy_only,
    detector,
    process_hit,
)
from .dem import (
    ConfigError,
    ConstantGravity,
    RotatingGravity,
    SimConfig,
    SimReport,
    SimState,
    apply_boundary,
    collision_force,
    gravity_vector,
    integrate,
    run,
    step,
)
from .geometry import (
    Aabb,
    CollisionPair,
    Particle,
    ParticleSystem,
    Vec3,
    baseline_aabb,
    point_in_aabb,
    point_in_sphere,
    proxy_aabb,
    proxy_radius,
    spheres_collide,
)
from .scenes import SceneError, SceneFormatError, SceneSpec, generate, load, perturb, save

__version__ = "0.1.0"
