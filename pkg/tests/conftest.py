import numpy as np
import pytest

from mochi.geometry import Aabb, ParticleSystem, Vec3


def random_system(n, seed, r_min=0.01, r_max=0.05, box_side=1.0) -> ParticleSystem:
    """Random overlapping particle soup for detector tests."""
    rng = np.random.default_rng(seed)
    radii = rng.uniform(r_min, r_max, n)
    centers = rng.uniform(radii[:, None], box_side - radii[:, None], (n, 3))
    return ParticleSystem(centers=centers, radii=radii)


def random_boxes(n, seed, side=1.0, max_extent=0.1):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0.0, side, (n, 3))
    hi = lo + rng.uniform(0.0, max_extent, (n, 3))
    return lo, hi


def containment_scan(bmin, bmax, q):
    """Brute-force point-in-box scan: the query oracle."""
    return np.nonzero(np.all((bmin <= q) & (q <= bmax), axis=1))[0].astype(np.int32)


@pytest.fixture
def unit_box():
    return Aabb(Vec3(0.0, 0.0, 0.0), Vec3(1.0, 1.0, 1.0))
