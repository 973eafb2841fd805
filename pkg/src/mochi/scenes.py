"""Scene generation, the position-perturbation harness, and particle file I/O.

Random draws come from numpy's Philox generator keyed by (seed, stream), one
named stream per purpose (placement, radii, perturbation), so scenes
reproduce bit-for-bit across platforms and a change in one sampling stage
cannot shift another stage's stream.

The particle text format is one particle per line, "x y z r" with 9
significant decimal digits and LF line endings, preceded by an optional
"# density <value>" header from which masses are rederived on load.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .geometry import Aabb, ParticleSystem, Vec3

__all__ = [
    "SceneSpec",
    "SceneError",
    "SceneFormatError",
    "generate",
    "perturb",
    "save",
    "load",
    "sphere_mass",
    "radii_for_volume_fraction",
    "scene_for_ratio",
    "verification_scene",
]

PLACEMENTS = ("grid_jittered", "uniform_random")

_STREAM_PLACEMENT = 1
_STREAM_RADII = 2
_STREAM_PERTURB = 3

_MASK64 = (1 << 64) - 1


class SceneError(ValueError):
    """Scene specification cannot be realized (e.g. infeasible packing)."""


class SceneFormatError(ValueError):
    """Malformed particle file; carries the offending line number."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def _rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sphere_mass(radius, density):
    """Mass of a uniform-density sphere; accepts scalars or arrays."""
    return density * ((4.0 / 3.0) * math.pi) * (radius * radius * radius)


@dataclass
class SceneSpec:
    count: int
    box: Aabb
    radii_min: float
    radii_max: float
    density: float = 500.0
    seed: int = 0
    placement: str = "grid_jittered"

    def validate(self) -> None:
        if self.count < 1:
            raise SceneError(f"count must be >= 1, got {self.count}")
        if not 0.0 < self.radii_min <= self.radii_max:
            raise SceneError(
                f"need 0 < radii_min <= radii_max, got [{self.radii_min}, {self.radii_max}]"
            )
        if self.density <= 0.0:
            raise SceneError(f"density must be positive, got {self.density}")
        if self.placement not in PLACEMENTS:
            raise SceneError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        ext = self.box.extent()
        if self.placement == "grid_jittered":
            m = _grid_cells_per_axis(self.count)
            half = min(ext.x, ext.y, ext.z) / m / 2.0
            if half < self.radii_max:
                raise SceneError(
                    f"infeasible packing: {self.count} spheres of radius {self.radii_max} "
                    f"do not fit a {m}^3 grid in this box"
                )
        else:
            if min(ext.x, ext.y, ext.z) < 2.0 * self.radii_max:
                raise SceneError("box is smaller than the largest sphere")


def _grid_cells_per_axis(count: int) -> int:
    m = 1
    while m * m * m < count:
        m += 1
    return m


def generate(spec: SceneSpec) -> ParticleSystem:
    """Particles with radii uniform in [radii_min, radii_max], masses from the
    density, zero velocities, centers inside the box minus the radius margin.
    Deterministic given the seed."""
    spec.validate()
    n = spec.count
    radii = _rng(spec.seed, _STREAM_RADII).uniform(spec.radii_min, spec.radii_max, n)
    masses = sphere_mass(radii, spec.density)
    lo = np.array(spec.box.min, dtype=np.float64)
    hi = np.array(spec.box.max, dtype=np.float64)
    rng = _rng(spec.seed, _STREAM_PLACEMENT)

    if spec.placement == "uniform_random":
        u = rng.uniform(0.0, 1.0, (n, 3))
        r = radii[:, None]
        centers = (lo + r) + u * ((hi - lo) - 2.0 * r)
    else:
        m = _grid_cells_per_axis(n)
        cell = (hi - lo) / m
        idx = np.arange(n)
        cell_idx = np.stack([idx // (m * m), (idx // m) % m, idx % m], axis=1)
        cell_centers = lo + (cell_idx + 0.5) * cell
        amp = cell / 2.0 - radii[:, None]  # non-negative: validated above
        centers = cell_centers + rng.uniform(-1.0, 1.0, (n, 3)) * amp

    return ParticleSystem(centers=centers, radii=radii, masses=masses)


def perturb(particles: ParticleSystem, noise_min: float, noise_max: float,
            seed: int) -> ParticleSystem:
    """Displace each center by an independent random vector whose per-component
    magnitude is uniform in [noise_min, noise_max], with random sign.  Radii,
    masses and velocities are preserved exactly."""
    if not 0.0 <= noise_min <= noise_max:
        raise ValueError(f"need 0 <= noise_min <= noise_max, got [{noise_min}, {noise_max}]")
    n = len(particles)
    rng = _rng(seed, _STREAM_PERTURB)
    mag = rng.uniform(noise_min, noise_max, (n, 3))
    sign = rng.integers(0, 2, (n, 3)) * 2 - 1
    out = particles.copy()
    out.centers += sign * mag
    return out


# -- file I/O -------------------------------------------------------------------


def save(path, particles: ParticleSystem, density: float | None = None) -> None:
    """Write the scene in the text interchange format.

    The density header is derived from particle 0 unless given explicitly;
    per-particle masses are not representable in the format, so scenes with
    mixed densities round-trip centers and radii only.  Velocities are not
    stored either; loading yields particles at rest.
    """
    if density is None:
        if len(particles) == 0:
            raise ValueError("cannot infer density from an empty scene")
        density = float(particles.masses[0] / (((4.0 / 3.0) * math.pi) * float(particles.radii[0]) ** 3))
    with open(path, "w", newline="\n") as f:
        f.write(f"# density {density:.9g}\n")
        for (x, y, z), r in zip(particles.centers, particles.radii):
            f.write(f"{x:.9g} {y:.9g} {z:.9g} {r:.9g}\n")


def load(path) -> ParticleSystem:
    """Parse a particle text file; malformed lines are reported with their
    line number, a missing file raises FileNotFoundError, and an empty file
    is an error rather than an empty scene."""
    density = 1.0
    centers: list[tuple[float, float, float]] = []
    radii: list[float] = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                fields = text[1:].split()
                if len(fields) == 2 and fields[0] == "density":
                    try:
                        density = float(fields[1])
                    except ValueError:
                        raise SceneFormatError(path, lineno, f"bad density value {fields[1]!r}") from None
                continue
            fields = text.split()
            if len(fields) != 4:
                raise SceneFormatError(path, lineno, f"expected 4 fields 'x y z r', got {len(fields)}")
            try:
                x, y, z, r = (float(v) for v in fields)
            except ValueError:
                raise SceneFormatError(path, lineno, f"non-numeric field in {text!r}") from None
            if not all(math.isfinite(v) for v in (x, y, z, r)) or r <= 0.0:
                raise SceneFormatError(path, lineno, "coordinates must be finite and radius positive")
            centers.append((x, y, z))
            radii.append(r)
    if not centers:
        raise SceneFormatError(path, 1, "file contains no particles")
    radii_arr = np.array(radii, dtype=np.float64)
    return ParticleSystem(
        centers=np.array(centers, dtype=np.float64),
        radii=radii_arr,
        masses=sphere_mass(radii_arr, density),
    )


# -- parameterized scene families used by the sweeps ------------------------------


def _mean_cubed_radius_factor(ratio: float) -> float:
    """E[r^3] / r_min^3 for radii uniform in [r_min, ratio*r_min]."""
    if ratio <= 1.0:
        return 1.0
    return (ratio**4 - 1.0) / (4.0 * (ratio - 1.0))


def radii_for_volume_fraction(count: int, ratio: float, volume_fraction: float,
                              box: Aabb) -> tuple[float, float]:
    """(radii_min, radii_max) giving the requested expected solid volume
    fraction for radii uniform in [r, ratio*r].

    The maximum radius is capped at a quarter of the smallest box extent so
    placement stays feasible; tiny scenes may therefore land below the
    requested fraction.
    """
    ext = box.extent()
    volume = ext.x * ext.y * ext.z
    target = volume_fraction * volume / (count * (4.0 / 3.0) * math.pi * _mean_cubed_radius_factor(ratio))
    r_min = target ** (1.0 / 3.0)
    cap = min(ext.x, ext.y, ext.z) / 4.0
    if r_min * ratio > cap:
        r_min = cap / ratio
    return r_min, r_min * ratio


def scene_for_ratio(count: int, ratio: float, volume_fraction: float, seed: int,
                    box: Aabb | None = None, placement: str = "uniform_random",
                    density: float = 500.0) -> SceneSpec:
    """Scene spec with a given radii ratio at a fixed target volume fraction."""
    if box is None:
        box = Aabb(Vec3(0.0, 0.0, 0.0), Vec3(1.0, 1.0, 1.0))
    r_min, r_max = radii_for_volume_fraction(count, ratio, volume_fraction, box)
    return SceneSpec(
        count=count, box=box, radii_min=r_min, radii_max=r_max,
        density=density, seed=seed, placement=placement,
    )


VERIFY_RATIOS = (1.0, 1.2, 12.0, 120.0)


def verification_scene(master_seed: int, trial: int, max_particles: int = 2048) -> SceneSpec:
    """Randomized oracle-sweep scene for one trial.

    Radii ratios cycle through {1, 1.2, 12, 120}; the particle count is
    uniform in [2, max_particles] and the target volume fraction log-uniform
    in [0.1%, 30%], covering near-empty through heavily overlapping scenes.
    Placement is uniform_random so initial interpenetration is allowed.
    """
    rng = _rng(master_seed, 1000 + trial)
    ratio = VERIFY_RATIOS[trial % len(VERIFY_RATIOS)]
    n = int(rng.integers(2, max_particles + 1))
    frac = math.exp(rng.uniform(math.log(0.001), math.log(0.30)))
    return scene_for_ratio(n, ratio, frac, seed=master_seed + trial)
