"""DEM simulation loop: force resolution, boundaries, integration, and the
BVH refit/rebuild schedule.

Contact model is a linear spring-dashpot normal force (no friction or
tangential forces).  Integration is semi-implicit Euler; per-particle forces
are reset to zero after integration.  Pair contributions are accumulated in
canonical sorted-pair order (i-side then j-side within each pair), which
makes trajectories bitwise deterministic and detector-interchangeable: any
two detectors that report the same pair set produce identical trajectories.

Per-step timing is split Build / DCD / Update: DCD includes contact-force
computation, Update covers integration and boundary handling, Build covers
the per-iteration refit or rebuild (the initial build is reported
separately).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, TextIO, Union

import numpy as np

from . import dcd
from .bvh import Bvh
from .geometry import Aabb, CollisionPair, Particle, ParticleSystem, Vec3

__all__ = [
    "ConstantGravity",
    "RotatingGravity",
    "GravityMode",
    "SimConfig",
    "SimState",
    "SimReport",
    "ConfigError",
    "gravity_vector",
    "collision_force",
    "apply_boundary",
    "integrate",
    "step",
    "run",
]


class ConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class ConstantGravity:
    g: Vec3 = Vec3(0.0, 0.0, -9.8)


@dataclass(frozen=True)
class RotatingGravity:
    """Gravity of fixed magnitude rotating in the XZ plane:
    g(t) = magnitude * (sin(omega*t), 0, -cos(omega*t)).

    At t = 0 gravity points straight down and rotates toward +x.
    """

    magnitude: float = 9.8
    omega: float = 0.25 * math.pi


GravityMode = Union[ConstantGravity, RotatingGravity]


def gravity_vector(mode: GravityMode, t: float) -> np.ndarray:
    if isinstance(mode, ConstantGravity):
        return np.array(mode.g, dtype=np.float64)
    a = mode.omega * t
    return np.array(
        [mode.magnitude * math.sin(a), 0.0, -mode.magnitude * math.cos(a)],
        dtype=np.float64,
    )


@dataclass
class SimConfig:
    dt: float = 1e-4
    steps_per_frame: int = 100
    frames: int = 1
    gravity: GravityMode = field(default_factory=ConstantGravity)
    stiffness: float = 1e4  # contact spring constant, stable at dt=1e-4 for unit-cube scenes
    damping: float = 10.0  # normal dashpot constant
    restitution: float = 0.5
    box: Aabb = field(default_factory=lambda: Aabb(Vec3(0, 0, 0), Vec3(1, 1, 1)))
    rebuild_every: int = 0  # 0 = refit only; 1 = rebuild each iteration; n = every n-th
    detector: str = "mochi"

    def validate(self, particles: Optional[ParticleSystem] = None) -> None:
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.steps_per_frame < 1 or self.frames < 1:
            raise ConfigError("steps_per_frame and frames must be >= 1")
        if self.stiffness < 0.0 or self.damping < 0.0:
            raise ConfigError("stiffness and damping must be non-negative")
        if not 0.0 <= self.restitution <= 1.0:
            raise ConfigError(f"restitution must be in [0, 1], got {self.restitution}")
        if self.rebuild_every < 0:
            raise ConfigError("rebuild_every must be >= 0")
        dcd.detector(self.detector)  # raises on unknown name
        if particles is not None and len(particles):
            # capacity, not initial containment: stragglers are clamped back
            # inside by the first boundary application
            ext = self.box.extent()
            if 2.0 * float(particles.radii.max()) > min(ext.x, ext.y, ext.z):
                raise ConfigError("box cannot contain the largest particle")
            if self.stiffness > 0.0:
                # spring-dashpot stability rule of thumb: dt < 2*sqrt(m_min/k)
                dt_max = 2.0 * math.sqrt(float(particles.masses.min()) / self.stiffness)
                if self.dt >= dt_max:
                    raise ConfigError(
                        f"dt {self.dt:g} violates the stability bound 2*sqrt(m_min/k) = {dt_max:g}"
                    )


# -- scalar contracts (the vectorized step is property-tested against these) ------


def collision_force(pair: CollisionPair, particles: ParticleSystem,
                    stiffness: float, damping: float) -> tuple[Vec3, Vec3]:
    """Spring-dashpot normal force for one contact: (force on i, force on j).

    Force on j is (k*overlap - c*v_n) * n with n the i->j unit normal and
    v_n the normal component of the relative velocity v_j - v_i; force on i
    is its exact negation.
    """
    n = pair.normal
    vi = Vec3.from_array(particles.velocities[pair.i])
    vj = Vec3.from_array(particles.velocities[pair.j])
    vn = (vj - vi).dot(n)
    fj = n.scale(stiffness * pair.overlap - damping * vn)
    return -fj, fj


def integrate(p: Particle, g: Vec3, dt: float) -> Particle:
    """Semi-implicit Euler step; the accumulated force is consumed (reset)."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    inv_m = 1.0 / p.mass
    v = Vec3(
        p.velocity.x + (p.force.x * inv_m + g.x) * dt,
        p.velocity.y + (p.force.y * inv_m + g.y) * dt,
        p.velocity.z + (p.force.z * inv_m + g.z) * dt,
    )
    c = Vec3(p.center.x + v.x * dt, p.center.y + v.y * dt, p.center.z + v.z * dt)
    return replace(p, center=c, velocity=v, force=Vec3(0.0, 0.0, 0.0))


def apply_boundary(p: Particle, box: Aabb, e: float) -> Particle:
    """Clamp the sphere back inside the box and reflect the exiting velocity
    component, scaled by -e.  Axes are handled independently."""
    c = list(p.center)
    v = list(p.velocity)
    lo = list(box.min)
    hi = list(box.max)
    for k in range(3):
        if c[k] - p.radius < lo[k]:
            c[k] = lo[k] + p.radius
            v[k] = -e * v[k]
        elif c[k] + p.radius > hi[k]:
            c[k] = hi[k] - p.radius
            v[k] = -e * v[k]
    return replace(p, center=Vec3(*c), velocity=Vec3(*v))


# -- vectorized internals -----------------------------------------------------------


def _accumulate_forces(ps: ParticleSystem, result: dcd.DetectionResult,
                       stiffness: float, damping: float) -> None:
    m = result.pair_count
    if m == 0:
        return
    idx = result.indices
    nrm = result.normals
    vrel = ps.velocities[idx[:, 1]] - ps.velocities[idx[:, 0]]
    vn = (vrel * nrm).sum(axis=1)
    fj = (stiffness * result.overlaps - damping * vn)[:, None] * nrm
    # Per-pair contributions in canonical order: i-side then j-side per pair.
    contrib = np.empty((m, 2, 3), dtype=np.float64)
    contrib[:, 0, :] = -fj
    contrib[:, 1, :] = fj
    flat_idx = idx.reshape(-1).astype(np.int64)
    flat_w = contrib.reshape(-1, 3)
    n = len(ps)
    for k in range(3):
        ps.forces[:, k] += np.bincount(flat_idx, weights=flat_w[:, k], minlength=n)


def _integrate_system(ps: ParticleSystem, g: np.ndarray, dt: float) -> None:
    a = ps.forces / ps.masses[:, None] + g
    ps.velocities += a * dt
    ps.centers += ps.velocities * dt
    ps.forces[:] = 0.0


def _apply_boundary_system(ps: ParticleSystem, box: Aabb, e: float) -> None:
    lo = np.array(box.min, dtype=np.float64)
    hi = np.array(box.max, dtype=np.float64)
    r = ps.radii[:, None]
    c = ps.centers
    v = ps.velocities
    low = c - r < lo
    high = ~low & (c + r > hi)  # per axis: the min wall wins, as in the scalar form
    if low.any():
        wall = lo + r  # (n,3) clamped positions against the min walls
        c[low] = wall[low]
        v[low] = -e * v[low]
    if high.any():
        wall = hi - r
        c[high] = wall[high]
        v[high] = -e * v[high]


# -- state and loop -------------------------------------------------------------------


@dataclass
class PhaseTimers:
    build_ns: int = 0
    dcd_ns: int = 0
    update_ns: int = 0

    @property
    def total_ns(self) -> int:
        return self.build_ns + self.dcd_ns + self.update_ns


@dataclass
class SimState:
    particles: ParticleSystem
    time: float
    iteration: int
    bvh: Bvh
    phase_timers: PhaseTimers
    last_pair_count: int = 0

    @classmethod
    def create(cls, particles: ParticleSystem, config: SimConfig) -> tuple["SimState", int]:
        """Initial state with a freshly built proxy BVH; returns the state and
        the initial build time in ns."""
        config.validate(particles)
        t0 = time.perf_counter_ns()
        bmin, bmax = particles.proxy_aabbs()
        tree = Bvh.build_arrays(bmin, bmax)
        build_ns = time.perf_counter_ns() - t0
        return cls(particles, 0.0, 0, tree, PhaseTimers()), build_ns


def step(state: SimState, config: SimConfig) -> SimState:
    """Advance one timestep in place: detect, resolve, integrate, bound,
    refit/rebuild, advance counters.  Returns the (mutated) state."""
    ps = state.particles
    detect = dcd.detector(config.detector)

    t0 = time.perf_counter_ns()
    if config.detector in ("mochi", "proxy_only"):
        result = detect(ps, state.bvh)
    else:
        result = detect(ps)
    _accumulate_forces(ps, result, config.stiffness, config.damping)
    t1 = time.perf_counter_ns()

    g = gravity_vector(config.gravity, state.time)
    _integrate_system(ps, g, config.dt)
    _apply_boundary_system(ps, config.box, config.restitution)
    t2 = time.perf_counter_ns()

    bmin, bmax = ps.proxy_aabbs()
    if config.rebuild_every > 0 and (state.iteration + 1) % config.rebuild_every == 0:
        state.bvh = Bvh.build_arrays(bmin, bmax)
    else:
        state.bvh.refit_arrays(bmin, bmax)
    t3 = time.perf_counter_ns()

    state.phase_timers.dcd_ns += t1 - t0
    state.phase_timers.update_ns += t2 - t1
    state.phase_timers.build_ns += t3 - t2
    state.iteration += 1
    state.time += config.dt
    state.last_pair_count = result.pair_count
    return state


@dataclass
class SimReport:
    """Per-iteration pair counts and phase times, plus the initial build."""

    iterations: np.ndarray
    pairs: np.ndarray
    build_ns: np.ndarray
    dcd_ns: np.ndarray
    update_ns: np.ndarray
    initial_build_ns: int

    @property
    def total_build_ns(self) -> int:
        return int(self.initial_build_ns + self.build_ns.sum())

    @property
    def total_dcd_ns(self) -> int:
        return int(self.dcd_ns.sum())

    @property
    def total_update_ns(self) -> int:
        return int(self.update_ns.sum())

    @property
    def total_ns(self) -> int:
        return self.total_build_ns + self.total_dcd_ns + self.total_update_ns

    def write_csv(self, path, meta: Optional[dict] = None) -> None:
        with open(path, "w", newline="\n") as f:
            self._write(f, meta)

    def _write(self, f: TextIO, meta: Optional[dict]) -> None:
        f.write("# schema=1\n")
        for key, value in (meta or {}).items():
            f.write(f"# {key}={value}\n")
        f.write(f"# initial_build_ns={self.initial_build_ns}\n")
        f.write("iteration,pairs,build_ns,dcd_ns,update_ns\n")
        for row in zip(self.iterations, self.pairs, self.build_ns, self.dcd_ns, self.update_ns):
            f.write(",".join(str(int(v)) for v in row) + "\n")


def run(config: SimConfig, particles: ParticleSystem,
        out_dir: Optional[str] = None, export_frames: bool = False) -> SimReport:
    """Execute frames * steps_per_frame steps on a copy of ``particles``.

    With ``export_frames`` and an output directory, particle positions are
    written after each frame as frames/frame_%06d.txt in the scene text
    format.
    """
    from . import scenes  # local import: scenes depends on geometry only

    ps = particles.copy()
    state, initial_build_ns = SimState.create(ps, config)
    total = config.frames * config.steps_per_frame
    pairs = np.zeros(total, dtype=np.int64)
    build = np.zeros(total, dtype=np.int64)
    dcd_t = np.zeros(total, dtype=np.int64)
    update = np.zeros(total, dtype=np.int64)

    frames_dir = None
    if export_frames:
        if out_dir is None:
            raise ValueError("export_frames requires an output directory")
        frames_dir = os.path.join(out_dir, "frames")
        os.makedirs(frames_dir, exist_ok=True)

    it = 0
    for frame in range(config.frames):
        for _ in range(config.steps_per_frame):
            before = (state.phase_timers.build_ns, state.phase_timers.dcd_ns,
                      state.phase_timers.update_ns)
            step(state, config)
            pairs[it] = state.last_pair_count
            build[it] = state.phase_timers.build_ns - before[0]
            dcd_t[it] = state.phase_timers.dcd_ns - before[1]
            update[it] = state.phase_timers.update_ns - before[2]
            it += 1
        if frames_dir is not None:
            scenes.save(os.path.join(frames_dir, f"frame_{frame:06d}.txt"), state.particles)

    return SimReport(
        iterations=np.arange(total, dtype=np.int64),
        pairs=pairs,
        build_ns=build,
        dcd_ns=dcd_t,
        update_ns=update,
        initial_build_ns=initial_build_ns,
    )
