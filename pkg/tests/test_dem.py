import math

import numpy as np
import pytest

from mochi import dcd, dem
from mochi.dem import (
    ConfigError,
    ConstantGravity,
    RotatingGravity,
    SimConfig,
    SimState,
    apply_boundary,
    collision_force,
    gravity_vector,
    integrate,
    run,
    step,
)
from mochi.geometry import Aabb, CollisionPair, Particle, ParticleSystem, Vec3
from mochi.scenes import SceneSpec, generate

from conftest import random_system

NO_GRAVITY = ConstantGravity(Vec3(0.0, 0.0, 0.0))
HUGE_BOX = Aabb(Vec3(-1e6, -1e6, -1e6), Vec3(1e6, 1e6, 1e6))


def two_body(dist, r=1.0, v0=0.0, v1=0.0):
    return ParticleSystem(
        centers=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, dist]]),
        radii=np.array([r, r]),
        masses=np.array([1.0, 1.0]),
        velocities=np.array([[0.0, 0.0, v0], [0.0, 0.0, v1]]),
    )


class TestGravity:
    def test_rotating_phase_and_magnitude(self):
        g = RotatingGravity(magnitude=9.8, omega=0.25 * math.pi)
        assert np.allclose(gravity_vector(g, 0.0), [0.0, 0.0, -9.8])
        # rotates toward +x, magnitude preserved, confined to XZ
        for t in (0.1, 0.5, 1.0, 2.0, 7.3):
            v = gravity_vector(g, t)
            assert v[1] == 0.0
            assert np.hypot(v[0], v[2]) == pytest.approx(9.8, rel=1e-12)
        assert gravity_vector(g, 0.1)[0] > 0.0
        # quarter period: 0.25*pi rad/s -> 2 s per quarter turn
        assert np.allclose(gravity_vector(g, 2.0), [9.8, 0.0, 0.0], atol=1e-12)


class TestCollisionForce:
    def test_touching_at_rest_is_zero(self):
        ps = two_body(2.0)
        pair = CollisionPair(0, 1, 0.0, Vec3(0, 0, 1))
        fi, fj = collision_force(pair, ps, stiffness=1000.0, damping=5.0)
        assert fi == Vec3(0, 0, 0) and fj == Vec3(0, 0, 0)

    def test_static_spring_force(self):
        ps = two_body(1.9)
        pair = CollisionPair(0, 1, 0.1, Vec3(0, 0, 1))
        fi, fj = collision_force(pair, ps, stiffness=1000.0, damping=0.0)
        assert fj == Vec3(0.0, 0.0, pytest.approx(100.0, rel=1e-12))
        assert fi == Vec3(0.0, 0.0, pytest.approx(-100.0, rel=1e-12))

    def test_damping_adds_to_repulsion_on_approach(self):
        ps = two_body(1.9, v0=1.0, v1=-1.0)  # head-on approach, v_n = -2
        pair = CollisionPair(0, 1, 0.1, Vec3(0, 0, 1))
        _, fj_undamped = collision_force(pair, ps, stiffness=1000.0, damping=0.0)
        _, fj = collision_force(pair, ps, stiffness=1000.0, damping=5.0)
        assert fj.z > fj_undamped.z
        assert fj.z == pytest.approx(100.0 + 10.0, rel=1e-12)

    def test_equal_and_opposite_exactly(self):
        ps = two_body(1.7, v0=0.3, v1=-0.9)
        pair = CollisionPair(0, 1, 0.3, Vec3(0, 0, 1))
        fi, fj = collision_force(pair, ps, stiffness=123.0, damping=4.5)
        assert fi == -fj


class TestIntegrate:
    def test_drift_without_forces(self):
        p = Particle(center=Vec3(0, 0, 0), radius=0.1, velocity=Vec3(1, 2, 3))
        out = integrate(p, Vec3(0, 0, 0), dt=0.5)
        assert out.center == Vec3(0.5, 1.0, 1.5)
        assert out.velocity == p.velocity

    def test_freefall_single_step(self):
        p = Particle(center=Vec3(0, 0, 0), radius=0.1)
        out = integrate(p, Vec3(0, 0, -9.8), dt=1e-4)
        assert out.velocity.z == pytest.approx(-9.8e-4, rel=1e-12)
        assert out.center.z == pytest.approx(-9.8e-8, rel=1e-12)

    def test_force_consumed(self):
        p = Particle(center=Vec3(0, 0, 0), radius=0.1, mass=2.0, force=Vec3(4, 0, 0))
        out = integrate(p, Vec3(0, 0, 0), dt=0.1)
        assert out.velocity.x == pytest.approx(0.2, rel=1e-12)
        assert out.force == Vec3(0, 0, 0)

    def test_matches_vectorized_path(self):
        ps = random_system(50, seed=8)
        rng = np.random.default_rng(9)
        ps.velocities[:] = rng.normal(0, 1, (50, 3))
        ps.forces[:] = rng.normal(0, 1, (50, 3))
        g = np.array([0.3, -0.2, -9.8])
        expected = [integrate(ps.particle(i), Vec3.from_array(g), 1e-3) for i in range(50)]
        dem._integrate_system(ps, g, 1e-3)
        for i, p in enumerate(expected):
            assert tuple(ps.centers[i]) == tuple(p.center)
            assert tuple(ps.velocities[i]) == tuple(p.velocity)


class TestApplyBoundary:
    def test_inside_unchanged(self, unit_box):
        p = Particle(center=Vec3(0.5, 0.5, 0.5), radius=0.1, velocity=Vec3(1, 1, 1))
        assert apply_boundary(p, unit_box, e=0.5) == p

    def test_floor_clamp_and_reflect(self, unit_box):
        p = Particle(center=Vec3(0.5, 0.5, 0.05), radius=0.1, velocity=Vec3(0, 0, -1.0))
        out = apply_boundary(p, unit_box, e=0.5)
        assert out.center.z == pytest.approx(0.1, rel=1e-12)
        assert out.velocity.z == pytest.approx(0.5, rel=1e-12)

    def test_corner_reflects_axes_independently(self, unit_box):
        p = Particle(center=Vec3(0.01, 0.99, 0.5), radius=0.05, velocity=Vec3(-2.0, 3.0, 0.7))
        out = apply_boundary(p, unit_box, e=1.0)
        assert out.center == Vec3(0.05, 0.95, 0.5)
        assert out.velocity == Vec3(2.0, -3.0, 0.7)

    def test_matches_vectorized_path(self, unit_box):
        ps = random_system(80, seed=10, r_min=0.01, r_max=0.02)
        rng = np.random.default_rng(11)
        ps.centers[:] = rng.uniform(-0.05, 1.05, (80, 3))
        ps.velocities[:] = rng.normal(0, 2, (80, 3))
        expected = [apply_boundary(ps.particle(i), unit_box, 0.4) for i in range(80)]
        dem._apply_boundary_system(ps, unit_box, 0.4)
        for i, p in enumerate(expected):
            assert tuple(ps.centers[i]) == tuple(p.center)
            assert tuple(ps.velocities[i]) == tuple(p.velocity)


class TestConfig:
    def test_defaults_valid(self):
        SimConfig().validate()

    def test_rejects_bad_dt(self):
        with pytest.raises(ConfigError):
            SimConfig(dt=0.0).validate()

    def test_rejects_bad_restitution(self):
        with pytest.raises(ConfigError):
            SimConfig(restitution=1.5).validate()

    def test_rejects_unknown_detector(self):
        with pytest.raises(ValueError):
            SimConfig(detector="magic").validate()

    def test_stability_bound(self):
        ps = random_system(10, seed=1, r_min=0.01, r_max=0.01)
        ps.masses[:] = 1e-9
        with pytest.raises(ConfigError, match="stability"):
            SimConfig(dt=1e-4, stiffness=1e4).validate(ps)

    def test_box_must_fit_largest_particle(self):
        ps = random_system(10, seed=2, r_min=0.4, r_max=0.6, box_side=2.0)
        with pytest.raises(ConfigError, match="contain"):
            SimConfig(box=Aabb(Vec3(0, 0, 0), Vec3(1, 1, 1))).validate(ps)

    def test_out_of_box_particles_clamped_on_first_step(self):
        ps = random_system(20, seed=3, r_min=0.02, r_max=0.04, box_side=2.0)
        config = SimConfig(box=Aabb(Vec3(0, 0, 0), Vec3(1, 1, 1)), gravity=NO_GRAVITY)
        state, _ = SimState.create(ps, config)
        step(state, config)
        r = state.particles.radii[:, None]
        assert np.all(state.particles.centers - r >= 0.0)
        assert np.all(state.particles.centers + r <= 1.0)


def small_scene(n=300, seed=0):
    return generate(SceneSpec(
        count=n, box=Aabb(Vec3(0, 0, 0), Vec3(1, 1, 1)),
        radii_min=0.015, radii_max=0.03, density=500.0, seed=seed,
    ))


class TestStep:
    def test_fixed_point_when_nothing_moves(self):
        ps = small_scene(64)
        config = SimConfig(gravity=NO_GRAVITY, detector="mochi")
        state, _ = SimState.create(ps, config)
        before_centers = state.particles.centers.copy()
        step(state, config)
        assert np.array_equal(state.particles.centers, before_centers)
        assert np.all(state.particles.velocities == 0.0)
        assert state.iteration == 1 and state.time == config.dt

    def test_force_symmetry_within_step(self):
        ps = random_system(200, seed=14, r_min=0.03, r_max=0.09)
        result = dcd.detect_mochi(ps)
        assert result.pair_count > 0
        dem._accumulate_forces(ps, result, stiffness=1e4, damping=10.0)
        net = ps.forces.sum(axis=0)
        scale = np.abs(ps.forces).sum()
        assert np.all(np.abs(net) <= 1e-6 * max(scale, 1.0))

    def test_boundary_containment_over_steps(self):
        ps = small_scene(200, seed=3)
        config = SimConfig(dt=1e-3, stiffness=100.0, damping=1.0, restitution=0.4)
        config.validate(ps)
        state, _ = SimState.create(ps, config)
        lo = np.array(config.box.min)
        hi = np.array(config.box.max)
        for _ in range(200):
            step(state, config)
            r = state.particles.radii[:, None]
            assert np.all(state.particles.centers - r >= lo)
            assert np.all(state.particles.centers + r <= hi)

    def test_momentum_conservation(self):
        ps = small_scene(200, seed=4)
        rng = np.random.default_rng(5)
        ps.velocities[:] = rng.normal(0.0, 0.05, ps.velocities.shape)
        config = SimConfig(dt=1e-4, gravity=NO_GRAVITY, damping=0.0, box=HUGE_BOX)
        state, _ = SimState.create(ps, config)
        p0 = (ps.masses[:, None] * ps.velocities).sum(axis=0)
        for _ in range(300):
            step(state, config)
        p1 = (state.particles.masses[:, None] * state.particles.velocities).sum(axis=0)
        assert np.linalg.norm(p1 - p0) <= 1e-5 * np.linalg.norm(p0)

    def test_detector_interchangeability_bitwise(self):
        results = {}
        for name in ("mochi", "fixed_radius", "brute"):
            ps = small_scene(150, seed=6)
            rng = np.random.default_rng(7)
            ps.velocities[:] = rng.normal(0.0, 0.2, ps.velocities.shape)
            config = SimConfig(dt=1e-3, stiffness=100.0, detector=name)
            state, _ = SimState.create(ps, config)
            for _ in range(25):
                step(state, config)
            results[name] = (state.particles.centers.copy(), state.particles.velocities.copy())
        base_c, base_v = results["mochi"]
        for name in ("fixed_radius", "brute"):
            assert np.array_equal(results[name][0], base_c), name
            assert np.array_equal(results[name][1], base_v), name

    def test_rebuild_schedule_produces_same_trajectories(self):
        outputs = []
        for rebuild_every in (0, 1, 7):
            ps = small_scene(120, seed=8)
            config = SimConfig(dt=1e-3, stiffness=100.0, rebuild_every=rebuild_every)
            state, _ = SimState.create(ps, config)
            for _ in range(30):
                step(state, config)
            outputs.append(state.particles.centers.copy())
        assert np.array_equal(outputs[0], outputs[1])
        assert np.array_equal(outputs[0], outputs[2])

    def test_energy_non_increasing_with_damping(self):
        ps = small_scene(150, seed=9)
        rng = np.random.default_rng(10)
        ps.velocities[:] = rng.normal(0.0, 0.3, ps.velocities.shape)
        config = SimConfig(dt=1e-3, stiffness=100.0, damping=2.0, restitution=0.5,
                           gravity=NO_GRAVITY)
        state, _ = SimState.create(ps, config)
        def kinetic():
            v2 = (state.particles.velocities ** 2).sum(axis=1)
            return float(0.5 * (state.particles.masses * v2).sum())
        samples = [kinetic()]
        for _ in range(5):
            for _ in range(100):
                step(state, config)
            samples.append(kinetic())
        for a, b in zip(samples, samples[1:]):
            assert b <= a * (1.0 + 1e-6)


class TestRun:
    def test_single_step(self):
        ps = small_scene(32)
        config = SimConfig(frames=1, steps_per_frame=1)
        report = run(config, ps)
        assert len(report.iterations) == 1

    def test_report_shape_and_input_untouched(self):
        ps = small_scene(64)
        before = ps.centers.copy()
        config = SimConfig(frames=2, steps_per_frame=5)
        report = run(config, ps)
        assert len(report.iterations) == 10
        assert np.array_equal(ps.centers, before)
        assert report.total_ns >= report.total_dcd_ns

    def test_csv_shape(self, tmp_path):
        ps = small_scene(32)
        config = SimConfig(frames=1, steps_per_frame=7)
        report = run(config, ps)
        path = tmp_path / "report.csv"
        report.write_csv(path, meta={"command": "test", "seed": 0})
        lines = path.read_text().splitlines()
        assert lines[0] == "# schema=1"
        header_idx = next(i for i, l in enumerate(lines) if not l.startswith("#"))
        assert lines[header_idx] == "iteration,pairs,build_ns,dcd_ns,update_ns"
        assert len(lines) - header_idx - 1 == 7

    def test_frame_export(self, tmp_path):
        from mochi.scenes import load

        ps = small_scene(16)
        config = SimConfig(frames=3, steps_per_frame=2)
        run(config, ps, out_dir=str(tmp_path), export_frames=True)
        for f in range(3):
            frame = load(tmp_path / "frames" / f"frame_{f:06d}.txt")
            assert len(frame) == 16
