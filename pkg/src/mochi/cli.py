"""Command-line front end: simulations, verification sweeps, detector
benchmarks, the perturbation study, and scene generation.

Every command is fully specified by flags (no prompts).  Settings resolve
as flags > config file > defaults, where the config file is a flat
``key = value`` format keyed by the flag names.  The effective settings and
seed are echoed into the header of every output artifact, so any run can be
reproduced from its own output.  Exit status: 0 success, 1 verification
failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import dcd, dem
from ._backend import BACKEND
from .dem import ConfigError, ConstantGravity, RotatingGravity, SimConfig
from .geometry import Aabb, ParticleSystem, Vec3
from .scenes import (
    SceneError,
    SceneFormatError,
    SceneSpec,
    generate,
    load,
    perturb,
    save,
    scene_for_ratio,
    verification_scene,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2

_DETECTOR_FLAGS = {"mochi": "mochi", "fixed": "fixed_radius",
                   "proxy-only": "proxy_only", "brute": "brute"}
_PLACEMENT_FLAGS = {"grid": "grid_jittered", "uniform": "uniform_random"}

# flag name -> (converter, default); None defaults mean "not set"
_SETTINGS: dict[str, tuple] = {
    "particles": (int, 10000),
    "box": (str, "1"),
    "radii_min": (float, 0.005),
    "radii_max": (float, 0.01),
    "density": (float, 500.0),
    "seed": (int, 0),
    "placement": (str, "grid"),
    "scene": (str, None),
    "dt": (float, 1e-4),
    "steps": (int, 100),
    "frames": (int, 1),
    "gravity": (str, "const"),
    "omega": (float, 0.25 * math.pi),
    "stiffness": (float, 1e4),
    "damping": (float, 10.0),
    "restitution": (float, 0.5),
    "detector": (str, "mochi"),
    "rebuild_every": (int, 0),
    "threads": (int, 1),
    "out": (str, "out"),
    "export_frames": (bool, False),
    "trials": (int, 1000),
    "max_particles": (int, 2048),
    "ratios": (str, "1.2,12,120"),
    "volume_fraction": (float, 0.05),
    "repetitions": (int, 3),
    "variants": (int, 30),
    "noise_min": (float, 1e-6),
    "noise_max": (float, 1e-5),
}


def _parse_config_file(path: str) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, _, raw = text.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _SETTINGS:
                raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
            conv, _ = _SETTINGS[key]
            raw = raw.strip()
            if conv is bool:
                values[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                values[key] = conv(raw)
    return values


class Settings:
    """Effective settings for one command run (flags > config > defaults)."""

    def __init__(self, args: argparse.Namespace):
        config = {}
        if getattr(args, "config", None):
            config = _parse_config_file(args.config)
        self._values = {}
        for key, (_, default) in _SETTINGS.items():
            flag_value = getattr(args, key, None)
            if flag_value is not None:
                self._values[key] = flag_value
            elif key in config:
                self._values[key] = config[key]
            else:
                self._values[key] = default

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def meta(self, command: str) -> dict:
        meta = {"command": command, "backend": BACKEND}
        for key, value in self._values.items():
            if value is not None:
                meta[key] = value
        return meta


def _parse_box(text: str) -> Aabb:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        s = parts[0]
        return Aabb(Vec3(0.0, 0.0, 0.0), Vec3(s, s, s))
    if len(parts) == 6:
        return Aabb(Vec3(*parts[:3]), Vec3(*parts[3:]))
    raise ValueError(f"--box expects a cube side or x0,y0,z0,x1,y1,z1, got {text!r}")


def _scene_spec(s: Settings) -> SceneSpec:
    return SceneSpec(
        count=s.particles,
        box=_parse_box(s.box),
        radii_min=s.radii_min,
        radii_max=s.radii_max,
        density=s.density,
        seed=s.seed,
        placement=_PLACEMENT_FLAGS.get(s.placement, s.placement),
    )


def _load_or_generate(s: Settings) -> ParticleSystem:
    if s.scene:
        return load(s.scene)
    return generate(_scene_spec(s))


def _sim_config(s: Settings) -> SimConfig:
    if s.gravity == "rotating":
        gravity = RotatingGravity(magnitude=9.8, omega=s.omega)
    elif s.gravity == "const":
        gravity = ConstantGravity(Vec3(0.0, 0.0, -9.8))
    else:
        raise ConfigError(f"--gravity must be 'const' or 'rotating', got {s.gravity!r}")
    detector = _DETECTOR_FLAGS.get(s.detector, s.detector)
    return SimConfig(
        dt=s.dt,
        steps_per_frame=s.steps,
        frames=s.frames,
        gravity=gravity,
        stiffness=s.stiffness,
        damping=s.damping,
        restitution=s.restitution,
        box=_parse_box(s.box),
        rebuild_every=s.rebuild_every,
        detector=detector,
    )


def _write_meta_header(f, meta: dict) -> None:
    f.write("# schema=1\n")
    for key, value in meta.items():
        f.write(f"# {key}={value}\n")


# -- commands -----------------------------------------------------------------------


def cmd_gen(s: Settings) -> int:
    ps = generate(_scene_spec(s))
    out = s.out
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save(out, ps, density=s.density)
    print(f"wrote {len(ps)} particles to {out}")
    return EXIT_OK


def cmd_simulate(s: Settings) -> int:
    ps = _load_or_generate(s)
    config = _sim_config(s)
    config.validate(ps)  # ConfigError -> usage exit in main()
    os.makedirs(s.out, exist_ok=True)
    report = dem.run(config, ps, out_dir=s.out, export_frames=s.export_frames)
    report_path = os.path.join(s.out, "report.csv")
    report.write_csv(report_path, meta=s.meta("simulate"))
    print(f"backend={BACKEND} detector={config.detector} particles={len(ps)} "
          f"steps={config.frames * config.steps_per_frame}")
    print(f"build={report.total_build_ns} dcd={report.total_dcd_ns} "
          f"update={report.total_update_ns} total={report.total_ns} (ns)")
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_verify(s: Settings) -> int:
    trials = s.trials
    for trial in range(trials):
        spec = verification_scene(s.seed, trial, max_particles=s.max_particles)
        ps = generate(spec)
        oracle = dcd.detect_brute(ps)
        try:
            mochi_result = dcd.detect_mochi(ps, verify_unique=True)
        except dcd.DuplicatePairError as exc:
            print(f"DUPLICATE trial={trial} scene_seed={spec.seed} {exc}")
            print(f"reproduce: seed={s.seed} trial={trial} spec={spec}")
            return EXIT_VERIFY_FAILED
        fixed_result = dcd.detect_fixed_radius(ps)
        for name, result in (("mochi", mochi_result), ("fixed", fixed_result)):
            if not np.array_equal(result.indices, oracle.indices):
                missing = oracle.pair_index_set() - result.pair_index_set()
                spurious = result.pair_index_set() - oracle.pair_index_set()
                print(f"MISMATCH detector={name} trial={trial} scene_seed={spec.seed} "
                      f"missing={len(missing)} spurious={len(spurious)}")
                print(f"reproduce: seed={s.seed} trial={trial} spec={spec}")
                return EXIT_VERIFY_FAILED
    print(f"verify: {trials} trials OK (n in [2, {s.max_particles}], "
          f"ratios cycling {'/'.join(str(r) for r in ((1.0, 1.2, 12.0, 120.0)))})")
    return EXIT_OK


def cmd_bench(s: Settings) -> int:
    ratios = [float(v) for v in s.ratios.split(",")]
    box = _parse_box(s.box)
    rows = []
    for ratio in ratios:
        spec = scene_for_ratio(s.particles, ratio, s.volume_fraction, seed=s.seed, box=box)
        ps = generate(spec)

        def best_ns(fn):
            best = None
            for _ in range(max(1, s.repetitions)):
                t0 = time.perf_counter_ns()
                fn()
                elapsed = time.perf_counter_ns() - t0
                best = elapsed if best is None else min(best, elapsed)
            return best

        mochi_result = dcd.detect_mochi(ps)
        fixed_result = dcd.detect_fixed_radius(ps)
        mochi_ns = best_ns(lambda: dcd.detect_mochi(ps))
        fixed_ns = best_ns(lambda: dcd.detect_fixed_radius(ps))
        ratio_col = fixed_result.candidates_tested / max(1, mochi_result.candidates_tested)
        rows.append((ratio, mochi_result.candidates_tested, fixed_result.candidates_tested,
                     ratio_col, mochi_ns, fixed_ns))
        print(f"ratio={ratio:g}: candidates mochi={rows[-1][1]} fixed={rows[-1][2]} "
              f"(x{ratio_col:.2f}), best time mochi={mochi_ns/1e6:.1f}ms fixed={fixed_ns/1e6:.1f}ms")

    os.makedirs(s.out, exist_ok=True)
    path = os.path.join(s.out, "bench.csv")
    with open(path, "w", newline="\n") as f:
        _write_meta_header(f, s.meta("bench"))
        f.write("ratio,mochi_candidates,fixed_candidates,candidate_ratio,mochi_best_ns,fixed_best_ns\n")
        for row in rows:
            f.write(f"{row[0]:g},{row[1]},{row[2]},{row[3]:.6f},{row[4]},{row[5]}\n")
    print(f"bench: {path}")
    return EXIT_OK


def cmd_perturb_study(s: Settings) -> int:
    base = _load_or_generate(s)
    config = _sim_config(s)
    config.detector = "mochi"
    config.validate(base)
    total_steps = config.frames * config.steps_per_frame

    rows = []  # (variant, step, detector, pairs)
    failure = None
    for variant in range(s.variants):
        ps = perturb(base, s.noise_min, s.noise_max, seed=s.seed + variant)
        state, _ = dem.SimState.create(ps, config)
        for step_idx in range(total_steps):
            oracle_count = dcd.count_brute(state.particles, threads=s.threads)
            dem.step(state, config)
            mochi_count = state.last_pair_count
            rows.append((variant, step_idx, "mochi", mochi_count))
            rows.append((variant, step_idx, "brute", oracle_count))
            if mochi_count != oracle_count and failure is None:
                failure = (variant, step_idx, mochi_count, oracle_count)

    os.makedirs(s.out, exist_ok=True)
    path = os.path.join(s.out, "perturb.csv")
    with open(path, "w", newline="\n") as f:
        _write_meta_header(f, s.meta("perturb_study"))
        f.write("variant,step,detector,pairs\n")
        for row in rows:
            f.write(f"{row[0]},{row[1]},{row[2]},{row[3]}\n")

    totals = {}
    for variant, _, det, pairs in rows:
        if det == "mochi":
            totals[variant] = totals.get(variant, 0) + pairs
    counts = sorted(totals.values())
    print(f"perturb-study: {s.variants} variants x {total_steps} steps, "
          f"per-variant total collisions min={counts[0]} max={counts[-1]}")
    print(f"distribution: {path}")
    if failure is not None:
        print(f"COUNT MISMATCH variant={failure[0]} step={failure[1]} "
              f"mochi={failure[2]} brute={failure[3]}")
        return EXIT_VERIFY_FAILED
    print("per-step mochi counts equal brute counts on every variant")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--particles", type=int, help="particle count for generated scenes")
    p.add_argument("--box", help="world bounds: cube side or x0,y0,z0,x1,y1,z1")
    p.add_argument("--radii-min", dest="radii_min", type=float)
    p.add_argument("--radii-max", dest="radii_max", type=float)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--placement", choices=list(_PLACEMENT_FLAGS))
    p.add_argument("--config", help="flat key=value settings file (flags take precedence)")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", help="load particles from a scene file instead of generating")
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int, help="steps per frame")
    p.add_argument("--frames", type=int)
    p.add_argument("--gravity", choices=["const", "rotating"])
    p.add_argument("--omega", type=float, help="rotating-gravity angular velocity (rad/s)")
    p.add_argument("--stiffness", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--restitution", type=float)
    p.add_argument("--detector", choices=list(_DETECTOR_FLAGS))
    p.add_argument("--rebuild-every", dest="rebuild_every", type=int,
                   help="0 = refit only, n = rebuild every n-th iteration")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mochi", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a scene file")
    _add_scene_flags(p)
    p.add_argument("--out", help="output scene file path")

    p = sub.add_parser("simulate", help="run a DEM simulation and write report.csv")
    _add_scene_flags(p)
    _add_sim_flags(p)
    p.add_argument("--export-frames", dest="export_frames", action="store_const", const=True,
                   help="write frames/frame_%%06d.txt after each frame")

    p = sub.add_parser("verify", help="randomized oracle sweep of the detectors")
    _add_scene_flags(p)
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--max-particles", dest="max_particles", type=_positive_int)

    p = sub.add_parser("bench", help="candidate counts and timing, mochi vs fixed-radius")
    _add_scene_flags(p)
    p.add_argument("--ratios", help="comma-separated radii ratios")
    p.add_argument("--volume-fraction", dest="volume_fraction", type=float)
    p.add_argument("--repetitions", type=_positive_int)
    p.add_argument("--out")

    p = sub.add_parser("perturb-study", help="position-noise sensitivity study")
    _add_scene_flags(p)
    _add_sim_flags(p)
    p.add_argument("--variants", type=int)
    p.add_argument("--noise-min", dest="noise_min", type=float)
    p.add_argument("--noise-max", dest="noise_max", type=float)

    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "perturb-study": cmd_perturb_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings(args)
        if args.cmd == "perturb-study" and settings.variants < 2:
            parser.error("--variants must be >= 2")
        return _COMMANDS[args.cmd](settings)
    except (ConfigError, SceneError, SceneFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
