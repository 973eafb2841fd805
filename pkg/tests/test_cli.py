import os

import numpy as np
import pytest

from mochi import cli, dcd
from mochi.scenes import load


def run_cli(*args):
    return cli.main(list(args))


class TestGen:
    def test_writes_scene(self, tmp_path):
        out = tmp_path / "scene.txt"
        assert run_cli("gen", "--particles", "64", "--seed", "9", "--out", str(out)) == 0
        assert len(load(out)) == 64


class TestSimulate:
    def test_report_row_count_matches_steps(self, tmp_path):
        out = tmp_path / "sim"
        code = run_cli(
            "simulate", "--particles", "400", "--steps", "50", "--dt", "1e-4",
            "--detector", "mochi", "--seed", "3", "--out", str(out),
        )
        assert code == 0
        lines = [l for l in (out / "report.csv").read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "iteration,pairs,build_ns,dcd_ns,update_ns"
        assert len(lines) - 1 == 50

    def test_detectors_agree_on_collision_counts(self, tmp_path):
        counts = {}
        for det in ("mochi", "brute"):
            out = tmp_path / det
            assert run_cli(
                "simulate", "--particles", "300", "--steps", "25", "--seed", "5",
                "--radii-min", "0.01", "--radii-max", "0.04",
                "--detector", det, "--out", str(out),
            ) == 0
            rows = [l.split(",") for l in (out / "report.csv").read_text().splitlines()
                    if l and not l.startswith("#")][1:]
            counts[det] = [int(r[1]) for r in rows]
        assert counts["mochi"] == counts["brute"]

    def test_rebuild_flag_variants_complete(self, tmp_path):
        for rebuild in ("0", "1"):
            out = tmp_path / f"r{rebuild}"
            assert run_cli(
                "simulate", "--particles", "200", "--steps", "10", "--seed", "1",
                "--rebuild-every", rebuild, "--out", str(out),
            ) == 0

    def test_frame_export(self, tmp_path):
        out = tmp_path / "sim"
        assert run_cli(
            "simulate", "--particles", "50", "--steps", "4", "--frames", "2",
            "--export-frames", "--seed", "2", "--out", str(out),
        ) == 0
        assert (out / "frames" / "frame_000001.txt").exists()

    def test_unstable_dt_usage_error(self, tmp_path):
        assert run_cli(
            "simulate", "--particles", "50", "--dt", "1.0", "--out", str(tmp_path / "x"),
        ) == cli.EXIT_USAGE

    def test_scene_file_input(self, tmp_path):
        scene = tmp_path / "scene.txt"
        run_cli("gen", "--particles", "80", "--seed", "4", "--out", str(scene))
        out = tmp_path / "sim"
        assert run_cli(
            "simulate", "--scene", str(scene), "--steps", "5", "--out", str(out),
        ) == 0


class TestVerify:
    def test_small_sweep_passes(self):
        assert run_cli("verify", "--trials", "25", "--max-particles", "128", "--seed", "11") == 0

    def test_injected_bug_detected(self, monkeypatch, capsys):
        # mutation check: a detector that drops one pair must fail the sweep
        # with the reproducer seed printed
        real = dcd.detect_mochi

        def broken(ps, bvh=None, **kw):
            result = real(ps, bvh, **kw)
            if result.pair_count:
                result.indices = result.indices[:-1]
            return result

        monkeypatch.setattr(dcd, "detect_mochi", broken)
        code = run_cli("verify", "--trials", "30", "--max-particles", "128", "--seed", "11")
        assert code == cli.EXIT_VERIFY_FAILED
        out = capsys.readouterr().out
        assert "MISMATCH" in out and "reproduce" in out

    def test_zero_trials_flag_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("verify", "--trials", "0")
        assert exc.value.code == cli.EXIT_USAGE


class TestBench:
    def test_candidate_ratio_columns(self, tmp_path):
        out = tmp_path / "bench"
        assert run_cli(
            "bench", "--particles", "3000", "--ratios", "1.2,12,120",
            "--repetitions", "1", "--seed", "13", "--out", str(out),
        ) == 0
        rows = [l.split(",") for l in (out / "bench.csv").read_text().splitlines()
                if l and not l.startswith("#")][1:]
        ratios = [float(r[3]) for r in rows]
        assert ratios[0] >= 1.0
        assert ratios == sorted(ratios)


class TestPerturbStudy:
    def test_row_shape_and_equality(self, tmp_path):
        out = tmp_path / "pert"
        assert run_cli(
            "perturb-study", "--particles", "200", "--variants", "2", "--steps", "10",
            "--radii-min", "0.01", "--radii-max", "0.03", "--seed", "17", "--out", str(out),
        ) == 0
        rows = [l.split(",") for l in (out / "perturb.csv").read_text().splitlines()
                if l and not l.startswith("#")][1:]
        mochi_rows = [r for r in rows if r[2] == "mochi"]
        brute_rows = [r for r in rows if r[2] == "brute"]
        assert len(mochi_rows) == 20 and len(brute_rows) == 20
        assert [r[3] for r in mochi_rows] == [r[3] for r in brute_rows]

    def test_variants_below_two_rejected(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("perturb-study", "--variants", "1")
        assert exc.value.code == cli.EXIT_USAGE


class TestConfigFile:
    def test_precedence_flags_over_config_over_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("particles = 123\nsteps = 7\n# comment\nseed=21\n")
        out = tmp_path / "sim"
        assert run_cli(
            "simulate", "--config", str(cfg), "--steps", "9", "--out", str(out),
        ) == 0
        text = (out / "report.csv").read_text()
        assert "# particles=123" in text  # from config file
        assert "# steps=9" in text  # flag wins
        assert "# frames=1" in text  # default
        rows = [l for l in text.splitlines() if l and not l.startswith("#")][1:]
        assert len(rows) == 9

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed = 9\n")
        assert run_cli("simulate", "--config", str(cfg)) == cli.EXIT_USAGE


class TestReproducibilityHeader:
    def test_artifacts_echo_settings(self, tmp_path):
        out = tmp_path / "sim"
        run_cli("simulate", "--particles", "60", "--steps", "3", "--seed", "99",
                "--out", str(out))
        text = (out / "report.csv").read_text()
        assert text.startswith("# schema=1\n")
        assert "# command=simulate" in text
        assert "# seed=99" in text
        assert "# detector=mochi" in text
