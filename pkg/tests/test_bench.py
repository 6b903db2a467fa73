import csv
import json
import shutil

import numpy as np
import pytest

from elpaf.afloop import LoopOutcome, read_loop_csv
from elpaf.bench import (BenchReport, ScenarioConfig, expand_config, export_curves,
                         generate_dataset, load_configs, load_manifest, parse_config_text,
                         run_bench)
from elpaf.bench.config import SEED_ENV
from elpaf.bench.dataset import load_scenario, read_frames, scenario_config, write_frames
from elpaf.bench.harness import aggregate
from elpaf.exceptions import ConfigError
from elpaf.imageio import write_pgm
from elpaf.scenes import checkerboard

BASE = """
# small, fast scenarios
scene_path = builtin:checker
scene_size_px = 192
start_dv_um = -16
"""


DATA_TEXT = BASE.replace("builtin:checker", "builtin:checker, builtin:star") + "fps = 50, 1\n"


def configs_from(text, tmp_path=None, env=True):
    return expand_config(parse_config_text(text), tmp_path, env_seed=env)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(configs_from(DATA_TEXT), root / "data")
    return root, manifest


@pytest.fixture(scope="module")
def bench_report(dataset):
    root, _ = dataset
    report = run_bench(root / "data" / "manifest.json", ["ELP", "PBF", "EGS"], root / "bench")
    return root / "bench", report


class TestConfig:
    def test_defaults_and_units(self):
        (cfg,) = configs_from("")
        assert cfg == ScenarioConfig()
        assert cfg.motor().speed == 800.0 and cfg.motor().reversal_latency == 5000

    def test_cartesian_expansion(self):
        cfgs = configs_from(BASE + "motion = static, moderate, violent\nfps = 50, 20, 1\n")
        assert len(cfgs) == 9
        assert {(c.motion, c.fps) for c in cfgs} == {
            (m, f) for m in ("static", "moderate", "violent") for f in (50.0, 20.0, 1.0)}
        assert len({c.scenario_id for c in cfgs}) == 9

    def test_motion_presets_map_exactly(self):
        (mod,) = configs_from("motion = moderate")
        (vio,) = configs_from("motion = violent")
        assert mod.motion_params().v_motion == (3.0, 3.0)
        assert mod.motion_params().v_jitter == (20.0, 20.0)
        assert vio.motion_params().v_jitter == (100.0, 100.0)
        (cus,) = configs_from("motion = custom\nmotion_v_jitter_px_per_s = 5 7\n")
        assert cus.motion_params().v_jitter == (5.0, 7.0)

    @pytest.mark.parametrize("text", ["bogus_key = 3", "fps = fast", "seed = 1\nseed = 2",
                                      "no equals sign", "motion = wobbly",
                                      "motion_v_jitter_px_per_s = 1", "psf = airy"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            configs_from(text)

    def test_seed_override(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "42")
        assert {c.seed for c in configs_from("seed = 3\nfps = 50, 1")} == {42}
        assert configs_from("seed = 3", env=False)[0].seed == 3
        monkeypatch.setenv(SEED_ENV, "x")
        with pytest.raises(ConfigError):
            configs_from("")

    def test_text_round_trip(self):
        (cfg,) = configs_from(BASE + "motion = custom\nmotion_v_motion_px_per_s = 1.5 -2\n")
        assert configs_from(cfg.to_text())[0] == cfg

    def test_relative_paths(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("scene_path = scenes/a.pgm\npsf = stack:psfs\n")
        (cfg,) = load_configs(cfg_path)
        assert cfg.scene_path == str(tmp_path / "scenes" / "a.pgm")
        assert cfg.psf == "stack:" + str(tmp_path / "psfs")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_configs(tmp_path / "nope.cfg")


class TestDataset:
    def test_nine_scenarios(self, tmp_path):
        text = BASE.replace("-16", "-4") + "motion = static, moderate, violent\nfps = 50, 20, 1\n"
        manifest = generate_dataset(configs_from(text), tmp_path)
        dirs = [p for p in tmp_path.iterdir() if p.is_dir()]
        assert len(dirs) == 9 and len(manifest["scenarios"]) == 9
        for entry in manifest["scenarios"]:
            assert entry["status"] == "ok"
            for art in entry["artifacts"].values():
                assert (tmp_path / entry["dir"] / art).exists()

    def test_layout(self, dataset):
        root, manifest = dataset
        entry = manifest["scenarios"][0]
        sdir = root / "data" / entry["dir"]
        cfg, events, frames, traj = load_scenario(sdir)
        assert (events.width, events.height) == (64, 64)
        assert (sdir / "trajectory.csv").read_text().splitlines()[0] == "t_us,dv_um,shift_x,shift_y"
        assert traj.shape == (41, 4) and traj[0, 1] == -16.0 and traj[-1, 1] == 16.0
        assert [t for t, _ in frames] == ([0, 20_000, 40_000] if cfg.fps == 50 else [0])
        assert json.loads((root / "data" / "manifest.json").read_text())["version"] == 1

    def test_regeneration_is_byte_identical(self, dataset, tmp_path):
        root, manifest = dataset
        again = generate_dataset(configs_from(DATA_TEXT), tmp_path)
        for a, b in zip(manifest["scenarios"], again["scenarios"]):
            assert a["seed"] == b["seed"]
            for art in ("events.csv", "trajectory.csv"):
                assert (root / "data" / a["dir"] / art).read_bytes() == \
                       (tmp_path / b["dir"] / art).read_bytes()

    def test_regenerate_from_manifest_seeds(self, tmp_path):
        text = "scene_path = builtin:blocks\nscene_size_px = 48\nstart_dv_um = -4\n" \
               "noise_rate_hz = 1e5\nmotion = violent\n"
        first = generate_dataset(configs_from(text), tmp_path / "a")
        entry = first["scenarios"][0]
        cfg = scenario_config(tmp_path / "a" / entry["dir"])
        assert cfg.seed == entry["seed"]
        generate_dataset([cfg], tmp_path / "b")
        assert (tmp_path / "a" / entry["dir"] / "events.csv").read_bytes() == \
               (tmp_path / "b" / entry["dir"] / "events.csv").read_bytes()

    def test_large_scene_downsampled(self, tmp_path):
        write_pgm(tmp_path / "big.pgm", checkerboard(600, 24), maxval=255)
        cfgs = configs_from("scene_path = big.pgm\nstart_dv_um = -1.6\n", tmp_path)
        manifest = generate_dataset(cfgs, tmp_path / "out")
        entry = manifest["scenarios"][0]
        assert (entry["width"], entry["height"]) == (200, 200)
        frames = read_frames(tmp_path / "out" / entry["dir"] / "frames")
        assert frames[0][1].shape == (200, 200)

    def test_bad_scene_recorded(self, tmp_path):
        (tmp_path / "bad.pgm").write_bytes(b"P5\n7 7\n255\n" + bytes(49))
        cfgs = configs_from("scene_path = bad.pgm, missing.pgm, builtin:bars\n"
                            "scene_size_px = 48\nstart_dv_um = -4\n", tmp_path)
        manifest = generate_dataset(cfgs, tmp_path / "out")
        status = [e["status"] for e in manifest["scenarios"]]
        assert status == ["error", "error", "ok"]
        assert "divisible" in manifest["scenarios"][0]["error"]

    def test_frame_round_trip(self, tmp_path):
        img = np.random.default_rng(0).random((6, 9)) * 255
        write_frames(tmp_path, [(0, img)])
        (t, back), = read_frames(tmp_path)
        assert t == 0 and np.abs(back - img).max() <= 0.5 / 256


class TestBench:
    def test_rows_and_outputs(self, bench_report):
        out, report = bench_report
        assert isinstance(report, BenchReport) and report.ok
        assert len(report.rows) == 4 * 3
        for name in ("report.csv", "aggregate.csv", "summary.txt"):
            assert (out / name).exists()
        assert "MAE um" in (out / "summary.txt").read_text()
        assert list((out / "traces").rglob("ELP_elp_trace.csv"))

    def test_clean_static_elp_accuracy(self, bench_report):
        _, report = bench_report
        for a in report.aggregates:
            if a["method"] == "ELP" and a["fps"] == "50":
                assert a["failures"] == 0 and a["mae_um"] <= 1.6 + 1e-9

    def test_mae_matches_brute_force(self, bench_report):
        out, report = bench_report
        rows = read_loop_csv(out / "report.csv")
        with open(out / "aggregate.csv", newline="") as fh:
            agg = list(csv.DictReader(fh))
        for a in agg:
            group = [r for r in rows if (r["method"], r["motion"], r["fps"]) ==
                     (a["method"], a["motion"], a["fps"])]
            found = [abs(r["error_um"]) for r in group if r["verdict"] != "not_found"]
            assert int(a["n"]) == len(group)
            assert int(a["failures"]) == len(group) - len(found)
            if found:
                assert float(a["mae_um"]) == sum(found) / len(found)
            else:
                assert a["mae_um"] == ""

    def test_failures_excluded_from_mae(self):
        rows = [LoopOutcome("EGS", 2.0, 2.0, 1, 0, 0, "focused"),
                LoopOutcome("EGS", 6.0, 6.0, 1, 0, 0, "focused"),
                LoopOutcome("EGS", 400.0, 400.0, 1, 0, 0, "not_found")]
        (a,) = aggregate(rows, dof_um=5.0)
        assert a["mae_um"] == 4.0 and a["failures"] == 1
        assert a["failure_rate"] == pytest.approx(1 / 3)
        assert a["dof_pass_rate"] == pytest.approx(1 / 3)
        report = BenchReport([], [dict(a, mae_um=None)])
        assert " /" in report.table()

    def test_missing_artifact_skipped(self, dataset, tmp_path):
        root, _ = dataset
        copy = tmp_path / "data"
        shutil.copytree(root / "data", copy)
        manifest = load_manifest(copy)
        victim = manifest["scenarios"][0]
        (copy / victim["dir"] / "events.csv").unlink()
        report = run_bench(manifest, ["PBF"])
        assert report.skipped == [victim["id"]] and not report.ok
        assert len(report.rows) == len(manifest["scenarios"]) - 1

    def test_parallel_equals_serial(self, dataset):
        root, _ = dataset
        a = run_bench(root / "data", ["PBF", "ELP"], max_workers=1)
        b = run_bench(root / "data", ["PBF", "ELP"], max_workers=2)
        strip = [(r.method, r.scene, r.fps, r.final_dv, r.verdict) for r in a.rows]
        assert strip == [(r.method, r.scene, r.fps, r.final_dv, r.verdict) for r in b.rows]


class TestCurves:
    def test_three_files_per_scenario(self, dataset, tmp_path):
        root, manifest = dataset
        paths = export_curves(root / "data", tmp_path)
        assert len(paths) == 3 * len(manifest["scenarios"])
        for entry in manifest["scenarios"]:
            names = sorted(p.name for p in (tmp_path / entry["dir"]).iterdir())
            assert names == ["elp_trace.csv", "epr_trace.csv", "er_trace.csv"]

    def test_polarity_split_and_sign_pattern(self, dataset, tmp_path):
        root, manifest = dataset
        entry = next(e for e in manifest["scenarios"] if e["fps"] == 50)
        export_curves(root / "data" / entry["dir"], tmp_path)
        epr = np.loadtxt(tmp_path / "epr_trace.csv", delimiter=",", skiprows=1)
        er = np.loadtxt(tmp_path / "er_trace.csv", delimiter=",", skiprows=1)
        assert np.array_equal(epr[:, 0], er[:, 0])
        assert np.allclose(epr[:, 1] + epr[:, 2], er[:, 1], rtol=0, atol=1e-9)
        elp = np.loadtxt(tmp_path / "elp_trace.csv", delimiter=",", skiprows=1)
        f = elp[:, 2]
        sig = np.abs(f) > 0.02 * np.abs(elp[:, 1]).max()
        signs = np.sign(f[sig])
        first_neg = int(np.argmax(signs < 0))
        # +...+ then -...
        assert first_neg > 0 and np.all(signs[:first_neg] > 0)
        assert elp[sig][first_neg, 0] > 20_000
