import numpy as np
import pytest

from elpaf.afloop import (LOOP_CSV_HEADER, MotorModel, focusing_time_breakdown, make_locator,
                          read_loop_csv, run_one_step_elp, run_stack_then_seek, seek_on_stack,
                          stack_sweep, write_loop_csv)
from elpaf.detectors import FOCUSED, NOT_FOUND, REVERSED_THEN_FOCUSED, ELPDetector
from elpaf.eventsim import generate_events
from elpaf.exceptions import InvalidInputError, OutOfRangeError
from elpaf.optics import render_sweep
from elpaf.scenes import constant, make_scene

STEP = 0.8


def frozen_clock():
    return 0.0


@pytest.fixture(scope="module")
def checker():
    return make_scene("checker", 192, seed=1)


@pytest.fixture(scope="module")
def toward_run(checker, psf):
    return run_one_step_elp(checker, psf, MotorModel(), 200.0, clock=frozen_clock)


@pytest.fixture(scope="module")
def pbf_run(checker, psf):
    return run_stack_then_seek(checker, psf, MotorModel(), -400.0, "PBF", clock=frozen_clock)


class TestMotor:
    def test_kinematics(self):
        m = MotorModel()
        assert m.um_per_us == pytest.approx(8e-4)
        assert m.travel_time(-400, 400) == pytest.approx(1e6)
        assert m.contains(400) and not m.contains(400.1)

    @pytest.mark.parametrize("kw", [dict(speed=0), dict(dv_range=(1, 1)),
                                    dict(reversal_latency=-1)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            MotorModel(**kw)


class TestOneStep:
    def test_stops_just_after_focus(self, toward_run):
        o = toward_run
        assert o.verdict == FOCUSED and o.reversals == 0
        assert o.error <= 2 * STEP + 1e-9
        crossing = 200.0 / 8e-4
        assert 0 < o.stop_time - crossing <= 2000
        assert o.focusing_time == o.stop_time

    def test_error_matches_trajectory(self, toward_run):
        traj = toward_run.trajectory
        assert traj[-1, 0] == toward_run.stop_time
        assert toward_run.error == abs(traj[-1, 1]) == abs(toward_run.final_dv)

    def test_never_revisits(self, toward_run):
        dv = toward_run.trajectory[:, 1]
        assert np.all(np.diff(dv) < 0)

    def test_wrong_direction_reverses_once(self, psf):
        o = run_one_step_elp(make_scene("blocks", 192, 1), psf, MotorModel(), 16.0,
                             initial_direction="away", clock=frozen_clock)
        assert o.reversals == 1 and o.verdict == REVERSED_THEN_FOCUSED
        assert o.error <= 2 * STEP + 1e-9
        dv = o.trajectory[:, 1]
        turn = int(np.argmax(dv))
        # out, standstill for the reversal latency, then monotone back through focus
        assert np.all(np.diff(dv[:turn + 1]) >= 0) and np.all(np.diff(dv[turn:]) <= 0)
        assert np.sum(dv == dv[turn]) - 1 >= MotorModel().reversal_latency // 1000

    def test_constant_scene_not_found(self, psf):
        o = run_one_step_elp(constant(96), psf, MotorModel(), -100.0, clock=frozen_clock)
        assert o.verdict == NOT_FOUND and o.final_dv == 400.0 and o.stop_time is None
        with pytest.raises(InvalidInputError):
            focusing_time_breakdown(o)

    def test_deterministic(self, psf):
        scene = make_scene("star", 96)
        a, b = (run_one_step_elp(scene, psf, MotorModel(), -24.0, noise_rate=2e4, noise_seed=3,
                                 clock=frozen_clock) for _ in range(2))
        assert a == b
        assert a.trace == b.trace and np.array_equal(a.trajectory, b.trajectory)

    def test_matches_offline_detector(self, checker, psf):
        o = run_one_step_elp(checker, psf, MotorModel(), -24.0, keep_events=True,
                             clock=frozen_clock)
        sweep = stack_sweep(MotorModel(), -24.0)
        obs = render_sweep(checker, psf, sweep)
        frames = [(ob.t, ob.image) for ob in obs if ob.t % 20_000 == 0]
        events = generate_events([(ob.t, ob.image) for ob in obs])
        offline = ELPDetector().fit(frames).predict(events)
        assert offline.stop_time == o.stop_time
        upto = events.t <= o.stop_time
        assert np.array_equal(o.events.t, events.t[upto])
        assert np.array_equal(o.events.x, events.x[upto])

    def test_method_names(self, psf):
        scene = constant(24)
        names = [run_one_step_elp(scene, psf, MotorModel(dv_range=(-2, 2)), -1.0, det).method
                 for det in (ELPDetector(), ELPDetector(use_filter=False),
                             ELPDetector(use_laplacian=False))]
        assert names == ["ELP", "ELP_no_filter", "ELP_no_laplacian"]

    def test_bad_start(self, psf):
        with pytest.raises(InvalidInputError):
            run_one_step_elp(constant(24), psf, MotorModel(), 0.0)
        with pytest.raises(OutOfRangeError):
            run_one_step_elp(constant(24), psf, MotorModel(), 500.0)
        with pytest.raises(InvalidInputError):
            run_one_step_elp(constant(24), psf, MotorModel(), 5.0, initial_direction="up")


class TestStackThenSeek:
    def test_pbf_within_depth_of_focus(self, pbf_run):
        assert pbf_run.verdict == FOCUSED and pbf_run.error <= 16.0

    def test_time_accounting(self, pbf_run):
        m = MotorModel()
        back = m.travel_time(400.0, pbf_run.final_dv)
        assert pbf_run.focusing_time == pytest.approx(1e6 + back)
        b = focusing_time_breakdown(pbf_run)
        assert b.compute == 0.0 and b.total == pytest.approx(pbf_run.focusing_time)
        assert b.motor >= 2 * m.travel_time(-400.0, 0.0)

    def test_one_step_is_faster(self, toward_run, pbf_run, checker, psf):
        o = run_one_step_elp(checker, psf, MotorModel(), -400.0, clock=frozen_clock)
        assert o.found and o.focusing_time < pbf_run.focusing_time
        b = focusing_time_breakdown(o)
        assert b.motor == pytest.approx(o.stop_time) and b.total == pytest.approx(o.focusing_time)

    def test_egs_on_sparse_texture_misses(self, psf):
        o = run_stack_then_seek(make_scene("bars", 192), psf, MotorModel(), -400.0, "EGS",
                                clock=frozen_clock)
        assert o.error > 16.0

    def test_runtime_charged(self, checker, psf):
        ticks = iter(np.arange(0, 100, 0.5))
        sweep = stack_sweep(MotorModel(), -8.0)
        obs = render_sweep(checker, psf, sweep)
        events = generate_events([(ob.t, ob.image) for ob in obs])
        o = seek_on_stack(events, sweep, MotorModel(), "EGS_scan", clock=lambda: next(ticks))
        assert o.algorithm_runtime == pytest.approx(0.5e6)
        assert focusing_time_breakdown(o).compute == pytest.approx(0.5e6)

    def test_locator_not_found(self, psf):
        o = run_stack_then_seek(constant(24), psf, MotorModel(), -8.0, "PBF")
        assert o.verdict == NOT_FOUND and o.final_dv == 8.0

    def test_stack_sweep_shape(self):
        sw = stack_sweep(MotorModel(), -400.0)
        assert sw.n_frames == 1001 and sw.knots_dv == (-400.0, 400.0)
        with pytest.raises(OutOfRangeError):
            stack_sweep(MotorModel(dv_range=(-400, 100)), -200.0)

    def test_make_locator(self):
        assert make_locator("egs").mode == "golden"
        assert make_locator("EGS_scan").mode == "scan"
        with pytest.raises(InvalidInputError):
            make_locator("ZZZ")


def test_loop_csv_round_trip(tmp_path, toward_run, pbf_run):
    path = tmp_path / "loop.csv"
    write_loop_csv(path, [toward_run, pbf_run])
    assert path.read_text().splitlines()[0] == ",".join(LOOP_CSV_HEADER)
    rows = read_loop_csv(path)
    assert [r["method"] for r in rows] == ["ELP", "PBF"]
    assert rows[0]["error_um"] == toward_run.error
    assert rows[1]["focusing_time_us"] == pbf_run.focusing_time
