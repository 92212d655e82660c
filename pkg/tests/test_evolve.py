import logging

import numpy as np
import pytest

from oracles import perimeter_loop, shoelace_loop
from sdflow.assembly import StepUnknowns
from sdflow.baseline import BaselineConfig, run_baseline
from sdflow.geometry import (Curve, isoperimetric_ratio, make_ellipse, make_polygon, mesh_ratio,
                             perimeter, polygon_area)
from sdflow.evolve import (CSV_FIELDS, DiagnosticsSeries, ProposedStepper, RunAborted, RunConfig,
                           check_invariants, evolve, parse_redistribution, redistribute_arclength)
from sdflow.newton import StepFailure, solve_time_step


@pytest.fixture(scope="module")
def short_run():
    return evolve(make_ellipse(2, 1, 24), RunConfig(tau=1e-3, steps=40, snapshot_every=10))


def test_series_has_one_row_per_step(short_run):
    s = short_run.series
    assert len(s) == 41
    assert s.step == list(range(41))
    np.testing.assert_allclose(s.time, 1e-3 * np.arange(41), rtol=1e-15)
    assert s.newton_iters[0] == 0 and min(s.newton_iters[1:]) >= 1


def test_proposed_run_keeps_its_invariants(short_run):
    rep = check_invariants(short_run.series)
    assert rep.ok
    assert rep.max_area_drift <= 1e-12
    assert rep.max_perimeter_increase < 0
    iso = [l * l / (4 * np.pi * a) for l, a in zip(short_run.series.perimeter, short_run.series.area)]
    assert np.all(np.diff(iso) <= 0)


def test_snapshots(short_run):
    assert [s.step for s in short_run.snapshots] == [0, 10, 20, 30, 40]
    np.testing.assert_array_equal(short_run.snapshots[-1].curve.nodes, short_run.final.nodes)
    assert short_run.snapshot_at(0.02).step == 20
    with pytest.raises(KeyError):
        short_run.snapshot_at(0.015)


def test_csv_round_trip(short_run, tmp_path):
    path = tmp_path / "d.csv"
    short_run.series.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_FIELDS)
    back = DiagnosticsSeries.from_csv(path)
    for k in CSV_FIELDS:
        np.testing.assert_array_equal(back.column(k), short_run.series.column(k))
    path.write_text("step,time\n0,0\n")
    with pytest.raises(ValueError):
        DiagnosticsSeries.from_csv(path)


def test_check_invariants_on_constant_series():
    s = DiagnosticsSeries()
    for n in range(5):
        s.record(n, 0.1 * n, make_polygon(8))
    rep = check_invariants(s)
    assert rep.ok and rep.max_area_drift == 0 and rep.max_perimeter_increase == 0
    assert rep.as_dict()["ok"] is True


def test_check_invariants_flags_offending_steps():
    s = DiagnosticsSeries()
    for n, r in enumerate([1.0, 1.0, 1.01, 1.0]):
        s.record(n, n, make_polygon(8, r))
    rep = check_invariants(s)
    assert rep.area_flags == [2]
    assert rep.perimeter_flags == [2]
    assert not rep.ok
    with pytest.raises(ValueError):
        check_invariants(DiagnosticsSeries())


def test_regular_polygon_is_stationary():
    c = make_polygon(16, 1.5)
    res = evolve(c, RunConfig(tau=1e-2, steps=5))
    np.testing.assert_allclose(res.final.nodes, c.nodes, atol=1e-12)
    assert all(i == 1 for i in res.series.newton_iters[1:])


def test_off_grid_snapshot_is_a_short_side_step():
    c = make_ellipse(2, 1, 20)
    res = evolve(c, RunConfig(tau=0.01, steps=3, snapshot_times=(0.015,)))
    snap = res.snapshot_at(0.015)
    assert snap.step == 1
    stepper = ProposedStepper()
    c1, s1, _, _ = stepper.step(c, stepper.start(c), 0.01)
    c2, _, _, _ = stepper.step(c1, s1, 0.005)
    np.testing.assert_allclose(snap.curve.nodes, c2.nodes, atol=1e-12)
    # the side step does not feed back into the march
    plain = evolve(c, RunConfig(tau=0.01, steps=3))
    np.testing.assert_array_equal(res.final.nodes, plain.final.nodes)


class _FlakyStepper(ProposedStepper):
    """Fails every step larger than ``limit``."""

    def __init__(self, limit):
        super().__init__()
        self.limit = limit

    def step(self, curve, state, tau):
        if tau > self.limit:
            raise StepFailure(f"step {tau} too large", None)
        return super().step(curve, state, tau)


def test_failed_steps_are_halved(caplog):
    c = make_ellipse(2, 1, 16)
    with caplog.at_level(logging.WARNING, logger="sdflow.evolve"):
        res = evolve(c, RunConfig(tau=4e-3, steps=2), stepper=_FlakyStepper(1e-3))
    assert res.halvings == 2 * 3
    assert len(res.series) == 3
    assert "retrying" in caplog.text
    ref = evolve(c, RunConfig(tau=1e-3, steps=8))
    np.testing.assert_allclose(res.final.nodes, ref.final.nodes, atol=1e-12)


def test_unrecoverable_failure_returns_partial_result():
    c = make_ellipse(2, 1, 16)

    class Breaks(ProposedStepper):
        calls = 0

        def step(self, curve, state, tau):
            Breaks.calls += 1
            if Breaks.calls > 3:
                raise StepFailure("broken", None)
            return super().step(curve, state, tau)

    with pytest.raises(RunAborted) as info:
        evolve(c, RunConfig(tau=1e-3, steps=10, max_halvings=0), stepper=Breaks())
    part = info.value.result
    assert part.aborted and "broken" in part.error
    assert len(part.series) == 4
    assert part.snapshots[-1].step == 3


def test_parse_redistribution():
    assert parse_redistribution("off") == 0
    assert parse_redistribution("arclength:100") == 100
    for bad in ("arclength", "arclength:0", "spline:3", "on"):
        with pytest.raises(ValueError):
            parse_redistribution(bad)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(tau=0, steps=3)
    with pytest.raises(ValueError):
        RunConfig(tau=0.1, steps=0)
    with pytest.raises(ValueError):
        RunConfig(tau=0.1, steps=3, snapshot_times=(0.5,))
    with pytest.raises(ValueError):
        RunConfig(tau=0.1, steps=3, redistribution="sometimes")
    assert RunConfig(tau=0.25, steps=8).t_end == 2.0


def test_redistribution_keeps_equispaced_curve():
    c = make_polygon(12, 2.0)
    np.testing.assert_allclose(redistribute_arclength(c).nodes, c.nodes, atol=1e-14)


def test_redistribution_of_rectangle():
    c = Curve([(0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (0, 1), (0, 0.5), (0, 0.25)])
    new = redistribute_arclength(c)
    assert mesh_ratio(new) == pytest.approx(1, abs=1e-12)
    np.testing.assert_array_equal(new.nodes[0], c.nodes[0])
    assert perimeter(new) <= perimeter(c)


def test_redistribution_of_random_convex_polygon(rng):
    for _ in range(10):
        m = int(rng.integers(6, 30))
        t = np.sort(rng.uniform(0, 2 * np.pi, m))
        x = np.column_stack([2 * np.cos(t), np.sin(t)])
        c = Curve(x)
        new = redistribute_arclength(c)
        # chords of equal arcs on a mildly curved polygon are nearly equal
        assert mesh_ratio(new) < 1.5
        # new nodes lie on old edges, so the new polygon is inscribed
        assert perimeter_loop(new.nodes) <= perimeter_loop(c.nodes) * (1 + 1e-14)
        assert shoelace_loop(new.nodes) <= shoelace_loop(c.nodes) * (1 + 1e-14)


def test_redistribution_events_are_recorded():
    c = make_ellipse(2, 1, 24)
    res = evolve(c, RunConfig(tau=1e-3, steps=6, redistribution="arclength:2"))
    assert [e.step for e in res.events] == [0, 2, 4]
    assert np.max(np.abs(res.scheme_area_drift())) <= 1e-12
    drift = res.series.column("area_drift_rel")
    assert abs(drift[-1]) > 1e-6     # the redistribution itself does change the area


def test_baseline_through_driver_flags_area():
    res = run_baseline(make_ellipse(2, 1, 24), BaselineConfig(tau=1e-3, steps=20))
    assert res.series.scheme == "baseline"
    rep = check_invariants(res.series)
    assert rep.max_area_drift > 1e-8
    assert rep.perimeter_flags == []
    assert not rep.ok


def test_step_and_driver_agree():
    c = make_ellipse(2, 1, 20)
    stepper = ProposedStepper()
    res = evolve(c, RunConfig(tau=1e-3, steps=1))
    manual, _ = solve_time_step(c, stepper.start(c), 1e-3)
    np.testing.assert_array_equal(res.final.nodes, manual.positions)
    assert isinstance(stepper.start(c), StepUnknowns)
    assert isoperimetric_ratio(res.final) < isoperimetric_ratio(c)
    assert polygon_area(res.final) == pytest.approx(polygon_area(c), rel=1e-13)
