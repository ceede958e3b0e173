import csv
import math
import random

import numpy as np
import pytest

from _support import make_world
from platoonform.metrics import (
    DELTA,
    PLATOON_REDUCTION,
    FormationExecutionRecord,
    MetricsLedger,
    PlatoonPosition,
    TrafficSample,
    VehicleTripRecord,
    aggregate,
    candidates_found_and_filtered,
    default_fuel_model,
    format_value,
    fuel_step,
    platoon_factor,
    platoon_position,
    speed_deviation_ratio,
    travel_time_ratio,
    window_violation_ratio,
    write_summary,
)
from platoonform.model import Approach, desk_scale
from platoonform.traffic import WorldState, prefill, run_simulation, simulation_step


def trip(i, desired=30.0, real=100.0, expected=100.0, ttp=None, tip=0.0, fuel=0.1, dist=3000.0,
         speed=30.0, dev=0.0, absdev=None, depart=1000.0):
    return VehicleTripRecord(
        id=i, desired_speed=desired, depart_time=depart, arrival_time=depart + real,
        expected_travel_time=expected, real_travel_time=real, time_to_platoon=ttp, time_in_platoon=tip,
        distance=dist, fuel=fuel, mean_speed=speed, mean_speed_deviation_ratio=dev,
        mean_abs_speed_deviation_ratio=abs(dev) if absdev is None else absdev,
    )


def _recorded_trace():
    rng = np.random.default_rng(0)
    accel = np.clip(rng.normal(0.0, 0.8, 600), -3.0, 2.5)
    speed = np.clip(25.0 + np.cumsum(accel), 0.0, 45.0)
    return speed, accel


# --- fuel -------------------------------------------------------------------------------


def test_fuel_ratios_per_platoon_position():
    speed, accel = _recorded_trace()
    totals = {}
    for pos in PlatoonPosition:
        totals[pos] = math.fsum(fuel_step(float(v), float(a), 1.0, pos) for v, a in zip(speed, accel))
    solo = totals[PlatoonPosition.SOLO]
    assert solo > 0
    assert round(totals[PlatoonPosition.LEADER] / solo, 4) == 0.9448
    assert round(totals[PlatoonPosition.MIDDLE] / solo, 4) == 0.8758
    assert round(totals[PlatoonPosition.LAST] / solo, 4) == 0.8942
    assert totals[PlatoonPosition.MIDDLE] < totals[PlatoonPosition.LAST] < totals[PlatoonPosition.LEADER] < solo


def test_reduction_constants():
    assert PLATOON_REDUCTION == 0.46
    assert DELTA == {PlatoonPosition.SOLO: 0.0, PlatoonPosition.LEADER: 0.12,
                     PlatoonPosition.MIDDLE: 0.27, PlatoonPosition.LAST: 0.23}
    assert platoon_factor(PlatoonPosition.SOLO) == 1.0


def test_positions_by_platoon_size():
    assert platoon_position(0, 1) is PlatoonPosition.SOLO
    assert [platoon_position(i, 2) for i in range(2)] == [PlatoonPosition.LEADER, PlatoonPosition.LAST]
    assert [platoon_position(i, 4) for i in range(4)] == [
        PlatoonPosition.LEADER, PlatoonPosition.MIDDLE, PlatoonPosition.MIDDLE, PlatoonPosition.LAST]


def test_fuel_model_floor_and_braking():
    model = default_fuel_model()
    assert float(model.base_rate(0.0, 0.0)) == model.idle_l_per_s
    assert float(model.base_rate(30.0, -5.0)) == model.idle_l_per_s
    assert float(model.base_rate(30.0, 1.0)) > float(model.base_rate(30.0, 0.0)) > float(model.base_rate(20.0, 0.0))


def test_cruise_consumption_is_plausible():
    # a gasoline car at 120 km/h burns single-digit liters per 100 km
    per_100km = fuel_step(33.3, 0.0, 1.0) / 33.3 * 100_000
    assert 4.0 < per_100km < 12.0


# --- per-vehicle ratios ---------------------------------------------------------------------


def test_speed_deviation_ratio_examples():
    assert speed_deviation_ratio(33.0, 33.0) == 0.0
    assert speed_deviation_ratio(26.4, 33.0) == pytest.approx(-0.2)


def test_window_violation_examples():
    assert window_violation_ratio([trip(i) for i in range(5)], 0.2) == 0.0
    assert window_violation_ratio([trip(1, dev=0.5)], 0.3) == 1.0
    mixed = [trip(i, dev=0.25 if i < 3 else 0.05) for i in range(10)]
    assert window_violation_ratio(mixed, 0.2) == pytest.approx(0.3)
    assert window_violation_ratio([], 0.2) == 0.0


def test_travel_time_ratio_orientation():
    assert travel_time_ratio(trip(1)) == 1.0
    assert travel_time_ratio(trip(1, real=110.0)) == pytest.approx(1.1)
    assert travel_time_ratio(trip(1, real=95.0)) < 1.0


def test_trip_record_invariants():
    with pytest.raises(ValueError):
        trip(1, real=0.0)
    with pytest.raises(ValueError):
        trip(1, real=10.0, tip=11.0)


def test_found_and_filtered_accessor():
    rec = FormationExecutionRecord(0.0, "CENTRALIZED_GREEDY", None, 4, 6, 0, 2, 2.85, 1.85)
    assert candidates_found_and_filtered(rec) == (6, 0)


def test_warmup_vehicles_are_excluded():
    ledger = MetricsLedger(warmup=600.0)
    assert not ledger.add_trip(trip(1, depart=599.0))
    assert ledger.add_trip(trip(2, depart=600.0))
    ledger.add_searcher_counts(10.0, 3, 1)
    ledger.add_searcher_counts(700.0, 5, 2)
    assert [t.id for t in ledger.trips] == [2]
    assert ledger.found_per_vehicle == [5] and ledger.filtered_per_vehicle == [2]


# --- aggregation -------------------------------------------------------------------------------


def _fixture_ledger():
    ledger = MetricsLedger(warmup=0.0)
    ledger.add_trip(trip(1, real=100.0, expected=100.0, ttp=20.0, tip=50.0, fuel=0.2, dist=4000.0, speed=30.0, dev=0.0))
    ledger.add_trip(trip(2, real=120.0, expected=100.0, ttp=40.0, tip=60.0, fuel=0.3, dist=4000.0, speed=25.0, dev=-0.2))
    ledger.add_trip(trip(3, real=90.0, expected=100.0, ttp=None, fuel=0.2, dist=2000.0, speed=35.0, dev=0.1))
    ledger.add_trip(trip(4, real=100.0, expected=80.0, ttp=60.0, tip=10.0, fuel=0.4, dist=5000.0, speed=20.0, dev=-0.3))
    ledger.add_trip(trip(5, real=110.0, expected=110.0, ttp=None, fuel=0.1, dist=1000.0, speed=40.0, dev=0.4))
    for k, (found, filtered) in enumerate([(2, 0), (4, 1), (6, 2)]):
        ledger.add_searcher_counts(1.0, found, filtered)
        ledger.add_execution(FormationExecutionRecord(60.0 * (k + 1), "CENTRALIZED_SOLVER", None, 3, found,
                                                      filtered, 1, 2.5, 1.5, solve_time=0.1 * (k + 1), gap=0.0))
    ledger.add_sample(TrafficSample(0.0, 10, 10.0, 1000.0, 27.0, 0, {2: 1}))
    ledger.add_sample(TrafficSample(60.0, 12, 12.0, 1200.0, 28.0, 6, {2: 1, 3: 1}))
    ledger.add_sample(TrafficSample(120.0, 14, 14.0, 1400.0, 26.0, 4, {3: 2}))
    return ledger


def test_aggregate_hand_computed_fixture():
    (row,) = aggregate(_fixture_ledger(), {"approach": "CENTRALIZED_SOLVER", "speed_window": 0.2, "density": 10, "seed": 1})
    assert row["n_trips"] == 5
    assert row["found_mean"] == pytest.approx(4.0)
    assert row["found_std"] == pytest.approx(math.sqrt(8 / 3))
    assert row["filtered_mean"] == pytest.approx(1.0)
    assert row["time_to_platoon_mean"] == pytest.approx(40.0)
    assert row["time_to_platoon_std"] == pytest.approx(math.sqrt(800 / 3))
    assert row["platooned_share"] == pytest.approx(0.6)
    assert row["mean_speed"] == pytest.approx(30.0)
    assert row["deviation_mean"] == pytest.approx(0.0)
    assert row["deviation_median"] == pytest.approx(0.0)
    assert row["abs_deviation_mean"] == pytest.approx(0.2)
    assert row["window_violation"] == pytest.approx(0.4)  # |0.3| and |0.4| exceed 0.2
    ratios = [1.0, 1.2, 0.9, 1.25, 1.0]
    assert row["travel_time_ratio_mean"] == pytest.approx(sum(ratios) / 5)
    assert row["travel_time_ratio_median"] == pytest.approx(1.0)
    fuels = [5.0, 7.5, 10.0, 8.0, 10.0]
    assert row["fuel_l_per_100km_mean"] == pytest.approx(sum(fuels) / 5)
    assert row["platoon_size_hist"] == "2:2;3:3"
    assert row["platoon_size_mean"] == pytest.approx(13 / 5)
    assert row["observed_density"] == pytest.approx(12.0)
    assert row["departure_flow"] == pytest.approx(10 * 3600 / 120)
    assert row["solve_time_mean"] == pytest.approx(0.2)
    assert row["found_per_execution_mean"] == pytest.approx(4.0)
    assert row["joins"] == 3


def test_identical_vehicles_have_zero_spread():
    ledger = MetricsLedger(warmup=0.0)
    for i in range(6):
        ledger.add_trip(trip(i, ttp=30.0, tip=20.0))
    (row,) = aggregate(ledger)
    assert row["time_to_platoon_std"] == 0.0 and row["fuel_l_per_100km_std"] == 0.0


def test_empty_ledger_gives_empty_table(tmp_path):
    assert aggregate(MetricsLedger(warmup=0.0)) == []
    write_summary(tmp_path / "s.csv", [])
    with open(tmp_path / "s.csv", encoding="utf-8") as fh:
        assert len(list(csv.reader(fh))) == 1


def test_aggregation_is_permutation_invariant():
    base = _fixture_ledger()
    rows = aggregate(base)
    rnd = random.Random(5)
    for _ in range(5):
        shuffled = MetricsLedger(warmup=0.0)
        trips = list(base.trips)
        rnd.shuffle(trips)
        for t in trips:
            shuffled.add_trip(t)
        pairs = list(zip(base.found_per_vehicle, base.filtered_per_vehicle))
        rnd.shuffle(pairs)
        for f, g in pairs:
            shuffled.add_searcher_counts(1.0, f, g)
        execs = list(base.executions)
        rnd.shuffle(execs)
        for e in execs:
            shuffled.add_execution(e)
        for s in base.samples:
            shuffled.add_sample(s)
        assert aggregate(shuffled) == rows


def test_csv_float_format():
    assert format_value(1 / 3) == "0.333333"
    assert format_value(123456789.0) == "1.23457e+08"
    assert format_value(float("nan")) == ""
    assert format_value(None) == ""
    assert format_value(True) == "1"


# --- sampling in the simulation ---------------------------------------------------------------------


def test_flow_density_speed_relation_on_homogeneous_traffic():
    cfg = desk_scale(approach=Approach.ACC, prefill=False, target_density=0.0, lanes=1, sample_interval=60.0)
    world = make_world(cfg, individuals=[(i, 30.0, 100.0 + 60.0 * i) for i in range(100)])
    for v in world.vehicles.values():
        v.arrival_ramp = 1e9  # stay on the road for the whole window
    for _ in range(60):
        simulation_step(world)
    s = world.ledger.samples[-1]
    assert s.mean_speed == pytest.approx(30.0, rel=1e-9)
    assert s.flow == pytest.approx(s.density * s.mean_speed * 3.6, rel=0.05)
    assert s.density == pytest.approx(100 / 10.0, rel=1e-9)


def test_time_to_platoon_is_set_for_platooned_vehicles():
    cfg = desk_scale(approach=Approach.CENTRALIZED_GREEDY, target_density=15.0, sim_duration=900.0, warmup=200.0)
    world = run_simulation(cfg)
    trips = world.ledger.trips
    assert trips
    assert any(t.time_to_platoon is not None for t in trips)
    for t in trips:
        if t.time_in_platoon > 0.0:
            assert t.time_to_platoon is not None
        if t.time_to_platoon is not None:
            # a join in the very last step leaves no sampled platoon time
            assert 0.0 <= t.time_to_platoon <= t.real_travel_time
        else:
            assert t.time_in_platoon == 0.0
