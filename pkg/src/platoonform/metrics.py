"""Measurement, fuel model and aggregation.

The ledger only keeps vehicles that departed after the warm-up period.
Aggregation turns one run's ledger into a single summary row; every value
in that row is a plain number or string so rows from many runs can be
concatenated into one table.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

LOG = logging.getLogger(__name__)

PLATOON_REDUCTION = 0.46  # eta
FLOAT_FORMAT = "%.6g"


class PlatoonPosition(enum.Enum):
    SOLO = "SOLO"
    LEADER = "LEADER"
    MIDDLE = "MIDDLE"
    LAST = "LAST"


# drag reduction delta per position
DELTA = {
    PlatoonPosition.SOLO: 0.0,
    PlatoonPosition.LEADER: 0.12,
    PlatoonPosition.MIDDLE: 0.27,
    PlatoonPosition.LAST: 0.23,
}


def platoon_position(index: int, size: int) -> PlatoonPosition:
    """Position of member ``index`` (0 = leader) in a platoon of ``size``."""
    if size <= 1:
        return PlatoonPosition.SOLO
    if index == 0:
        return PlatoonPosition.LEADER
    if index == size - 1:
        return PlatoonPosition.LAST
    return PlatoonPosition.MIDDLE


def platoon_factor(position: PlatoonPosition) -> float:
    return 1.0 - PLATOON_REDUCTION * DELTA[position]


@dataclass(frozen=True)
class FuelModel:
    """Tractive-power surrogate: fuel rate is wheel power over engine efficiency.

    Braking costs nothing beyond the idle floor.
    """

    mass_kg: float
    rolling_resistance: float
    drag_area_m2: float
    air_density_kg_m3: float
    gravity_m_s2: float
    engine_efficiency: float
    fuel_energy_j_per_l: float
    idle_l_per_s: float

    @classmethod
    def from_json(cls, path: Optional[Path] = None) -> FuelModel:
        if path is None:
            text = resources.files("platoonform").joinpath("data/fuel_coefficients.json").read_text()
        else:
            text = Path(path).read_text()
        raw = json.loads(text)
        return cls(**{f.name: float(raw[f.name]) for f in fields(cls)})

    def power(self, speed, accel):
        m = self.mass_kg
        return (
            m * accel * speed
            + m * self.gravity_m_s2 * self.rolling_resistance * speed
            + 0.5 * self.air_density_kg_m3 * self.drag_area_m2 * speed**3
        )

    def base_rate(self, speed, accel):
        """Liters per second for a solo vehicle."""
        p = np.maximum(self.power(speed, accel), 0.0)
        return np.maximum(p / (self.engine_efficiency * self.fuel_energy_j_per_l), self.idle_l_per_s)


_DEFAULT_FUEL: Optional[FuelModel] = None


def default_fuel_model() -> FuelModel:
    global _DEFAULT_FUEL
    if _DEFAULT_FUEL is None:
        _DEFAULT_FUEL = FuelModel.from_json()
    return _DEFAULT_FUEL


def fuel_step(speed: float, accel: float, dt: float,
              position: PlatoonPosition = PlatoonPosition.SOLO,
              model: Optional[FuelModel] = None) -> float:
    """Liters consumed over one step."""
    model = model or default_fuel_model()
    return float(model.base_rate(speed, accel)) * dt * platoon_factor(position)


def speed_deviation_ratio(speed, desired_speed):
    """Signed relative deviation; negative means slower than desired."""
    return (speed - desired_speed) / desired_speed


# --- records -----------------------------------------------------------------


@dataclass(frozen=True)
class VehicleTripRecord:
    id: int
    desired_speed: float
    depart_time: float
    arrival_time: float
    expected_travel_time: float
    real_travel_time: float
    time_to_platoon: Optional[float]
    time_in_platoon: float
    distance: float
    fuel: float
    mean_speed: float
    mean_speed_deviation_ratio: float
    mean_abs_speed_deviation_ratio: float

    def __post_init__(self):
        if self.real_travel_time <= 0:
            raise ValueError(f"vehicle {self.id}: real_travel_time must be positive")
        if self.time_in_platoon > self.real_travel_time + 1e-9:
            raise ValueError(f"vehicle {self.id}: time_in_platoon exceeds travel time")


@dataclass(frozen=True)
class FormationExecutionRecord:
    """One run of a formation algorithm: a centralized pass or one vehicle's own search."""

    time: float
    strategy: str
    ego: Optional[int]  # searching vehicle for distributed executions
    n_searchers: int
    n_candidates_found: int  # summed over searchers
    n_candidates_filtered: int
    n_joins_triggered: int
    objective_full: float
    objective_paper_convention: float
    solve_time: float = 0.0
    gap: float = 0.0


@dataclass(frozen=True)
class TrafficSample:
    time: float
    vehicles: int
    density: float  # vehicles per lane-km
    flow: float  # vehicles per lane-hour
    mean_speed: float  # space-mean, m/s
    departures: int  # insertions since the previous sample
    platoon_sizes: dict = field(default_factory=dict)


@dataclass
class MetricsLedger:
    warmup: float
    trips: list[VehicleTripRecord] = field(default_factory=list)
    executions: list[FormationExecutionRecord] = field(default_factory=list)
    samples: list[TrafficSample] = field(default_factory=list)
    found_per_vehicle: list[int] = field(default_factory=list)
    filtered_per_vehicle: list[int] = field(default_factory=list)

    def add_trip(self, record: VehicleTripRecord) -> bool:
        if record.depart_time < self.warmup:
            return False
        self.trips.append(record)
        return True

    def add_execution(self, record: FormationExecutionRecord) -> None:
        self.executions.append(record)

    def add_searcher_counts(self, depart_time: float, found: int, filtered: int) -> None:
        if depart_time >= self.warmup:
            self.found_per_vehicle.append(found)
            self.filtered_per_vehicle.append(filtered)

    def add_sample(self, sample: TrafficSample) -> None:
        self.samples.append(sample)


def candidates_found_and_filtered(execution: FormationExecutionRecord) -> tuple[int, int]:
    return execution.n_candidates_found, execution.n_candidates_filtered


def travel_time_ratio(record: VehicleTripRecord) -> float:
    """Real over expected; above 1 means slower than planned."""
    return record.real_travel_time / record.expected_travel_time


def window_violation_ratio(records: Sequence[VehicleTripRecord], m: float) -> float:
    """Share of vehicles whose time-averaged absolute deviation ratio exceeds ``m``."""
    if not records:
        return 0.0
    return sum(r.mean_abs_speed_deviation_ratio > m for r in records) / len(records)


# --- aggregation -----------------------------------------------------------------


def _mean_std(values) -> tuple[float, float]:
    if len(values) == 0:
        return math.nan, math.nan
    # fsum keeps the result independent of record order
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def _quartiles(values) -> tuple[float, float, float]:
    if len(values) == 0:
        return math.nan, math.nan, math.nan
    q = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75])
    return float(q[0]), float(q[1]), float(q[2])


SUMMARY_COLUMNS = [
    "approach", "speed_window", "density", "seed",
    "n_trips", "n_executions", "joins",
    "found_mean", "found_std", "filtered_mean", "filtered_std",
    "found_per_execution_mean", "filtered_per_execution_mean",
    "time_to_platoon_mean", "time_to_platoon_std", "platooned_share",
    "platoon_size_mean", "platoon_size_hist",
    "departure_flow", "observed_density", "observed_flow", "mean_speed",
    "deviation_mean", "deviation_q1", "deviation_median", "deviation_q3", "abs_deviation_mean",
    "window_violation",
    "travel_time_ratio_mean", "travel_time_ratio_q1", "travel_time_ratio_median", "travel_time_ratio_q3",
    "fuel_l_per_100km_mean", "fuel_l_per_100km_std",
    "solve_time_mean", "solve_time_std", "gap_max",
]


def aggregate(ledger: MetricsLedger, labels: Optional[dict] = None, speed_window: Optional[float] = None,
              sample_after: Optional[float] = None) -> list[dict]:
    """Summary row for one run, or an empty list when nothing was recorded.

    Order of records does not matter: every statistic is symmetric.
    """
    labels = dict(labels or {})
    if not ledger.trips and not ledger.executions and not ledger.samples:
        return []
    m = speed_window if speed_window is not None else labels.get("speed_window", 0.2)
    trips = ledger.trips
    cutoff = ledger.warmup if sample_after is None else sample_after
    samples = [s for s in ledger.samples if s.time >= cutoff]

    found = _mean_std(ledger.found_per_vehicle)
    filtered = _mean_std(ledger.filtered_per_vehicle)
    ttp_values = [r.time_to_platoon for r in trips if r.time_to_platoon is not None]
    ttp = _mean_std(ttp_values)
    dev = [r.mean_speed_deviation_ratio for r in trips]
    absdev = [r.mean_abs_speed_deviation_ratio for r in trips]
    ttr = [travel_time_ratio(r) for r in trips]
    fuel = [100_000.0 * r.fuel / r.distance for r in trips if r.distance > 0]

    hist: dict[int, int] = {}
    for s in samples:
        for size, count in s.platoon_sizes.items():
            hist[int(size)] = hist.get(int(size), 0) + int(count)
    n_platoons = sum(hist.values())
    size_mean = sum(k * v for k, v in hist.items()) / n_platoons if n_platoons else math.nan

    span = (samples[-1].time - samples[0].time) if len(samples) > 1 else 0.0
    departures = sum(s.departures for s in samples[1:])
    measured = [e for e in ledger.executions if e.time >= ledger.warmup]
    solve = [e.solve_time for e in measured]

    row = {
        "approach": labels.get("approach", ""),
        "speed_window": labels.get("speed_window", m),
        "density": labels.get("density", ""),
        "seed": labels.get("seed", ""),
        "n_trips": len(trips),
        "n_executions": len(ledger.executions),
        "joins": sum(e.n_joins_triggered for e in ledger.executions),
        "found_mean": found[0], "found_std": found[1],
        "filtered_mean": filtered[0], "filtered_std": filtered[1],
        "found_per_execution_mean": _mean_std([e.n_candidates_found for e in measured])[0],
        "filtered_per_execution_mean": _mean_std([e.n_candidates_filtered for e in measured])[0],
        "time_to_platoon_mean": ttp[0], "time_to_platoon_std": ttp[1],
        "platooned_share": (len(ttp_values) / len(trips)) if trips else math.nan,
        "platoon_size_mean": size_mean,
        "platoon_size_hist": ";".join(f"{k}:{hist[k]}" for k in sorted(hist)),
        "departure_flow": departures * 3600.0 / span if span > 0 else math.nan,
        "observed_density": _mean_std([s.density for s in samples])[0],
        "observed_flow": _mean_std([s.flow for s in samples])[0],
        "mean_speed": _mean_std([r.mean_speed for r in trips])[0],
        "deviation_mean": _mean_std(dev)[0],
        "deviation_q1": _quartiles(dev)[0],
        "deviation_median": _quartiles(dev)[1],
        "deviation_q3": _quartiles(dev)[2],
        "abs_deviation_mean": _mean_std(absdev)[0],
        "window_violation": window_violation_ratio(trips, m) if trips else math.nan,
        "travel_time_ratio_mean": _mean_std(ttr)[0],
        "travel_time_ratio_q1": _quartiles(ttr)[0],
        "travel_time_ratio_median": _quartiles(ttr)[1],
        "travel_time_ratio_q3": _quartiles(ttr)[2],
        "fuel_l_per_100km_mean": _mean_std(fuel)[0],
        "fuel_l_per_100km_std": _mean_std(fuel)[1],
        "solve_time_mean": _mean_std(solve)[0] if solve else 0.0,
        "solve_time_std": _mean_std(solve)[1] if solve else 0.0,
        "gap_max": max((e.gap for e in measured), default=0.0),
    }
    return [row]


# --- CSV output ------------------------------------------------------------------


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return FLOAT_FORMAT % value
    if isinstance(value, enum.Enum):
        return value.value
    return str(value)


def write_rows(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])


TRIP_COLUMNS = [f.name for f in fields(VehicleTripRecord)]
EXECUTION_COLUMNS = [f.name for f in fields(FormationExecutionRecord)]


def write_trips(path: Path, trips: Sequence[VehicleTripRecord]) -> None:
    write_rows(path, TRIP_COLUMNS, (asdict(t) for t in sorted(trips, key=lambda t: t.id)))


def write_executions(path: Path, executions: Sequence[FormationExecutionRecord]) -> None:
    write_rows(path, EXECUTION_COLUMNS, (asdict(e) for e in executions))


def write_summary(path: Path, rows: Sequence[dict], columns: Sequence[str] = SUMMARY_COLUMNS) -> None:
    write_rows(path, columns, rows)
