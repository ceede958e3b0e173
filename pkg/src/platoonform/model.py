"""Domain types shared by the formation engine and the traffic simulation.

All quantities are SI (meters, seconds, m/s). Positions are front-bumper
coordinates measured from the start of the road.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .traffic import WorldState  # noqa: F401

VehicleId = int

KMH = 1 / 3.6  # m/s per km/h


class CFModel(enum.Enum):
    KRAUSS = "KRAUSS"
    ACC = "ACC"
    CACC = "CACC"


class Role(enum.Enum):
    INDIVIDUAL = "INDIVIDUAL"
    LEADER = "LEADER"
    FOLLOWER = "FOLLOWER"


class Approach(enum.Enum):
    HUMAN = "HUMAN"
    ACC = "ACC"
    DISTRIBUTED_GREEDY = "DISTRIBUTED_GREEDY"
    CENTRALIZED_GREEDY = "CENTRALIZED_GREEDY"
    CENTRALIZED_SOLVER = "CENTRALIZED_SOLVER"

    @property
    def is_platooning(self) -> bool:
        return self not in (Approach.HUMAN, Approach.ACC)

    @property
    def is_centralized(self) -> bool:
        return self in (Approach.CENTRALIZED_GREEDY, Approach.CENTRALIZED_SOLVER)


class ManeuverKind(enum.Enum):
    NONE = "NONE"
    JOINING = "JOINING"
    # target side of a pending join; keeps the target unavailable to others
    BEING_JOINED = "BEING_JOINED"


@dataclass(frozen=True)
class Maneuver:
    kind: ManeuverKind = ManeuverKind.NONE
    target: Optional[VehicleId] = None  # vehicle id of the join target (leader or individual)
    partner: Optional[VehicleId] = None  # joiner id, for BEING_JOINED
    start_time: float = 0.0
    completion_time: float = 0.0

    @property
    def active(self) -> bool:
        return self.kind is not ManeuverKind.NONE


NO_MANEUVER = Maneuver()


@dataclass(frozen=True)
class PlatoonableEntity:
    """The ``{n, D, p, l}`` view of an individual vehicle or a platoon.

    For a platoon, ``id`` and ``front_position`` belong to the leader and
    ``rear_position`` is the front bumper of the last member.
    """

    id: VehicleId
    desired_speed: float
    front_position: float
    rear_position: float

    def __post_init__(self):
        if self.desired_speed <= 0:
            raise ValueError(f"desired_speed must be positive, got {self.desired_speed}")
        if self.rear_position > self.front_position:
            raise ValueError(
                f"rear_position {self.rear_position} is ahead of front_position {self.front_position}"
            )

    @classmethod
    def individual(cls, id: VehicleId, desired_speed: float, position: float) -> PlatoonableEntity:
        return cls(id, desired_speed, position, position)


@dataclass(slots=True)
class VehicleState:
    id: VehicleId
    desired_speed: float
    position: float
    lane: int
    speed: float
    depart_time: float
    depart_ramp: float
    arrival_ramp: float
    acceleration: float = 0.0
    cf_mode: CFModel = CFModel.KRAUSS
    role: Role = Role.INDIVIDUAL
    maneuver: Maneuver = NO_MANEUVER
    platoon_id: Optional[int] = None
    # formation execution phase in [0, execution_interval)
    execution_phase: float = 0.0
    last_lane_change: float = -1e9
    # per-trip accumulators, owned by the metrics sampler
    distance: float = 0.0
    fuel: float = 0.0
    time_in_platoon: float = 0.0
    speed_sum: float = 0.0
    ratio_sum: float = 0.0
    abs_ratio_sum: float = 0.0
    samples: int = 0
    time_to_platoon: Optional[float] = None

    @property
    def available(self) -> bool:
        """An individual that is not part of any maneuver may search."""
        return self.role is Role.INDIVIDUAL and not self.maneuver.active

    @property
    def is_target_candidate(self) -> bool:
        return self.role is not Role.FOLLOWER and not self.maneuver.active


@dataclass
class Platoon:
    """Members front-to-back; ``members[0]`` is the leader.

    ``platoon_id`` is fixed at formation and survives leader changes,
    as does ``desired_speed``.
    """

    platoon_id: int
    members: list[VehicleId]
    desired_speed: float
    lane: int = 0

    def __post_init__(self):
        if not self.members:
            raise ValueError("platoon without members")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate platoon members: {self.members}")

    @property
    def leader(self) -> VehicleId:
        return self.members[0]

    @property
    def last(self) -> VehicleId:
        return self.members[-1]

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class FormationParams:
    alpha: float = 0.5
    speed_window: float = 0.2
    position_range: float = 1000.0
    execution_interval: float = 60.0
    comm_range: float = 500.0
    solver_time_limit: float = 600.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.speed_window <= 1.0:
            raise ValueError(f"speed_window must be in (0, 1], got {self.speed_window}")
        for name in ("position_range", "execution_interval", "comm_range", "solver_time_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class ScenarioConfig:
    road_length: float = 100_000.0
    lanes: int = 3
    ramp_interval: float = 10_000.0
    trip_length: float = 50_000.0
    speed_mean: float = 33.0
    speed_rel_stddev: float = 0.1
    speed_min: float = 80 * KMH
    speed_max: float = 160 * KMH
    target_density: float = 5.0  # vehicles per lane-km
    sim_duration: float = 7200.0
    warmup: float = 1800.0
    step_length: float = 1.0
    seed: int = 42
    approach: Approach = Approach.DISTRIBUTED_GREEDY
    formation: FormationParams = field(default_factory=FormationParams)
    krauss_headway: float = 1.0
    acc_headway: float = 1.0
    acc_lambda: float = 0.1
    acc_free_gain: float = 0.4
    acc_substeps: int = 10
    cacc_gap: float = 5.0
    max_accel: float = 2.5
    max_decel: float = 10.0
    vehicle_length: float = 5.0
    min_gap: float = 2.5
    v_max: float = 200 * KMH
    prefill: bool = True
    sample_interval: float = 60.0
    join_timeout: float = 30.0
    trace: bool = False
    record_solve_time: bool = True

    def __post_init__(self):
        if self.warmup >= self.sim_duration:
            raise ValueError(f"warmup {self.warmup} must be shorter than sim_duration {self.sim_duration}")
        if self.lanes < 1:
            raise ValueError(f"lanes must be at least 1, got {self.lanes}")
        for name in ("road_length", "ramp_interval", "trip_length", "speed_mean", "step_length",
                     "vehicle_length", "v_max", "max_accel", "max_decel", "sample_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.acc_substeps < 1:
            raise ValueError(f"acc_substeps must be at least 1, got {self.acc_substeps}")
        if self.target_density < 0:
            raise ValueError(f"target_density must be non-negative, got {self.target_density}")
        if not _is_multiple(self.road_length, self.ramp_interval):
            raise ValueError("ramp_interval must divide road_length")
        if not _is_multiple(self.trip_length, self.ramp_interval):
            raise ValueError("trip_length must be a multiple of ramp_interval")
        if self.trip_length > self.road_length:
            raise ValueError("trip_length exceeds road_length")
        if not 0 < self.speed_min <= self.speed_max <= self.v_max:
            raise ValueError("need 0 < speed_min <= speed_max <= v_max")

    def with_(self, **changes) -> ScenarioConfig:
        """Copy with changes; formation fields may be given flat."""
        formation_fields = {k: changes.pop(k) for k in list(changes) if k in FormationParams.__dataclass_fields__}
        formation = replace(self.formation, **formation_fields) if formation_fields else self.formation
        return replace(self, formation=formation, **changes)

    @property
    def ramps(self) -> list[float]:
        n = round(self.road_length / self.ramp_interval)
        return [i * self.ramp_interval for i in range(n + 1)]

    @property
    def depart_ramps(self) -> list[float]:
        return [r for r in self.ramps if r + self.trip_length <= self.road_length + 1e-9]


def _is_multiple(value: float, base: float) -> bool:
    q = value / base
    return abs(q - round(q)) < 1e-9


def desk_scale(**overrides) -> ScenarioConfig:
    """A 10 km scenario that runs in seconds; everything else at the full-scale defaults."""
    base = ScenarioConfig(
        road_length=10_000.0,
        ramp_interval=1_000.0,
        trip_length=5_000.0,
        target_density=15.0,
        sim_duration=1800.0,
        warmup=600.0,
        formation=FormationParams(solver_time_limit=60.0),
    )
    return base.with_(**overrides)


class FollowerHasNoEntityView(LookupError):
    pass


def entity_view(world: WorldState, id: VehicleId) -> PlatoonableEntity:
    """Return the ``{n, D, p, l}`` view of an individual or a platoon leader.

    Raises
    ------
    KeyError
        ``id`` is not on the road.
    FollowerHasNoEntityView
        ``id`` is a platoon follower.
    """
    vehicle = world.vehicles[id]
    if vehicle.role is Role.FOLLOWER:
        raise FollowerHasNoEntityView(f"vehicle {id} is a platoon follower")
    if vehicle.role is Role.LEADER:
        platoon = world.platoons[vehicle.platoon_id]
        last = world.vehicles[platoon.last]
        return PlatoonableEntity(id, platoon.desired_speed, vehicle.position, last.position)
    return PlatoonableEntity.individual(id, vehicle.desired_speed, vehicle.position)
