"""Discrete-time freeway simulation.

One call to :func:`simulation_step` advances the world by ``step_length``
in a fixed order: formation, join completion, lane changes, car following
and integration, arrivals, insertions, metric sampling. Everything random
goes through ``world.rng`` so a run is a pure function of its config.

Lanes are numbered from the right (lane 0). Positions are front bumpers.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import formation as fm
from .metrics import (
    FormationExecutionRecord,
    MetricsLedger,
    TrafficSample,
    VehicleTripRecord,
    default_fuel_model,
    platoon_factor,
    platoon_position,
)
from .model import (
    NO_MANEUVER,
    Approach,
    CFModel,
    ManeuverKind,
    Platoon,
    Role,
    ScenarioConfig,
    VehicleId,
    VehicleState,
)

LOG = logging.getLogger(__name__)

GAP_TOLERANCE = 0.01  # numerical slack on the min-gap invariant, meters
LANE_CHANGE_COOLDOWN = 3.0
LANE_CHANGE_LOOKAHEAD = 100.0
CACC_C1 = 0.5
CACC_XI = 1.0
CACC_OMEGA = 0.2


class InvariantViolation(RuntimeError):
    """A model bug: the state dump travels with the exception."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class PendingDeparture:
    desired_speed: float
    depart_ramp: float
    scheduled_time: float


@dataclass
class WorldState:
    config: ScenarioConfig
    rng: np.random.Generator
    clock: float = 0.0
    vehicles: dict[VehicleId, VehicleState] = field(default_factory=dict)
    platoons: dict[int, Platoon] = field(default_factory=dict)
    pending: dict[float, deque] = field(default_factory=dict)
    ledger: Optional[MetricsLedger] = None
    next_vehicle_id: int = 0
    next_platoon_id: int = 0
    spawned: int = 0
    arrived: int = 0
    inserted_since_sample: int = 0
    # Edie accumulators since the last traffic sample
    acc_distance: float = 0.0
    acc_time: float = 0.0
    trace: Optional[list] = None

    @classmethod
    def create(cls, config: ScenarioConfig) -> WorldState:
        world = cls(config=config, rng=np.random.default_rng(config.seed))
        world.ledger = MetricsLedger(config.warmup)
        world.pending = {ramp: deque() for ramp in config.depart_ramps}
        if config.trace:
            world.trace = []
        return world

    @property
    def n_pending(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def dump(self) -> dict:
        return {
            "clock": self.clock,
            "vehicles": [_vehicle_dict(v) for _, v in sorted(self.vehicles.items())],
            "platoons": [asdict(p) for _, p in sorted(self.platoons.items())],
        }


def _vehicle_dict(v: VehicleState) -> dict:
    d = asdict(v)
    d["cf_mode"] = v.cf_mode.value
    d["role"] = v.role.value
    d["maneuver"] = {**asdict(v.maneuver), "kind": v.maneuver.kind.value}
    return d


# --- demand --------------------------------------------------------------------


def departure_rate(config: ScenarioConfig) -> int:
    """Vehicles per hour that keep the road at the target density.

    The expected trip time is rounded to whole seconds before inverting.
    """
    t_expected = round(config.trip_length / config.speed_mean)
    road_km = config.road_length / 1000.0
    return int(round(config.target_density * config.lanes * road_km * 3600.0 / t_expected))


def sample_desired_speed(world: WorldState) -> float:
    cfg = world.config
    v = world.rng.normal(cfg.speed_mean, cfg.speed_rel_stddev * cfg.speed_mean)
    return float(min(max(v, cfg.speed_min), cfg.speed_max))


def schedule_departures(world: WorldState) -> int:
    """Draw this step's departures and queue them at their ramps."""
    cfg = world.config
    ramps = cfg.depart_ramps
    rate = departure_rate(cfg)
    if rate == 0 or not ramps:
        return 0
    lam = rate * cfg.step_length / 3600.0 / len(ramps)
    trials = max(1, math.ceil(lam))
    n_new = 0
    for ramp in ramps:
        count = int(world.rng.binomial(trials, lam / trials))
        for _ in range(count):
            world.pending[ramp].append(PendingDeparture(sample_desired_speed(world), ramp, world.clock))
        n_new += count
    world.spawned += n_new
    return n_new


# --- car following -----------------------------------------------------------------


def krauss_safe_speed(gap: float, v_leader: float, v_ego: float, tau: float, b: float) -> float:
    """Safe speed for an effective gap (bumper gap minus min gap)."""
    return v_leader + (gap - v_leader * tau) / (v_ego / b + tau)


def max_safe_speed(gap: float, v_leader: float, tau: float, b: float) -> float:
    """Largest follower speed for which :func:`pair_safe` holds."""
    if gap <= 0:
        return 0.0
    p = tau - v_leader / b
    return 0.5 * b * (-p + math.sqrt(p * p + 4.0 * gap / b))


def pair_safe(gap: float, v_leader: float, v_follower: float, tau: float, b: float) -> bool:
    need = v_leader * tau + (v_follower - v_leader) * (v_follower / b + tau)
    return gap >= max(0.0, need) - 1e-9


def krauss_step(speed: float, desired_speed: float, leader: Optional[tuple[float, float]],
                config: ScenarioConfig) -> float:
    """Next speed under the Krauss model without dawdling.

    ``leader`` is ``(effective_gap, leader_speed)`` or ``None``.
    """
    v = min(desired_speed, config.v_max, speed + config.max_accel * config.step_length)
    if leader is not None:
        gap, v_leader = leader
        v = min(v, krauss_safe_speed(gap, v_leader, speed, config.krauss_headway, config.max_decel))
    return max(0.0, v)


def acc_step(speed: float, desired_speed: float, leader: Optional[tuple[float, float]],
             config: ScenarioConfig) -> float:
    """Acceleration of a constant-time-headway ACC."""
    a = config.acc_free_gain * (min(desired_speed, config.v_max) - speed)
    if leader is not None:
        gap, v_leader = leader
        eps = gap - config.acc_headway * speed
        a = min(a, (config.acc_lambda * eps + (v_leader - speed)) / config.acc_headway)
    return min(max(a, -config.max_decel), config.max_accel)


def acc_speed_update(speed: float, desired_speed: float, leader: Optional[tuple[float, float]],
                     config: ScenarioConfig) -> float:
    """Speed after one step of ACC, integrating :func:`acc_step` over sub-steps.

    ``leader`` is ``(effective_gap, leader_speed)`` with the leader's speed
    for the coming step. A single Euler step of length ``acc_headway``
    corrects the whole speed difference at once, which amplifies
    oscillations from car to car; sub-stepping keeps the string damped.
    """
    n = config.acc_substeps
    h = config.step_length / n
    v = speed
    gap = None if leader is None else leader[0]
    for _ in range(n):
        a = acc_step(v, desired_speed, None if leader is None else (gap, leader[1]), config)
        v_next = max(0.0, v + a * h)
        if leader is not None:
            gap += (leader[1] - 0.5 * (v + v_next)) * h
        v = v_next
    return v


def cacc_step(speed: float, gap: float, pred_speed: float, pred_accel: float,
              lead_speed: float, lead_accel: float, config: ScenarioConfig) -> float:
    """Constant-spacing CACC; ``gap`` is the bumper gap to the predecessor."""
    c1, xi, wn = CACC_C1, CACC_XI, CACC_OMEGA
    root = math.sqrt(xi * xi - 1.0)
    a = (
        (1 - c1) * pred_accel
        + c1 * lead_accel
        - (2 * xi - c1 * (xi + root)) * wn * (speed - pred_speed)
        - (xi + root) * wn * c1 * (speed - lead_speed)
        + wn * wn * (gap - config.cacc_gap)
    )
    return min(max(a, -config.max_decel), config.max_accel)


def _lanes(world: WorldState) -> list[list[VehicleState]]:
    """Vehicles per lane, front first."""
    lanes: list[list[VehicleState]] = [[] for _ in range(world.config.lanes)]
    for v in world.vehicles.values():
        lanes[v.lane].append(v)
    for lane in lanes:
        lane.sort(key=lambda v: (-v.position, v.id))
    return lanes


def _desired(world: WorldState, v: VehicleState) -> float:
    if v.role is Role.LEADER:
        return world.platoons[v.platoon_id].desired_speed
    return v.desired_speed


def car_following_step(world: WorldState) -> None:
    """Compute new speeds front to back per lane, then integrate positions.

    The final clamp keeps the next bumper gap at or above ``min_gap`` given
    the already-updated vehicle ahead.
    """
    cfg = world.config
    dt = cfg.step_length
    L = cfg.vehicle_length
    new_speed: dict[VehicleId, float] = {}
    for lane in _lanes(world):
        ahead: Optional[VehicleState] = None
        for v in lane:
            leader = None
            if ahead is not None:
                leader = (ahead.position - L - v.position - cfg.min_gap, ahead.speed)
            desired = _desired(world, v)
            if v.cf_mode is CFModel.KRAUSS:
                vn = krauss_step(v.speed, desired, leader, cfg)
            elif v.cf_mode is CFModel.ACC:
                ahead_next = None if leader is None else (leader[0], new_speed[ahead.id])
                vn = acc_speed_update(v.speed, desired, ahead_next, cfg)
                if leader is not None:
                    vn = min(vn, krauss_safe_speed(leader[0], leader[1], v.speed, cfg.krauss_headway, cfg.max_decel))
            else:
                vn = v.speed + _cacc_accel(world, v, new_speed) * dt
            if ahead is not None:
                room = (ahead.position - L - v.position - cfg.min_gap) / dt
                vn = min(vn, new_speed[ahead.id] + room)
            new_speed[v.id] = min(max(vn, 0.0), cfg.v_max)
            ahead = v
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        vn = new_speed[vid]
        v.acceleration = (vn - v.speed) / dt
        v.speed = vn
        v.position += vn * dt
        v.distance += vn * dt


def _cacc_accel(world: WorldState, v: VehicleState, new_speed: dict) -> float:
    cfg = world.config
    dt = cfg.step_length
    platoon = world.platoons[v.platoon_id]
    idx = platoon.members.index(v.id)
    pred = world.vehicles[platoon.members[idx - 1]]
    lead = world.vehicles[platoon.leader]

    def realized(u):
        # vehicles ahead in the same lane were updated earlier in this pass
        return (new_speed[u.id] - u.speed) / dt if u.id in new_speed else u.acceleration

    gap = pred.position - cfg.vehicle_length - v.position
    return cacc_step(v.speed, gap, pred.speed, realized(pred), lead.speed, realized(lead), cfg)


# --- lane changes -------------------------------------------------------------------


class _LaneIndex:
    """Sorted ``(position, id)`` per lane with neighbour queries."""

    def __init__(self, world: WorldState):
        self.world = world
        self.lanes: list[list[tuple[float, VehicleId]]] = [[] for _ in range(world.config.lanes)]
        for v in world.vehicles.values():
            self.lanes[v.lane].append((v.position, v.id))
        for lane in self.lanes:
            lane.sort()

    def leader(self, lane: int, position: float, exclude: frozenset = frozenset()) -> Optional[VehicleState]:
        entries = self.lanes[lane]
        i = bisect.bisect_left(entries, (position, -1))
        while i < len(entries):
            if entries[i][1] not in exclude:
                return self.world.vehicles[entries[i][1]]
            i += 1
        return None

    def follower(self, lane: int, position: float, exclude: frozenset = frozenset()) -> Optional[VehicleState]:
        entries = self.lanes[lane]
        i = bisect.bisect_left(entries, (position, -1)) - 1
        while i >= 0:
            if entries[i][1] not in exclude:
                return self.world.vehicles[entries[i][1]]
            i -= 1
        return None

    def between(self, lane: int, lo: float, hi: float, exclude: frozenset = frozenset()) -> list[VehicleId]:
        entries = self.lanes[lane]
        i = bisect.bisect_left(entries, (lo, -1))
        out = []
        while i < len(entries) and entries[i][0] <= hi:
            if entries[i][1] not in exclude:
                out.append(entries[i][1])
            i += 1
        return out

    def move(self, v: VehicleState, new_lane: int) -> None:
        self.lanes[v.lane].remove((v.position, v.id))
        bisect.insort(self.lanes[new_lane], (v.position, v.id))


def _slot_safe(world: WorldState, idx: _LaneIndex, lane: int, front: float, rear: float,
               v_front: float, v_rear: float, exclude: frozenset) -> bool:
    """Whether a block spanning front bumpers ``rear..front`` fits into ``lane``."""
    cfg = world.config
    L, tau, b = cfg.vehicle_length, cfg.krauss_headway, cfg.max_decel
    if idx.between(lane, rear - L - cfg.min_gap, front + L + cfg.min_gap, exclude):
        return False
    ahead = idx.leader(lane, front, exclude)
    if ahead is not None:
        gap = ahead.position - L - front - cfg.min_gap
        if gap < 0 or not pair_safe(gap, ahead.speed, v_front, tau, b):
            return False
    behind = idx.follower(lane, rear, exclude)
    if behind is not None:
        gap = rear - L - behind.position - cfg.min_gap
        if gap < 0 or not pair_safe(gap, v_rear, behind.speed, tau, b):
            return False
    if ahead is not None and behind is not None and ahead.role is Role.FOLLOWER and ahead.platoon_id == behind.platoon_id:
        return False  # would cut into a platoon
    return True


def _attainable(world: WorldState, idx: _LaneIndex, lane: int, position: float, desired: float,
                exclude: frozenset) -> float:
    ahead = idx.leader(lane, position, exclude)
    if ahead is None or ahead.position - position > LANE_CHANGE_LOOKAHEAD:
        return desired
    return min(desired, ahead.speed)


def lane_change_step(world: WorldState) -> list[tuple[VehicleId, int, int]]:
    """Keep-right and overtaking moves for individuals and whole platoons.

    Returns ``(vehicle or leader id, from lane, to lane)`` for every move.
    """
    cfg = world.config
    if cfg.lanes == 1:
        return []
    idx = _LaneIndex(world)
    moves = []
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        if v.role is Role.FOLLOWER or world.clock - v.last_lane_change < LANE_CHANGE_COOLDOWN:
            continue
        if v.role is Role.LEADER:
            members = [world.vehicles[m] for m in world.platoons[v.platoon_id].members]
        else:
            members = [v]
        exclude = frozenset(m.id for m in members)
        desired = min(_desired(world, v), cfg.v_max)
        here = _attainable(world, idx, v.lane, v.position, desired, exclude)
        target = None
        if here < 0.99 * desired:
            if v.lane + 1 < cfg.lanes:
                left = _attainable(world, idx, v.lane + 1, v.position, desired, exclude)
                if left > here + 1.0:
                    target = v.lane + 1
        elif v.lane > 0:
            right = _attainable(world, idx, v.lane - 1, v.position, desired, exclude)
            if right >= 0.99 * desired:
                target = v.lane - 1
        if target is None:
            continue
        front, rear = members[0], members[-1]
        if not _slot_safe(world, idx, target, front.position, rear.position, front.speed, rear.speed, exclude):
            continue
        old = v.lane
        for m in members:
            idx.move(m, target)
            m.lane = target
            m.last_lane_change = world.clock
        if v.role is Role.LEADER:
            world.platoons[v.platoon_id].lane = target
        moves.append((vid, old, target))
    return moves


# --- maneuvers and arrivals -----------------------------------------------------------


def _clear_pair(world: WorldState, joiner_id: VehicleId) -> None:
    joiner = world.vehicles.get(joiner_id)
    if joiner is None:
        return
    target = world.vehicles.get(joiner.maneuver.target)
    if target is not None and target.maneuver.kind is ManeuverKind.BEING_JOINED and target.maneuver.partner == joiner_id:
        target.maneuver = NO_MANEUVER
    joiner.maneuver = NO_MANEUVER


def maneuver_step(world: WorldState) -> list[tuple[VehicleId, VehicleId]]:
    """Complete due joins by teleporting the joiner behind the platoon tail.

    A join whose slot is unsafe is retried each step and abandoned after
    ``join_timeout``; a join whose target left the road is abandoned at once.
    """
    cfg = world.config
    done = []
    idx = None
    for vid in sorted(world.vehicles):
        joiner = world.vehicles.get(vid)
        if joiner is None or joiner.maneuver.kind is not ManeuverKind.JOINING:
            continue
        if joiner.maneuver.completion_time > world.clock + 1e-9:
            continue
        target = world.vehicles.get(joiner.maneuver.target)
        if target is None or target.role is Role.FOLLOWER:
            LOG.debug("join %s->%s aborted, target gone", vid, joiner.maneuver.target)
            _clear_pair(world, vid)
            continue
        if target.role is Role.LEADER:
            platoon = world.platoons[target.platoon_id]
            last = world.vehicles[platoon.last]
            exclude = frozenset({vid, *platoon.members})
        else:
            platoon = None
            last = target
            exclude = frozenset({vid, target.id})
        slot = last.position - cfg.vehicle_length - cfg.cacc_gap
        if idx is None:
            idx = _LaneIndex(world)
        if slot < 0 or not _teleport_safe(world, idx, target.lane, slot, last, exclude):
            if world.clock - joiner.maneuver.completion_time >= cfg.join_timeout:
                LOG.debug("join %s->%s aborted after timeout", vid, target.id)
                _clear_pair(world, vid)
            continue
        idx.lanes[joiner.lane].remove((joiner.position, joiner.id))
        joiner.position = slot
        joiner.lane = target.lane
        joiner.speed = last.speed
        joiner.acceleration = last.acceleration
        bisect.insort(idx.lanes[joiner.lane], (joiner.position, joiner.id))
        if platoon is None:
            platoon = Platoon(world.next_platoon_id, [target.id], target.desired_speed, target.lane)
            world.next_platoon_id += 1
            world.platoons[platoon.platoon_id] = platoon
            target.role = Role.LEADER
            target.cf_mode = CFModel.ACC
            target.platoon_id = platoon.platoon_id
            if target.time_to_platoon is None:
                target.time_to_platoon = world.clock - target.depart_time
        platoon.members.append(vid)
        refresh_platoon_speed(world, platoon)
        joiner.role = Role.FOLLOWER
        joiner.cf_mode = CFModel.CACC
        joiner.platoon_id = platoon.platoon_id
        if joiner.time_to_platoon is None:
            joiner.time_to_platoon = world.clock - joiner.depart_time
        _clear_pair(world, vid)
        done.append((vid, target.id))
    return done


def _teleport_safe(world: WorldState, idx: _LaneIndex, lane: int, slot: float, last: VehicleState,
                   exclude: frozenset) -> bool:
    cfg = world.config
    L = cfg.vehicle_length
    if idx.between(lane, slot - L - cfg.min_gap, last.position, exclude):
        return False
    behind = idx.follower(lane, slot, exclude)
    if behind is None:
        return True
    gap = slot - L - behind.position - cfg.min_gap
    if gap < 0:
        return False
    # the vehicle behind must be able to respond within its braking limit
    v_safe = krauss_safe_speed(gap, last.speed, behind.speed, cfg.krauss_headway, cfg.max_decel)
    return v_safe >= behind.speed - cfg.max_decel * cfg.step_length


def refresh_platoon_speed(world: WorldState, platoon: Platoon) -> None:
    """Cruise at the mean desired speed of the current members."""
    speeds = [world.vehicles[m].desired_speed for m in platoon.members]
    platoon.desired_speed = math.fsum(speeds) / len(speeds)


def remove_vehicle(world: WorldState, vid: VehicleId) -> VehicleState:
    """Take a vehicle off the road, repairing maneuvers and its platoon."""
    v = world.vehicles[vid]
    if v.maneuver.kind is ManeuverKind.JOINING:
        _clear_pair(world, vid)
    elif v.maneuver.kind is ManeuverKind.BEING_JOINED:
        _clear_pair(world, v.maneuver.partner)
    del world.vehicles[vid]
    if v.platoon_id is not None:
        platoon = world.platoons[v.platoon_id]
        platoon.members.remove(vid)
        if len(platoon.members) == 1:
            alone = world.vehicles[platoon.members[0]]
            alone.role = Role.INDIVIDUAL
            alone.cf_mode = CFModel.ACC
            alone.platoon_id = None
            del world.platoons[platoon.platoon_id]
        else:
            if v.role is Role.LEADER:
                new_leader = world.vehicles[platoon.leader]
                new_leader.role = Role.LEADER
                new_leader.cf_mode = CFModel.ACC
            refresh_platoon_speed(world, platoon)
    return v


def arrivals(world: WorldState) -> list[VehicleId]:
    """Remove vehicles whose front reached their arrival ramp and log their trips."""
    cfg = world.config
    gone = []
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        if v.position < v.arrival_ramp:
            continue
        remove_vehicle(world, vid)
        world.arrived += 1
        gone.append(vid)
        travel = world.clock + cfg.step_length - v.depart_time
        trip = v.arrival_ramp - v.depart_ramp
        samples = max(v.samples, 1)
        world.ledger.add_trip(VehicleTripRecord(
            id=v.id,
            desired_speed=v.desired_speed,
            depart_time=v.depart_time,
            arrival_time=world.clock + cfg.step_length,
            expected_travel_time=trip / v.desired_speed,
            real_travel_time=travel,
            time_to_platoon=v.time_to_platoon,
            time_in_platoon=min(v.time_in_platoon, travel),
            distance=v.distance,
            fuel=v.fuel,
            mean_speed=v.speed_sum / samples,
            mean_speed_deviation_ratio=v.ratio_sum / samples,
            mean_abs_speed_deviation_ratio=v.abs_ratio_sum / samples,
        ))
    return gone


# --- insertion ------------------------------------------------------------------------


def _new_vehicle(world: WorldState, desired: float, position: float, lane: int, speed: float,
                 depart_ramp: float, arrival_ramp: float, phase: float) -> VehicleState:
    cfg = world.config
    v = VehicleState(
        id=world.next_vehicle_id,
        desired_speed=desired,
        position=position,
        lane=lane,
        speed=speed,
        depart_time=world.clock,
        depart_ramp=depart_ramp,
        arrival_ramp=arrival_ramp,
        cf_mode=CFModel.KRAUSS if cfg.approach is Approach.HUMAN else CFModel.ACC,
        execution_phase=phase,
    )
    world.next_vehicle_id += 1
    world.vehicles[v.id] = v
    return v


def _insertion_speed(world: WorldState, idx: _LaneIndex, lane: int, x: float, desired: float) -> Optional[float]:
    cfg = world.config
    L, tau, b = cfg.vehicle_length, cfg.krauss_headway, cfg.max_decel
    speed = min(desired, cfg.v_max)
    ahead = idx.leader(lane, x)
    if ahead is not None:
        gap = ahead.position - L - x - cfg.min_gap
        if gap < 0:
            return None
        speed = min(speed, max_safe_speed(gap, ahead.speed, tau, b))
    behind = idx.follower(lane, x)
    if behind is not None:
        gap = x - L - behind.position - cfg.min_gap
        if gap < 0 or not pair_safe(gap, speed, behind.speed, tau, b):
            return None
    return speed


def spawn_step(world: WorldState) -> list[VehicleId]:
    """Schedule this step's departures and insert as many queued ones as fit.

    Each ramp is served first-in first-out; a departure that fits no lane
    waits, keeping its desired speed.
    """
    cfg = world.config
    schedule_departures(world)
    idx = None
    inserted = []
    interval = cfg.formation.execution_interval
    for ramp in cfg.depart_ramps:
        queue = world.pending[ramp]
        while queue:
            if idx is None:
                idx = _LaneIndex(world)
            dep = queue[0]
            for lane in range(cfg.lanes):
                speed = _insertion_speed(world, idx, lane, ramp, dep.desired_speed)
                if speed is not None:
                    break
            else:
                break
            queue.popleft()
            v = _new_vehicle(world, dep.desired_speed, ramp, lane, speed, ramp, ramp + cfg.trip_length,
                             math.fmod(world.clock, interval))
            bisect.insort(idx.lanes[lane], (v.position, v.id))
            inserted.append(v.id)
    world.inserted_since_sample += len(inserted)
    return inserted


def prefill(world: WorldState) -> int:
    """Place the target number of vehicles at once, with trips already under way."""
    cfg = world.config
    n_target = int(round(cfg.target_density * cfg.lanes * cfg.road_length / 1000.0))
    spacing = cfg.vehicle_length + cfg.min_gap
    taken: list[list[float]] = [[] for _ in range(cfg.lanes)]
    placed: list[tuple[int, float]] = []
    for _ in range(n_target):
        for _attempt in range(100):
            lane = int(world.rng.integers(cfg.lanes))
            x = float(world.rng.uniform(0.0, cfg.road_length))
            row = taken[lane]
            i = bisect.bisect_left(row, x)
            if (i < len(row) and row[i] - x < spacing) or (i > 0 and x - row[i - 1] < spacing):
                continue
            row.insert(i, x)
            placed.append((lane, x))
            break
    interval_steps = max(1, round(cfg.formation.execution_interval / cfg.step_length))
    for lane, x in placed:
        desired = sample_desired_speed(world)
        remaining = cfg.trip_length - float(world.rng.uniform(0.0, cfg.trip_length))
        arrival = min(x + remaining, cfg.road_length)
        phase = int(world.rng.integers(interval_steps)) * cfg.step_length
        _new_vehicle(world, desired, x, lane, 0.0, arrival - cfg.trip_length, arrival, phase)
    # speeds front to back so every pair starts safe
    for lane in _lanes(world):
        ahead = None
        for v in lane:
            v.speed = min(v.desired_speed, cfg.v_max)
            if ahead is not None:
                gap = ahead.position - cfg.vehicle_length - v.position - cfg.min_gap
                v.speed = min(v.speed, max_safe_speed(gap, ahead.speed, cfg.krauss_headway, cfg.max_decel))
            ahead = v
    world.spawned += len(placed)
    return len(placed)


# --- formation ---------------------------------------------------------------------------


def _due(world: WorldState, v: VehicleState, interval_steps: int) -> bool:
    k = round((world.clock - v.execution_phase) / world.config.step_length)
    return k % interval_steps == 0 and world.clock > v.depart_time


def formation_step(world: WorldState) -> list[FormationExecutionRecord]:
    """Run the configured formation strategy if it is due this step.

    A centralized pass is one execution covering every searcher. In the
    distributed strategy each due vehicle is its own execution; all of them
    read the same snapshot and their joins are applied in id order.
    """
    cfg = world.config
    approach = cfg.approach
    if not approach.is_platooning:
        return []
    params = cfg.formation
    interval_steps = max(1, round(params.execution_interval / cfg.step_length))
    if approach.is_centralized:
        if round(world.clock / cfg.step_length) % interval_steps != 0:
            return []
        cs = fm.collect_candidates_centralized(world, params)
        model = fm.build_exact_model(cs.entries, cs.searchers)
        solve_time, gap = 0.0, 0.0
        if approach is Approach.CENTRALIZED_SOLVER:
            sol = fm.solve_exact(model, params.solver_time_limit)
            assignments = sol.assignments
            pairs = sol.joins
            solve_time, gap = sol.solve_time, sol.gap
        else:
            pairs = fm.greedy_select(cs.entries)
            assignments = {s: s for s in cs.searchers}
            assignments.update(dict(pairs))
        joins = fm.apply_solution(world, pairs, params)
        executions = [(None, cs, model, assignments, joins, solve_time, gap)]
    else:
        egos = [vid for vid in sorted(world.vehicles)
                if world.vehicles[vid].available and _due(world, world.vehicles[vid], interval_steps)]
        if not egos:
            return []
        snap = fm.snapshot(world)
        decided = []
        for ego in egos:
            cs = fm.collect_candidates_distributed(world, ego, params, snap)
            decided.append((ego, cs, fm.greedy_select(cs.entries)))
        executions = []
        for ego, cs, pairs in decided:
            joins = fm.apply_solution(world, pairs, params)
            model = fm.build_exact_model(cs.entries, [ego])
            assignments = {ego: pairs[0][1] if pairs else ego}
            executions.append((ego, cs, model, assignments, joins, 0.0, 0.0))

    records = []
    for ego, cs, model, assignments, joins, solve_time, gap in executions:
        for s in cs.searchers:
            world.ledger.add_searcher_counts(world.vehicles[s].depart_time, cs.found[s], cs.filtered[s])
        record = FormationExecutionRecord(
            time=world.clock,
            strategy=cfg.approach.name,
            ego=ego,
            n_searchers=len(cs.searchers),
            n_candidates_found=sum(cs.found.values()),
            n_candidates_filtered=sum(cs.filtered.values()),
            n_joins_triggered=joins,
            objective_full=fm.objective(model, assignments),
            objective_paper_convention=fm.paper_convention_objective(model, assignments),
            solve_time=solve_time if cfg.record_solve_time else 0.0,
            gap=gap,
        )
        world.ledger.add_execution(record)
        records.append(record)
    return records


# --- sampling and invariants ----------------------------------------------------------------


def sample_metrics(world: WorldState) -> None:
    cfg = world.config
    dt = cfg.step_length
    if world.vehicles:
        ids = sorted(world.vehicles)
        vs = [world.vehicles[i] for i in ids]
        speed = np.array([v.speed for v in vs])
        accel = np.array([v.acceleration for v in vs])
        factor = np.ones(len(vs))
        for k, v in enumerate(vs):
            if v.platoon_id is not None:
                p = world.platoons[v.platoon_id]
                factor[k] = platoon_factor(platoon_position(p.members.index(v.id), p.size))
        fuel = default_fuel_model().base_rate(speed, accel) * dt * factor
        for k, v in enumerate(vs):
            ratio = (v.speed - v.desired_speed) / v.desired_speed
            v.samples += 1
            v.speed_sum += v.speed
            v.ratio_sum += ratio
            v.abs_ratio_sum += abs(ratio)
            v.fuel += float(fuel[k])
            if v.platoon_id is not None:
                v.time_in_platoon += dt
        world.acc_distance += float(speed.sum()) * dt
        world.acc_time += len(vs) * dt
    t_next = world.clock + dt
    n_interval = max(1, round(cfg.sample_interval / dt))
    if round(t_next / dt) % n_interval == 0:
        span = cfg.sample_interval
        area = cfg.road_length * span
        k = world.acc_time / area  # veh per m
        q = world.acc_distance / area  # veh per s
        sizes: dict[int, int] = {}
        for p in world.platoons.values():
            sizes[p.size] = sizes.get(p.size, 0) + 1
        world.ledger.add_sample(TrafficSample(
            time=t_next,
            vehicles=len(world.vehicles),
            density=k * 1000.0 / cfg.lanes,
            flow=q * 3600.0 / cfg.lanes,
            mean_speed=q / k if k > 0 else 0.0,
            departures=world.inserted_since_sample,
            platoon_sizes=sizes,
        ))
        world.acc_distance = world.acc_time = 0.0
        world.inserted_since_sample = 0


def check_gaps(world: WorldState) -> None:
    cfg = world.config
    for lane in _lanes(world):
        for a, b in zip(lane, lane[1:]):
            gap = a.position - cfg.vehicle_length - b.position
            if gap < cfg.min_gap - GAP_TOLERANCE:
                raise InvariantViolation(
                    f"t={world.clock}: gap {gap:.3f} m between {a.id} and {b.id} on lane {a.lane}",
                    world.dump(),
                )


def check_conservation(world: WorldState) -> None:
    if world.spawned != world.arrived + len(world.vehicles) + world.n_pending:
        raise InvariantViolation(
            f"t={world.clock}: spawned {world.spawned} != arrived {world.arrived} "
            f"+ on road {len(world.vehicles)} + queued {world.n_pending}",
            world.dump(),
        )


def _record_trace(world: WorldState) -> None:
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        world.trace.append((world.clock, v.id, v.lane, v.position, v.speed, v.acceleration, v.role.value,
                            "" if v.platoon_id is None else v.platoon_id))


def simulation_step(world: WorldState) -> WorldState:
    formation_step(world)
    maneuver_step(world)
    lane_change_step(world)
    car_following_step(world)
    check_gaps(world)
    arrivals(world)
    spawn_step(world)
    sample_metrics(world)
    check_conservation(world)
    if world.trace is not None:
        _record_trace(world)
    world.clock += world.config.step_length
    return world


def run_simulation(config: ScenarioConfig, world: Optional[WorldState] = None) -> WorldState:
    """Pre-fill (if configured) and step until ``sim_duration``."""
    if world is None:
        world = WorldState.create(config)
        if config.prefill:
            prefill(world)
    n_steps = round((config.sim_duration - world.clock) / config.step_length)
    for _ in range(n_steps):
        simulation_step(world)
    LOG.info("finished %s at t=%.0f: %d trips, %d on road", config.approach.value, world.clock,
             len(world.ledger.trips), len(world.vehicles))
    return world


def dump_json(world: WorldState) -> str:
    return json.dumps(world.dump(), indent=1, sort_keys=True)
