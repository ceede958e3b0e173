"""Builders shared by the test modules."""

from __future__ import annotations

from decimal import ROUND_DOWN, Decimal
from typing import Optional

import numpy as np

from platoonform.model import (
    KMH,
    Approach,
    CFModel,
    FormationParams,
    Maneuver,
    ManeuverKind,
    Platoon,
    PlatoonableEntity,
    Role,
    ScenarioConfig,
    VehicleState,
)
from platoonform.traffic import WorldState

EXAMPLE_PARAMS = FormationParams(alpha=0.6, speed_window=0.6, position_range=400.0)
# id -> (desired speed km/h, position m)
EXAMPLE_VEHICLES = {5: (121, 430.0), 13: (89, 270.0), 20: (107, 250.0), 37: (93, 70.0)}
EXAMPLE_PAIRS = [(13, 5), (20, 5), (20, 13), (37, 5), (37, 13), (37, 20)]
EXAMPLE_PRINTED = {(13, 5): "0.519", (20, 5): "0.31", (20, 13): "0.188",
                   (37, 5): "0.66", (37, 13): "0.242", (37, 20): "0.33"}


def example_entities() -> list[PlatoonableEntity]:
    return [PlatoonableEntity.individual(i, d * KMH, p) for i, (d, p) in EXAMPLE_VEHICLES.items()]


def truncate3(x) -> Decimal:
    return Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_DOWN)


def printed_total(speed_dev: float, position_dev: float, alpha: float) -> Decimal:
    """Deviation as hand-computed in print: each component cut to three
    decimals before weighting, the result cut again."""
    a = Decimal(repr(alpha))
    return truncate3(a * truncate3(speed_dev) + (1 - a) * truncate3(position_dev))


def make_world(config: Optional[ScenarioConfig] = None, individuals=(), platoons=(), joining=()) -> WorldState:
    """World with hand-placed vehicles.

    individuals : iterable of (id, desired m/s, position[, lane])
    platoons : iterable of (member ids front to back, leader position, desired m/s[, lane]);
        members are spaced by vehicle length plus the CACC gap
    joining : iterable of (joiner id, target id) marked as an ongoing maneuver
    """
    config = config or ScenarioConfig(approach=Approach.CENTRALIZED_GREEDY, prefill=False)
    world = WorldState.create(config)

    def add(vid, desired, pos, lane, role=Role.INDIVIDUAL, cf=CFModel.ACC):
        v = VehicleState(id=vid, desired_speed=desired, position=pos, lane=lane, speed=desired,
                         depart_time=0.0, depart_ramp=0.0, arrival_ramp=config.road_length,
                         cf_mode=cf, role=role)
        world.vehicles[vid] = v
        world.next_vehicle_id = max(world.next_vehicle_id, vid + 1)
        return v

    for item in individuals:
        vid, desired, pos = item[:3]
        add(vid, desired, pos, item[3] if len(item) > 3 else 0)
    spacing = config.vehicle_length + config.cacc_gap
    for item in platoons:
        members, pos, desired = item[:3]
        lane = item[3] if len(item) > 3 else 0
        pid = world.next_platoon_id
        world.next_platoon_id += 1
        for k, vid in enumerate(members):
            role = Role.LEADER if k == 0 else Role.FOLLOWER
            v = add(vid, desired, pos - k * spacing, lane, role, CFModel.ACC if k == 0 else CFModel.CACC)
            v.platoon_id = pid
        world.platoons[pid] = Platoon(pid, list(members), desired, lane)
    for joiner, target in joining:
        world.vehicles[joiner].maneuver = Maneuver(ManeuverKind.JOINING, target=target, completion_time=1e9)
        world.vehicles[target].maneuver = Maneuver(ManeuverKind.BEING_JOINED, partner=joiner, completion_time=1e9)
    world.spawned = len(world.vehicles)
    return world


def example_world() -> WorldState:
    return make_world(individuals=[(i, d * KMH, p) for i, (d, p) in EXAMPLE_VEHICLES.items()])


def random_formation_instance(rng: np.random.Generator, max_searchers: int = 8):
    """A small world with individuals, a few platoons and some busy vehicles.

    Returns ``(world, params)``; the number of available individuals never
    exceeds ``max_searchers``.
    """
    n_ind = int(rng.integers(1, max_searchers + 1))  # available individuals
    n_busy = 2 * int(rng.integers(0, 2))
    n_platoons = int(rng.integers(0, 3))
    span = float(rng.uniform(200.0, 900.0))
    ids = rng.permutation(np.arange(1, 200))[: n_ind + n_busy + 4 * n_platoons]
    ids = [int(i) for i in ids]
    individuals = []
    for k in range(n_ind + n_busy):
        individuals.append((ids[k], float(rng.normal(33.0, 4.0)), float(rng.uniform(0.0, span))))
    platoons = []
    cursor = n_ind + n_busy
    for _ in range(n_platoons):
        size = int(rng.integers(2, 5))
        members = ids[cursor:cursor + size]
        cursor += 4
        platoons.append((members, float(rng.uniform(0.0, span)) + 60.0, float(rng.normal(33.0, 3.0)), 1))
    busy = [(individuals[n_ind + 2 * k][0], individuals[n_ind + 2 * k + 1][0])
            for k in range(n_busy // 2)]
    world = make_world(individuals=individuals, platoons=platoons, joining=busy)
    params = FormationParams(
        alpha=float(rng.uniform(0.0, 1.0)),
        speed_window=float(rng.choice([0.1, 0.2, 0.3, 0.6])),
        position_range=float(rng.uniform(150.0, 700.0)),
    )
    return world, params
