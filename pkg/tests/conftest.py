import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from platoonform.metrics import aggregate
from platoonform.model import Approach, desk_scale
from platoonform.traffic import WorldState, prefill, simulation_step

ACCEPTANCE_LINES: list[str] = []

# a platoon counts as undisturbed while its membership is unchanged, no
# member maneuvers and the leader's acceleration stays within this bound
QUIET_LEADER_ACCEL = 2.0
SETTLE_TIME = 60.0


@dataclass
class DeskRun:
    approach: Approach
    world: WorldState
    summary: dict
    wall_time: float
    min_gap_seen: float = float("inf")
    settled_gap_errors: list = field(default_factory=list)


def _step_and_watch(world: WorldState, run: DeskRun, quiet: dict) -> dict:
    cfg = world.config
    simulation_step(world)
    vs = list(world.vehicles.values())
    if len(vs) > 1:
        lane = np.array([v.lane for v in vs])
        pos = np.array([v.position for v in vs])
        order = np.lexsort((pos, lane))
        same = lane[order][1:] == lane[order][:-1]
        gaps = np.diff(pos[order]) - cfg.vehicle_length
        if same.any():
            run.min_gap_seen = min(run.min_gap_seen, float(gaps[same].min()))
    fresh = {}
    for pid, p in world.platoons.items():
        key = (pid, tuple(p.members))
        calm = (not any(world.vehicles[m].maneuver.active for m in p.members)
                and abs(world.vehicles[p.leader].acceleration) <= QUIET_LEADER_ACCEL)
        fresh[key] = quiet.get(key, 0) + 1 if calm else 0
        if fresh[key] * cfg.step_length >= SETTLE_TIME:
            for a, b in zip(p.members, p.members[1:]):
                gap = world.vehicles[a].position - cfg.vehicle_length - world.vehicles[b].position
                run.settled_gap_errors.append(abs(gap - cfg.cacc_gap))
    return fresh


def desk_run(approach: Approach, **overrides) -> DeskRun:
    cfg = desk_scale(approach=approach, target_density=15.0, speed_window=0.2, **overrides)
    start = time.perf_counter()
    world = WorldState.create(cfg)
    prefill(world)
    run = DeskRun(approach, world, {}, 0.0)
    quiet: dict = {}
    n_steps = round((cfg.sim_duration - world.clock) / cfg.step_length)
    for _ in range(n_steps):
        quiet = _step_and_watch(world, run, quiet)
    run.wall_time = time.perf_counter() - start
    (run.summary,) = aggregate(world.ledger, {"approach": approach.name}, cfg.formation.speed_window)
    return run


@pytest.fixture(scope="session")
def desk_runs() -> dict:
    """All five approaches at desk scale, density 15, m = 0.2, 1800 s."""
    return {a: desk_run(a) for a in Approach}


@pytest.fixture
def report():
    def _report(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
