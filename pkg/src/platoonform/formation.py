"""Candidate collection, greedy selection and the exact assignment problem.

A *searcher* is an available individual vehicle. Its candidates are the
entities (individuals or platoons) it may join, scored by the weighted
deviation from :mod:`platoonform.similarity`. Every searcher also carries
the implicit option of assigning itself at cost ``SELF_DEVIATION``.

The exact problem (one assignment per searcher, every target used at most
once, and no vehicle that is both joined and joining) has the structure of
a matching: each non-self assignment pairs two vehicles and no vehicle may
appear in two pairs. It is therefore solved as a maximum-weight matching
whose edge weight is the saving ``self_cost - deviation``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .matching import max_weight_matching
from .model import (
    FormationParams,
    Maneuver,
    ManeuverKind,
    PlatoonableEntity,
    Role,
    VehicleId,
    entity_view,
)
from .similarity import (
    SELF_DEVIATION,
    deviation,
    is_eligible,
    relative_position_deviation,
    relative_speed_deviation,
    weighted_deviation,
)

LOG = logging.getLogger(__name__)

BRUTE_FORCE_MAX_SEARCHERS = 10


class FormationError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateEntry:
    searcher: VehicleId
    target: VehicleId
    speed_dev: float
    position_dev: float
    total: float


@dataclass
class CandidateSet:
    """Output of one collection round."""

    entries: list[CandidateEntry]
    searchers: list[VehicleId]
    found: dict[VehicleId, int]
    filtered: dict[VehicleId, int]


@dataclass
class AssignmentSolution:
    assignments: dict[VehicleId, VehicleId]  # searcher -> target (itself when unassigned)
    objective: float
    gap: float = 0.0
    solve_time: float = 0.0
    optimal: bool = True

    @property
    def joins(self) -> list[tuple[VehicleId, VehicleId]]:
        return [(s, t) for s, t in sorted(self.assignments.items()) if s != t]


# --- candidate collection ---------------------------------------------------


@dataclass
class _Snapshot:
    ids: np.ndarray  # entity ids, sorted by rear position
    speed: np.ndarray
    front: np.ndarray
    rear: np.ndarray
    searchers: list[PlatoonableEntity]
    unavailable_pos: np.ndarray  # positions of followers and maneuvering vehicles, sorted


def _snapshot(world) -> _Snapshot:
    ents = []
    searchers = []
    unavailable = []
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        if v.role is Role.FOLLOWER or v.maneuver.active:
            unavailable.append(v.position)
            continue
        e = entity_view(world, vid)
        ents.append(e)
        if v.role is Role.INDIVIDUAL:
            searchers.append(e)
    ents.sort(key=lambda e: (e.rear_position, e.id))
    return _Snapshot(
        ids=np.array([e.id for e in ents], dtype=np.int64),
        speed=np.array([e.desired_speed for e in ents], dtype=float),
        front=np.array([e.front_position for e in ents], dtype=float),
        rear=np.array([e.rear_position for e in ents], dtype=float),
        searchers=searchers,
        unavailable_pos=np.sort(np.array(unavailable, dtype=float)),
    )


def _candidates_for(c: PlatoonableEntity, snap: _Snapshot, params: FormationParams,
                    lo: float = -math.inf, hi: float = math.inf) -> list[CandidateEntry]:
    # window on the rear position; the slack keeps the prefilter a superset of the exact test
    r = params.position_range
    upper = min(c.front_position + r * (1 + 1e-9) + 1e-6, hi)
    a = np.searchsorted(snap.rear, c.front_position, side="left")
    b = np.searchsorted(snap.rear, upper, side="right")
    if b <= a:
        return []
    sl = slice(a, b)
    ids, speed, front, rear = snap.ids[sl], snap.speed[sl], snap.front[sl], snap.rear[sl]
    keep = (ids != c.id) & (front >= lo) & (front <= hi)
    ds = relative_speed_deviation(c.desired_speed, speed, params.speed_window)
    dp = relative_position_deviation(c.front_position, front, rear, r)
    keep &= (ds <= 1.0) & (dp <= 1.0) & (c.front_position <= rear)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return []
    f = weighted_deviation(ds[idx], dp[idx], params.alpha)
    order = np.argsort(ids[idx], kind="stable")
    return [
        CandidateEntry(c.id, int(ids[idx[k]]), float(ds[idx[k]]), float(dp[idx[k]]), float(f[k]))
        for k in order
    ]


def collect_candidates_centralized(world, params: FormationParams) -> CandidateSet:
    """Candidates for every available individual, over the whole road.

    ``filtered`` counts, per searcher, the vehicles rejected because they are
    platoon followers or already part of a maneuver.
    """
    snap = _snapshot(world)
    n_unavailable = int(snap.unavailable_pos.size)
    entries: list[CandidateEntry] = []
    found: dict[VehicleId, int] = {}
    filtered: dict[VehicleId, int] = {}
    for c in snap.searchers:
        own = _candidates_for(c, snap, params)
        entries.extend(own)
        found[c.id] = len(own)
        filtered[c.id] = n_unavailable
    return CandidateSet(entries, [c.id for c in snap.searchers], found, filtered)


def collect_candidates_distributed(world, ego: VehicleId, params: FormationParams,
                                   snapshot: Optional[_Snapshot] = None) -> CandidateSet:
    """Candidates visible to ``ego`` within its communication range.

    Raises
    ------
    FormationError
        ``ego`` is not an available individual.
    """
    v = world.vehicles.get(ego)
    if v is None or not v.available:
        raise FormationError(f"vehicle {ego} is not available for formation")
    snap = snapshot if snapshot is not None else _snapshot(world)
    c = PlatoonableEntity.individual(ego, v.desired_speed, v.position)
    lo, hi = v.position - params.comm_range, v.position + params.comm_range
    own = _candidates_for(c, snap, params, lo, hi)
    up = snap.unavailable_pos
    n_filtered = int(np.searchsorted(up, hi, side="right") - np.searchsorted(up, lo, side="left"))
    return CandidateSet(own, [ego], {ego: len(own)}, {ego: n_filtered})


def candidates_among(entities: Sequence[PlatoonableEntity], params: FormationParams,
                     searchers: Optional[Iterable[VehicleId]] = None) -> list[CandidateEntry]:
    """Scalar pairwise scan over explicit entities.

    Every entity searches unless ``searchers`` narrows the set. Used for
    hand-built scenarios and as the reference for the vectorized path.
    """
    wanted = None if searchers is None else set(searchers)
    out = []
    for c in sorted(entities, key=lambda e: e.id):
        if wanted is not None and c.id not in wanted:
            continue
        for t in sorted(entities, key=lambda e: e.id):
            if t.id == c.id or not is_eligible(c, t, params):
                continue
            d = deviation(c, t, params)
            out.append(CandidateEntry(c.id, t.id, d.speed_dev, d.position_dev, d.total))
    return out


def snapshot(world) -> _Snapshot:
    """Shared read-only view for several distributed collections in one step."""
    return _snapshot(world)


# --- greedy -------------------------------------------------------------------


def greedy_select(candidates: Sequence[CandidateEntry]) -> list[tuple[VehicleId, VehicleId]]:
    """Pick, searcher by searcher in ascending id, the cheapest remaining target.

    Once a pair is chosen, every entry mentioning either vehicle is dropped.
    Ties on the deviation go to the lower target id.
    """
    by_searcher: dict[VehicleId, list[CandidateEntry]] = {}
    for e in candidates:
        by_searcher.setdefault(e.searcher, []).append(e)
    blocked: set[VehicleId] = set()
    chosen = []
    for s in sorted(by_searcher):
        if s in blocked:
            continue
        best = None
        for e in by_searcher[s]:
            if e.target in blocked:
                continue
            if best is None or (e.total, e.target) < (best.total, best.target):
                best = e
        if best is not None:
            chosen.append((s, best.target))
            blocked.add(s)
            blocked.add(best.target)
    return chosen


# --- exact model --------------------------------------------------------------


@dataclass(frozen=True)
class Variable:
    searcher: VehicleId
    target: VehicleId
    cost: float


@dataclass
class ExactModel:
    """Binary assignment model.

    One variable per searcher for staying alone (cost ``self_cost``) plus one
    per eligible pair. Constraint rows are generated on demand because the
    pairwise exclusion family grows with in-degree times out-degree.
    """

    searchers: tuple[VehicleId, ...]
    variables: tuple[Variable, ...]
    self_cost: dict[VehicleId, float] = field(default_factory=dict)

    def __post_init__(self):
        for s in self.searchers:
            self.self_cost.setdefault(s, SELF_DEVIATION)
        searcher_set = set(self.searchers)
        for v in self.variables:
            if v.searcher not in searcher_set:
                raise FormationError(f"variable for unknown searcher {v.searcher}")

    @property
    def pair_variables(self) -> list[Variable]:
        return [v for v in self.variables if v.searcher != v.target]

    @property
    def n_constraints(self) -> int:
        pairs = self.pair_variables
        incoming: dict[VehicleId, int] = {}
        outgoing: dict[VehicleId, int] = {}
        for v in pairs:
            incoming[v.target] = incoming.get(v.target, 0) + 1
            outgoing[v.searcher] = outgoing.get(v.searcher, 0) + 1
        chain = sum(incoming.get(s, 0) * outgoing.get(s, 0) for s in self.searchers)
        return len(self.searchers) + len(incoming) + chain

    def iter_constraints(self) -> Iterator[tuple[str, list[int], str, int]]:
        """Yield ``(kind, variable indices, sense, rhs)`` rows."""
        by_searcher: dict[VehicleId, list[int]] = {}
        incoming: dict[VehicleId, list[int]] = {}
        for i, v in enumerate(self.variables):
            by_searcher.setdefault(v.searcher, []).append(i)
            if v.searcher != v.target:
                incoming.setdefault(v.target, []).append(i)
        for s in self.searchers:
            yield ("one_per_searcher", by_searcher.get(s, []), "==", 1)
        for t in sorted(incoming):
            yield ("one_per_target", incoming[t], "<=", 1)
        for l in self.searchers:
            outs = [i for i in by_searcher.get(l, []) if self.variables[i].target != l]
            for k in incoming.get(l, []):
                for j in outs:
                    yield ("no_chain", [k, j], "<=", 1)


def build_exact_model(candidates: Sequence[CandidateEntry], searchers: Iterable[VehicleId]) -> ExactModel:
    searcher_list = tuple(sorted(set(searchers)))
    known = set(searcher_list)
    by_searcher: dict[VehicleId, list[Variable]] = {s: [Variable(s, s, SELF_DEVIATION)] for s in searcher_list}
    for e in candidates:
        if e.searcher not in known:
            raise FormationError(f"candidate for unknown searcher {e.searcher}")
        if e.searcher != e.target:
            by_searcher[e.searcher].append(Variable(e.searcher, e.target, e.total))
    variables = tuple(itertools.chain.from_iterable(
        sorted(by_searcher[s], key=lambda v: v.target) for s in searcher_list
    ))
    return ExactModel(searcher_list, variables)


def objective(model: ExactModel, assignments: dict[VehicleId, VehicleId]) -> float:
    """Full objective: every searcher contributes its chosen cost, self included."""
    cost = {(v.searcher, v.target): v.cost for v in model.variables}
    return math.fsum(
        model.self_cost[s] if assignments.get(s, s) == s else cost[(s, assignments[s])]
        for s in model.searchers
    )


def paper_convention_objective(model: ExactModel, assignments: dict[VehicleId, VehicleId]) -> float:
    """Objective that omits the self cost of searchers that end up as join targets
    while having at least one real candidate of their own."""
    targets = {t for s, t in assignments.items() if s != t}
    has_candidates = {v.searcher for v in model.pair_variables}
    dropped = [s for s in model.searchers if s in targets and s in has_candidates]
    return objective(model, assignments) - math.fsum(model.self_cost[s] for s in dropped)


def validate_solution(model: ExactModel, assignments: dict[VehicleId, VehicleId]) -> None:
    """Raise ``FormationError`` unless ``assignments`` satisfies every constraint."""
    pairs = {(v.searcher, v.target) for v in model.variables}
    if set(assignments) != set(model.searchers):
        raise FormationError("every searcher needs exactly one assignment")
    used: dict[VehicleId, VehicleId] = {}
    for s, t in assignments.items():
        if (s, t) not in pairs:
            raise FormationError(f"assignment {s}->{t} is not a model variable")
        if s != t:
            if t in used:
                raise FormationError(f"target {t} assigned twice ({used[t]}, {s})")
            used[t] = s
    for t, s in used.items():
        if t in assignments and assignments[t] != t:
            raise FormationError(f"vehicle {t} is joined by {s} while joining {assignments[t]}")


def _scaled_weights(values: Sequence[tuple[float, float]]) -> tuple[list[int], int]:
    # exact integer image of (self_cost - cost) for binary floats, and the scale used
    ratios = []
    shift = 0
    for a, b in values:
        na, da = a.as_integer_ratio()
        nb, db = b.as_integer_ratio()
        ratios.append((na, da, nb, db))
        shift = max(shift, da.bit_length() - 1, db.bit_length() - 1)
    scale = 1 << shift
    return [na * (scale // da) - nb * (scale // db) for na, da, nb, db in ratios], scale


def solve_exact(model: ExactModel, time_limit: float) -> AssignmentSolution:
    """Optimal assignment, or the best incumbent found within ``time_limit`` seconds.

    The incumbent per connected component is the better of the interrupted
    matching and the greedy assignment; ``gap`` compares it against the
    dual bound. The search stops at 90% of ``time_limit`` to leave room for
    the setup, which is linear in the number of variables (about 0.2 s for
    30k variables), so limits below that setup cost cannot be honoured.
    """
    if time_limit <= 0:
        raise FormationError("time_limit must be positive")
    start = time.perf_counter()
    deadline = start + 0.9 * time_limit

    # strongest direction per unordered pair, ties to the lower searcher id
    best: dict[tuple[VehicleId, VehicleId], Variable] = {}
    for v in model.pair_variables:
        key = (min(v.searcher, v.target), max(v.searcher, v.target))
        saving = model.self_cost[v.searcher] - v.cost
        cur = best.get(key)
        if cur is None:
            best[key] = v
        else:
            cur_saving = model.self_cost[cur.searcher] - cur.cost
            if (saving, -v.searcher) > (cur_saving, -cur.searcher):
                best[key] = v
    edges_v = [v for v in best.values() if model.self_cost[v.searcher] - v.cost > 0]
    weights, scale = _scaled_weights([(model.self_cost[v.searcher], v.cost) for v in edges_v])
    kept = [(v, w) for v, w in zip(edges_v, weights) if w > 0]

    greedy = dict(greedy_select([
        CandidateEntry(v.searcher, v.target, 0.0, 0.0, v.cost) for v in model.pair_variables
    ]))

    # connected components via union-find
    parent: dict[VehicleId, VehicleId] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for v, _ in kept:
        ra, rb = find(v.searcher), find(v.target)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    components: dict[VehicleId, list[tuple[Variable, int]]] = {}
    for v, w in kept:
        components.setdefault(find(v.searcher), []).append((v, w))

    assignments = {s: s for s in model.searchers}
    total_ub = 0
    optimal = True
    for root in sorted(components):
        comp = components[root]
        nodes = sorted({x for v, _ in comp for x in (v.searcher, v.target)})
        index = {x: i for i, x in enumerate(nodes)}
        lookup = {(index[v.searcher], index[v.target]): v for v, _ in comp}
        wmap = {(v.searcher, v.target): w for v, w in comp}
        result = max_weight_matching(
            len(nodes),
            [(index[v.searcher], index[v.target], w) for v, w in comp],
            deadline=deadline,
        )
        chosen = []
        for i, j in enumerate(result.mate):
            if j > i:
                chosen.append(lookup.get((i, j)) or lookup[(j, i)])
        weight = result.weight
        if not result.complete:
            optimal = False
            gw = [(s, t) for s, t in greedy.items() if (s, t) in wmap and find(s) == root]
            greedy_weight = sum(wmap[p] for p in gw)
            if greedy_weight > weight:
                chosen = [Variable(s, t, 0.0) for s, t in gw]
                weight = greedy_weight
        for v in chosen:
            assignments[v.searcher] = v.target
        total_ub += result.upper_bound

    obj = objective(model, assignments)
    gap = 0.0
    if not optimal and obj > 0:
        bound = math.fsum(model.self_cost.values()) - total_ub / scale
        gap = max(0.0, (obj - bound) / obj)
    elapsed = time.perf_counter() - start
    if not optimal:
        LOG.info("solver hit its time limit after %.2f s, gap %.4f", elapsed, gap)
    return AssignmentSolution(assignments, obj, gap, elapsed, optimal)


def brute_force_solve(model: ExactModel) -> AssignmentSolution:
    """Enumerate all feasible assignments (small instances only).

    Ties on the objective go to the lexicographically smallest assignment
    vector (targets listed in searcher order).
    """
    if len(model.searchers) > BRUTE_FORCE_MAX_SEARCHERS:
        raise FormationError(f"brute force limited to {BRUTE_FORCE_MAX_SEARCHERS} searchers")
    start = time.perf_counter()
    options = {s: [] for s in model.searchers}
    for v in model.variables:
        options[v.searcher].append(v)
    searchers = model.searchers
    best_val = math.inf
    best_vec: Optional[tuple] = None
    chosen: list[Variable] = []

    def rec(k, targets_used, joiners, joined):
        nonlocal best_val, best_vec
        if k == len(searchers):
            val = math.fsum(v.cost for v in chosen)
            vec = tuple(v.target for v in chosen)
            if val < best_val or (val == best_val and vec < best_vec):
                best_val, best_vec = val, vec
            return
        s = searchers[k]
        for v in sorted(options[s], key=lambda x: x.target):
            if v.target == s:
                chosen.append(v)
                rec(k + 1, targets_used, joiners, joined)
                chosen.pop()
                continue
            t = v.target
            if t in targets_used or s in joined or t in joiners:
                continue
            chosen.append(v)
            rec(k + 1, targets_used | {t}, joiners | {s}, joined | {t})
            chosen.pop()

    rec(0, frozenset(), frozenset(), frozenset())
    assignments = dict(zip(searchers, best_vec or ()))
    return AssignmentSolution(assignments, best_val if searchers else 0.0, 0.0,
                              time.perf_counter() - start, True)


# --- applying decisions -------------------------------------------------------


def join_duration(world, joiner: VehicleId, target: VehicleId, params: FormationParams) -> float:
    """Seconds until ``joiner`` reaches the tail of ``target``.

    The approach speed is the smaller of the allowed speed window and the
    headroom up to the vehicle speed limit; at least one step.
    """
    cfg = world.config
    c = world.vehicles[joiner]
    t = entity_view(world, target)
    closing = min(params.speed_window * c.desired_speed, cfg.v_max - t.desired_speed)
    distance = (t.rear_position - cfg.vehicle_length - cfg.cacc_gap) - c.position
    if closing <= 0:
        return max(cfg.step_length, cfg.join_timeout)
    return max(cfg.step_length, distance / closing)


def apply_solution(world, pairs: Iterable[tuple[VehicleId, VehicleId]], params: FormationParams) -> int:
    """Start join maneuvers; pairs whose parties are no longer free are skipped."""
    started = 0
    for s, t in pairs:
        a = world.vehicles.get(s)
        b = world.vehicles.get(t)
        if a is None or b is None or not a.available or not b.is_target_candidate:
            LOG.debug("skip join %s->%s, party unavailable", s, t)
            continue
        done = world.clock + join_duration(world, s, t, params)
        a.maneuver = Maneuver(ManeuverKind.JOINING, target=t, start_time=world.clock, completion_time=done)
        b.maneuver = Maneuver(ManeuverKind.BEING_JOINED, partner=s, start_time=world.clock, completion_time=done)
        started += 1
    return started
