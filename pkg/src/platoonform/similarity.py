"""Deviation between a searching vehicle and a candidate target.

The functions accept scalars or numpy arrays (elementwise); the array path
performs the same floating-point operations in the same order, so vectorized
candidate collection reproduces the scalar values bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FormationParams, PlatoonableEntity

SELF_DEVIATION = 1.0


@dataclass(frozen=True)
class Deviation:
    speed_dev: float
    position_dev: float
    total: float


def relative_speed_deviation(searcher_speed, target_speed, speed_window):
    return np.abs(searcher_speed - target_speed) / (speed_window * searcher_speed)


def relative_position_deviation(searcher_pos, target_front, target_rear, position_range):
    return np.minimum(np.abs(searcher_pos - target_front), np.abs(target_rear - searcher_pos)) / position_range


def weighted_deviation(speed_dev, position_dev, alpha):
    return alpha * speed_dev + (1 - alpha) * position_dev


def speed_deviation(c: PlatoonableEntity, t: PlatoonableEntity, m: float) -> float:
    """Speed difference relative to the searcher's allowed window ``m * D_c``."""
    return abs(c.desired_speed - t.desired_speed) / (m * c.desired_speed)


def position_deviation(c: PlatoonableEntity, t: PlatoonableEntity, r: float) -> float:
    """Distance to the closer end of ``t`` relative to the search range ``r``."""
    return min(abs(c.front_position - t.front_position), abs(t.rear_position - c.front_position)) / r


def deviation(c: PlatoonableEntity, t: PlatoonableEntity, params: FormationParams) -> Deviation:
    """Weighted deviation; a self pair is pinned to the maximum 1.0."""
    if c.id == t.id:
        return Deviation(0.0, 0.0, SELF_DEVIATION)
    ds = speed_deviation(c, t, params.speed_window)
    dp = position_deviation(c, t, params.position_range)
    return Deviation(ds, dp, params.alpha * ds + (1 - params.alpha) * dp)


def is_eligible(c: PlatoonableEntity, t: PlatoonableEntity, params: FormationParams) -> bool:
    """Both windows hold (inclusive) and ``t`` ends at or ahead of ``c``."""
    if c.id == t.id:
        return True
    return (
        c.front_position <= t.rear_position
        and speed_deviation(c, t, params.speed_window) <= 1.0
        and position_deviation(c, t, params.position_range) <= 1.0
    )
