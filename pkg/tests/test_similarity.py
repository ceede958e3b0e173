import math

import numpy as np
import pytest

from _support import EXAMPLE_PARAMS, EXAMPLE_PRINTED, example_entities, printed_total, truncate3
from platoonform.model import KMH, FormationParams, PlatoonableEntity
from platoonform.similarity import (
    SELF_DEVIATION,
    deviation,
    is_eligible,
    position_deviation,
    relative_position_deviation,
    relative_speed_deviation,
    speed_deviation,
    weighted_deviation,
)

E = {e.id: e for e in example_entities()}


def test_speed_deviation_example_values():
    assert str(truncate3(speed_deviation(E[13], E[5], 0.6))) == "0.599"
    assert speed_deviation(E[37], E[20], 0.6) == pytest.approx(0.2509, abs=1e-4)
    # 14 km/h over 0.6 * 93 km/h
    assert speed_deviation(E[37], E[20], 0.6) == pytest.approx(14 / (0.6 * 93), rel=1e-12)


def test_speed_deviation_equal_speeds_is_zero():
    a = PlatoonableEntity.individual(1, 30.0, 0.0)
    b = PlatoonableEntity.individual(2, 30.0, 100.0)
    assert speed_deviation(a, b, 0.2) == 0.0


def test_position_deviation_example_values():
    assert position_deviation(E[20], E[5], 400.0) == pytest.approx(0.45)
    co = PlatoonableEntity.individual(1, 30.0, 50.0)
    assert position_deviation(co, PlatoonableEntity.individual(2, 31.0, 50.0), 400.0) == 0.0


def test_position_deviation_uses_nearer_end_of_platoon():
    c = PlatoonableEntity.individual(1, 30.0, 100.0)
    platoon = PlatoonableEntity(2, 30.0, 600.0, 550.0)
    assert position_deviation(c, platoon, 400.0) == pytest.approx(450 / 400)
    assert not is_eligible(c, platoon, FormationParams(speed_window=0.2, position_range=400.0))


@pytest.mark.parametrize("pair", sorted(EXAMPLE_PRINTED))
def test_deviation_matches_printed_values(pair):
    c, t = pair
    d = deviation(E[c], E[t], EXAMPLE_PARAMS)
    assert str(printed_total(d.speed_dev, d.position_dev, 0.6)) == str(truncate3(EXAMPLE_PRINTED[pair]))
    assert d.total == pytest.approx(0.6 * d.speed_dev + 0.4 * d.position_dev, abs=1e-15)


def test_deviation_20_13_and_37_5():
    assert float(truncate3(deviation(E[20], E[13], EXAMPLE_PARAMS).total)) == 0.188
    assert round(deviation(E[37], E[5], EXAMPLE_PARAMS).total, 2) == 0.66


def test_self_deviation_is_one():
    d = deviation(E[20], E[20], EXAMPLE_PARAMS)
    assert d.total == SELF_DEVIATION == 1.0
    assert is_eligible(E[20], E[20], EXAMPLE_PARAMS)


def test_eligibility_examples():
    assert not is_eligible(E[5], E[13], EXAMPLE_PARAMS)  # target behind
    assert is_eligible(E[37], E[5], EXAMPLE_PARAMS)


def test_thresholds_are_inclusive():
    c = PlatoonableEntity.individual(1, 30.0, 0.0)
    edge = PlatoonableEntity.individual(2, 36.0, 400.0)  # d_s = 6 / (0.2 * 30) = 1, d_p = 1
    params = FormationParams(speed_window=0.2, position_range=400.0)
    assert speed_deviation(c, edge, 0.2) == pytest.approx(1.0)
    assert is_eligible(c, PlatoonableEntity.individual(3, 30.0, 400.0), params)


def _random_entity(rng, i):
    front = float(rng.uniform(0, 2000))
    length = float(rng.choice([0.0, rng.uniform(0, 60)]))
    return PlatoonableEntity(i, float(rng.uniform(20, 45)), front, front - length)


def test_asymmetry_on_random_pairs():
    rng = np.random.default_rng(3)
    params = FormationParams(alpha=0.5, speed_window=0.3, position_range=600.0)
    differs = 0
    for _ in range(200):
        a, b = _random_entity(rng, 1), _random_entity(rng, 2)
        if deviation(a, b, params).total != deviation(b, a, params).total:
            differs += 1
    assert differs > 150


def test_eligible_totals_lie_in_unit_interval_and_monotone():
    rng = np.random.default_rng(4)
    for _ in range(2000):
        a, b = _random_entity(rng, 1), _random_entity(rng, 2)
        small = FormationParams(alpha=float(rng.uniform()), speed_window=float(rng.uniform(0.05, 0.5)),
                                position_range=float(rng.uniform(100, 800)))
        if is_eligible(a, b, small):
            assert 0.0 <= deviation(a, b, small).total <= 1.0
            large = FormationParams(alpha=small.alpha, speed_window=min(1.0, small.speed_window * 1.5),
                                    position_range=small.position_range * 1.5)
            assert is_eligible(a, b, large)


def test_alpha_extremes():
    a, b = E[37], E[13]
    only_speed = FormationParams(alpha=1.0, speed_window=0.6, position_range=400.0)
    only_pos = FormationParams(alpha=0.0, speed_window=0.6, position_range=400.0)
    assert deviation(a, b, only_speed).total == speed_deviation(a, b, 0.6)
    assert deviation(a, b, only_pos).total == position_deviation(a, b, 400.0)


def test_array_helpers_agree_with_scalar_functions():
    rng = np.random.default_rng(5)
    c = _random_entity(rng, 0)
    targets = [_random_entity(rng, i) for i in range(1, 50)]
    ds = relative_speed_deviation(c.desired_speed, np.array([t.desired_speed for t in targets]), 0.3)
    dp = relative_position_deviation(c.front_position, np.array([t.front_position for t in targets]),
                                     np.array([t.rear_position for t in targets]), 500.0)
    f = weighted_deviation(ds, dp, 0.7)
    for k, t in enumerate(targets):
        assert ds[k] == speed_deviation(c, t, 0.3)
        assert dp[k] == position_deviation(c, t, 500.0)
        assert math.isclose(f[k], 0.7 * ds[k] + 0.3 * dp[k], rel_tol=0, abs_tol=1e-15)


def test_units_are_si():
    assert E[5].desired_speed == pytest.approx(121 / 3.6)
    assert KMH == pytest.approx(1 / 3.6)
