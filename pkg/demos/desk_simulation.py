"""
A desk-scale freeway run
========================

Ten kilometres, three lanes, half an hour of traffic at 15 vehicles per
lane-km, once without platoons and once with centralized greedy
formation.
"""

import logging

from platoonform.metrics import aggregate
from platoonform.model import Approach, desk_scale
from platoonform.traffic import run_simulation

logging.basicConfig(level=logging.INFO, format="%(message)s")

for approach in (Approach.HUMAN, Approach.CENTRALIZED_GREEDY):
    cfg = desk_scale(approach=approach, target_density=15.0, speed_window=0.2)
    world = run_simulation(cfg)
    (row,) = aggregate(world.ledger, {"approach": approach.name}, cfg.formation.speed_window)
    print(f"{approach.name}: {row['n_trips']} trips, mean speed {row['mean_speed'] * 3.6:.1f} km/h, "
          f"|deviation| {row['abs_deviation_mean']:.4f}, platooned {row['platooned_share']:.0%}, "
          f"fuel {row['fuel_l_per_100km_mean']:.2f} l/100 km, platoon sizes {row['platoon_size_hist'] or '-'}")
