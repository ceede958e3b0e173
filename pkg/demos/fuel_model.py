"""
Fuel consumption by platoon position
====================================

The same speed profile is replayed for a solo car and for each platoon
position; air drag savings scale consumption down.
"""

import numpy as np

from platoonform.metrics import PlatoonPosition, fuel_step

rng = np.random.default_rng(0)
accel = np.clip(rng.normal(0.0, 0.5, 1200), -3.0, 2.5)
speed = np.clip(30.0 + np.cumsum(accel) * 0.3, 10.0, 42.0)

totals = {p: sum(fuel_step(float(v), float(a), 1.0, p) for v, a in zip(speed, accel)) for p in PlatoonPosition}
dist_km = speed.sum() / 1000.0
for p, litres in totals.items():
    print(f"{p.name:>6}: {litres:.3f} l  ({100 * litres / dist_km:.2f} l/100 km, "
          f"ratio {litres / totals[PlatoonPosition.SOLO]:.4f})")
