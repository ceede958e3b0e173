"""
Car-following models
====================

A follower approaches a slower leader under each controller, and a
four-car platoon reacts to its leader braking. Speeds are updated front to
back, so each car reacts to what the car ahead does in the same step.
"""

from platoonform.model import ScenarioConfig
from platoonform.traffic import acc_speed_update, cacc_step, krauss_step

cfg = ScenarioConfig()
dt = cfg.step_length
L = cfg.vehicle_length

# %%
# Human (Krauss) and ACC followers closing in on a leader at 25 m/s.
for name in ("krauss", "acc"):
    gap, v, v_lead = 120.0, 33.0, 25.0
    for _ in range(60):
        eff = gap - cfg.min_gap
        if name == "krauss":
            v = krauss_step(v, 33.0, (eff, v_lead), cfg)
        else:
            v = acc_speed_update(v, 33.0, (eff, v_lead), cfg)
        gap += (v_lead - v) * dt
    print(f"{name:>6}: speed {v:.2f} m/s, gap {gap:.1f} m after 60 s")

# %%
# A CACC platoon: every follower sees its predecessor and the leader.
n = 4
speed = [30.0] * n
pos = [1000.0 - i * (L + cfg.cacc_gap) for i in range(n)]
worst = 0.0
for step in range(120):
    accel = [-2.0 if 10 <= step < 15 else 0.0]
    for i in range(1, n):
        gap = pos[i - 1] - L - pos[i]
        accel.append(cacc_step(speed[i], gap, speed[i - 1], accel[i - 1], speed[0], accel[0], cfg))
    for i in range(n):
        speed[i] = max(0.0, speed[i] + accel[i] * dt)
        pos[i] += speed[i] * dt
    gaps = [pos[i - 1] - L - pos[i] for i in range(1, n)]
    worst = max(worst, max(abs(g - cfg.cacc_gap) for g in gaps))
print(f"CACC: worst gap error {worst:.3f} m while braking, final gaps {[round(g, 3) for g in gaps]}")
