"""
Deviation between a searcher and a candidate
============================================

Four vehicles on a freeway, each described by its desired speed and
position. A vehicle looks for a platoon to join; the deviation to each
candidate mixes how different the speeds are (relative to the allowed
speed window ``m``) and how far away the candidate is (relative to the
search range ``r``).
"""

from platoonform.formation import build_exact_model, candidates_among, greedy_select, solve_exact
from platoonform.model import KMH, FormationParams, PlatoonableEntity
from platoonform.similarity import deviation, is_eligible

params = FormationParams(alpha=0.6, speed_window=0.6, position_range=400.0)

vehicles = [
    PlatoonableEntity.individual(5, 121 * KMH, 430.0),
    PlatoonableEntity.individual(13, 89 * KMH, 270.0),
    PlatoonableEntity.individual(20, 107 * KMH, 250.0),
    PlatoonableEntity.individual(37, 93 * KMH, 70.0),
]

# %%
# Pairwise deviations. Only targets at or ahead of the searcher and within
# both windows are eligible.
for c in vehicles:
    for t in vehicles:
        if c.id != t.id and is_eligible(c, t, params):
            d = deviation(c, t, params)
            print(f"{c.id:>2} -> {t.id:>2}: speed {d.speed_dev:.3f}  position {d.position_dev:.3f}  total {d.total:.3f}")

# %%
# The exact assignment minimizes the summed deviation; the greedy one
# takes the cheapest remaining pair first.
entries = candidates_among(vehicles, params)
model = build_exact_model(entries, [v.id for v in vehicles])
print("exact :", solve_exact(model, time_limit=1.0).joins)
print("greedy:", greedy_select(entries))
