"""Platoon formation on a simulated freeway.

Submodules
----------
model       vehicles, platoons, scenario parameters
similarity  deviation between a searcher and a candidate
formation   candidate collection, greedy and exact assignment
traffic     the discrete-time freeway simulation
metrics     trip/formation records, fuel model, aggregation
cli         ``platoonform run`` / ``platoonform sweep``
"""

from .model import (
    Approach,
    FormationParams,
    PlatoonableEntity,
    ScenarioConfig,
    desk_scale,
)

__version__ = "0.1.0"

__all__ = ["Approach", "FormationParams", "PlatoonableEntity", "ScenarioConfig", "desk_scale", "__version__"]
