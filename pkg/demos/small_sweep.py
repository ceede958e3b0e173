"""
A small parameter sweep
=======================

The same grid the command line runs with ``platoonform sweep``, trimmed
to two approaches and two densities at desk scale.
"""

import csv
import tempfile
from pathlib import Path

from platoonform.cli import SweepSpec, sweep
from platoonform.model import Approach, desk_scale

spec = SweepSpec({Approach.ACC, Approach.DISTRIBUTED_GREEDY}, speed_windows=[0.2], densities=[5.0, 15.0])
base = desk_scale(sim_duration=900.0, warmup=300.0)

with tempfile.TemporaryDirectory() as tmp:
    code = sweep(spec, base, tmp, jobs=2)
    with open(Path(tmp) / "summary.csv", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            print(f"{row['run_id']:<28} trips {row['n_trips']:>4}  mean speed {float(row['mean_speed']):.2f} m/s"
                  f"  |dev| {row['abs_deviation_mean']}")
print("exit code", code)
