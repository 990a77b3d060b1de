"""
Finding a heat wave in a temperature series
===========================================

A synthetic 2 m temperature record rises above its 85th-percentile
climatology for a few days. We detect the event, grow its box and score a
forecast that runs one degree too cool.

Run with ``python3 demos/heat_wave.py``.
"""

import tempfile
from pathlib import Path

import numpy as np

from ewbench.climatology import PercentileClimatology, build_event_case, heatwave_runs
from ewbench.container import load_cube, load_landmask
from ewbench.grid import FieldCube
from ewbench.harness.synth import generate_synthetic
from ewbench.metrics import mae, rmae_max

work = Path(tempfile.mkdtemp(prefix="ewb-heat-"))
truth = generate_synthetic("heat_series", work, {"amplitude": 6.0, "peak_day": 5})
print("constructed event days:", truth["event_days"])

# The generator writes the series, its climatology and a land mask as EWB containers.
t2m = load_cube(work / "t2m.json")
clim = PercentileClimatology.from_cube(load_cube(work / "clim85.json"))
land = load_landmask(work / "landmask.json")
print("grid", t2m.spec.shape, "samples", t2m.ntime, "cadence (h)", t2m.cadence_seconds() / 3600)

# Per-gridpoint longest run of hot days; one missed day would be bridged.
runs = heatwave_runs(t2m, clim, landmask=land)
print("longest run per point (days):\n", runs.length)

# Grow a box around a seed point and read off the event window.
seed = (float(t2m.spec.lats[1]), float(t2m.spec.lons[1]))
case = build_event_case("demo-heat", "heat_wave", t2m, clim, seed, landmask=land)
print("case:", case.as_dict())

# A forecast that is uniformly 1 K too cool scores 1 K on both metrics.
cool = FieldCube("t2m", "K", t2m.spec, t2m.times, t2m.values - 1.0)
o, f = t2m.surface(), cool.surface()
print("MAE  =", mae(f, o))
print("RMAE of the maximum =", rmae_max(cool, t2m).value)
assert np.isclose(mae(f, o), 1.0)
