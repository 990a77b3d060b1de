"""
Severe convection: CBSS against a practically perfect hindcast
==============================================================

A Weisman-Klemp sounding inside a disc of strong 500 hPa wind gives a patch
of high CAPE times shear. Storm reports scattered over the same area are
smoothed into a practically perfect hindcast (PPH), and the two fields are
compared cell by cell.

Run with ``python3 demos/severe_pph.py``.
"""

import tempfile
from pathlib import Path

import numpy as np

from ewbench.container import load_cube
from ewbench.harness.synth import generate_synthetic
from ewbench.severe import Report, compute_pph, pph_bounding_box, region_contingency, report_hits_misses
from ewbench.thermo import compute_bulk_shear, compute_cbss, mlcape_from_cubes, severe_environment

work = Path(tempfile.mkdtemp(prefix="ewb-severe-"))
truth = generate_synthetic("sounding", work)
t, q, u = (load_cube(work / f"{n}.json") for n in ("t", "q", "u"))
u10 = load_cube(work / "u10.json")
spec = t.spec

# MLCAPE is computed column by column; shear is the 10 m to 500 hPa vector difference.
cape = mlcape_from_cubes(t, q)
k500 = u.level_index(500.0)
shear = compute_bulk_shear(u10.field2d(), np.zeros(spec.shape), u.field2d(0, k500), np.zeros(spec.shape))
cbss = compute_cbss(cape, shear)
predicted = severe_environment(cbss)
print(f"MLCAPE at centre {cape.max():.0f} J/kg (truth {truth['mlcape_center']:.0f});"
      f" {predicted.sum()} cells with CBSS >= 15000")

# Reports: a ring of tornado and hail reports inside the disc, plus one far outside.
when = t.times[0]
centre = (float(spec.lats[20]), float(spec.lons[20]))
ring = [Report(when, centre[0] + 0.75 * np.sin(a), centre[1] + 0.75 * np.cos(a), "hail")
        for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
reports = ring + [Report(when, centre[0] + 4.0, centre[1] + 4.0, "tornado")]
pph = compute_pph(reports, spec)
print("PPH maximum", round(float(pph.probability.max()), 3), "box", pph_bounding_box(pph))

table = region_contingency(predicted, pph.region())
print(f"CSI {table.csi:.3f}  FAR {table.far:.3f}  counts {table}")
print("reports hit/missed:", report_hits_misses(predicted, reports, spec))
