"""
Cloud-free composite from a cloudy time series
==============================================

Eight dates with 40% cloud cover each are ingested into a catalog; a
temporal_synthesis product blends the clear observations around a centre date.
"""

import tempfile
from pathlib import Path

import numpy as np

from vcube import BBox, Catalog, LocalFetcher, Request, TileCache, execute, plan
from vcube.raster import read_vras
from vcube.scenegen import SceneTemplate, daily, gen_optical
from vcube.sensors import Sensor

work = Path(tempfile.mkdtemp(prefix="vcube-demo-"))
stamps = daily(1_672_531_200, 8, step_days=5)
tpl = SceneTemplate(Sensor.OPTICAL, 256, 256, timestamps=stamps, seed=2, cloud_fraction=0.4)

cat = Catalog(work / "catalog")
for sidecar in gen_optical(tpl, work / "data"):
    cat.ingest_scene(sidecar)
print(len(cat), "scenes ingested")

cat.register_product("""
name: red_composite
sensor: OPTICAL
nodes:
  - {id: red, op: temporal_synthesis, inputs: [band:B04, band:MASK]}
outputs:
  red: red
""")

center = (stamps[0] + stamps[-1]) / 2
req = Request("red_composite", BBox(*tpl.footprint()), stamps[0], stamps[-1],
              center=center, half_window=25 * 86400)
out, stats = execute(plan(cat, req), TileCache(work / "cache"), LocalFetcher())

truth = read_vras(work / "data" / "truth" / "B04.vras").data
single = read_vras(cat.scenes()[0].bands["B04"]).data
ok = out["red"].valid_mask()
rmse = lambda a: float(np.sqrt(np.mean((a[ok].astype(float) - truth[ok]) ** 2)))  # noqa: E731
print(f"first date, clouds included, rmse: {rmse(single):.4f}")
print(f"composite rmse:   {rmse(out['red'].data):.4f}")
print("stats:", stats.to_json())
