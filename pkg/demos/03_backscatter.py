"""
SAR backscatter chain
=====================

Calibrate speckled digital numbers to sigma nought, multilook, apply a Lee
filter and convert to decibels, all as one declared product.
"""

import tempfile
from pathlib import Path

from vcube import BBox, Catalog, LocalFetcher, Request, execute, plan
from vcube.raster import read_vras
from vcube.scenegen import SceneTemplate, gen_sar
from vcube.sensors import Sensor

work = Path(tempfile.mkdtemp(prefix="vcube-demo-"))
tpl = SceneTemplate(Sensor.SAR, 256, 256, seed=3, looks=4.0, cal_a="smooth")
cat = Catalog(work / "catalog")
for sidecar in gen_sar(tpl, work / "data"):
    cat.ingest_scene(sidecar)

cat.register_product("""
name: backscatter
sensor: SAR
nodes:
  - {id: cal, op: calibrate_sigma0, inputs: [band:VV, band:CAL_A]}
  - {id: ml, op: multilook, params: {factor: 2}, inputs: [node:cal]}
  - {id: lee, op: lee_filter, params: {window: 5, looks: 4.0}, inputs: [node:ml]}
  - {id: db, op: to_db, inputs: [node:lee]}
outputs:
  sigma0: cal
  multilooked: ml
  filtered: lee
  sigma0_db: db
""")

scene = cat.scenes()[0]
out, _ = execute(plan(cat, Request("backscatter", BBox(*tpl.footprint()), scene.timestamp,
                                   scene.timestamp)), None, LocalFetcher())

truth = read_vras(work / "data" / "truth" / "SIGMA0.vras").data
print(f"truth mean      {truth.mean():.4f}")
print(f"calibrated mean {out['sigma0'].data.mean():.4f}")
for name in ("sigma0", "multilooked", "filtered"):
    r = out[name]
    print(f"{name:12s} {r.width}x{r.height} variance {r.data.var():.5f}")
db = out["sigma0_db"].data
print(f"dB range {db.min():.1f} .. {db.max():.1f}")
