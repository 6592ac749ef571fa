"""
Lazy generation and the tile cache
==================================

A request touching one tile of a 512x512 scene only reads that tile of each
band. Repeating the request is served entirely from the cache.
"""

import tempfile
from pathlib import Path

from vcube import BBox, Catalog, LocalFetcher, Request, TileCache, execute, plan, render_dot
from vcube.raster import GeoTransform
from vcube.scenegen import SceneTemplate, gen_optical
from vcube.sensors import Sensor

work = Path(tempfile.mkdtemp(prefix="vcube-demo-"))
tpl = SceneTemplate(Sensor.OPTICAL, 512, 512, transform=GeoTransform(0, 5120, 10, 10), seed=4)
cat = Catalog(work / "catalog")
for sidecar in gen_optical(tpl, work / "data"):
    cat.ingest_scene(sidecar)
spec = cat.register_product("""
name: ndvi
sensor: OPTICAL
nodes:
  - {id: ndvi, op: band_index, params: {index: NDVI}, inputs: [band:B08, band:B04]}
outputs:
  ndvi: ndvi
""").spec
print(render_dot(spec))

scene = cat.scenes()[0]
req = Request("ndvi", BBox(0, 2560, 2560, 5120), scene.timestamp, scene.timestamp)
p = plan(cat, req)
for task in p.tasks:
    print(task.kind, task.ref, tuple(task.tile), task.key[:12])

cache = TileCache(work / "cache")
fetcher = LocalFetcher()
out, cold = execute(p, cache, fetcher)
for rec in fetcher.log[:3]:
    print("read", rec.band, tuple(rec.window), rec.payload_bytes, "bytes")
print("cold:", cold.to_json())

_, warm = execute(plan(cat, req), cache, LocalFetcher())
print("warm:", warm.to_json())
print("cache:", cache.stats())
