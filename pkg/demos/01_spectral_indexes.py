"""
Spectral indexes on a synthetic optical scene
=============================================

Generate one cloud-free optical scene, then evaluate every built-in index
directly on the band rasters.
"""

import tempfile
from pathlib import Path

import numpy as np

from vcube import ops
from vcube.raster import Raster, read_vras
from vcube.scenegen import SceneTemplate, gen_optical
from vcube.sensors import Sensor

work = Path(tempfile.mkdtemp(prefix="vcube-demo-"))
(sidecar,) = gen_optical(SceneTemplate(Sensor.OPTICAL, 128, 128, seed=1), work)
bands = {p.stem: read_vras(p) for p in sidecar.parent.glob("*.vras")}
print("bands:", sorted(bands))

# each index reads its inputs in a fixed order, e.g. NDVI = (B08 - B04) / (B08 + B04)
for name, roles in ops.INDEX_BANDS.items():
    out = ops.band_index(name, *(bands[b] for b in roles))
    valid = out.valid_mask()
    print(f"{name:6s} inputs={','.join(roles):12s} mean={out.data[valid].mean():+.4f} "
          f"nodata={int((~valid).sum())}")

# undefined pixels become nodata instead of inf/nan
zero = Raster.from_values(np.zeros((1, 1)), bands["B08"].transform)
print("NDVI(0, 0) ->", ops.band_index("NDVI", zero, zero).data[0, 0])
