import json
from pathlib import Path

import numpy as np
import pytest

from vcube.raster import GeoTransform, Raster, write_vras

NDVI_SPEC = """\
name: ndvi
sensor: OPTICAL
nodes:
  - id: n1
    op: band_index
    params: { index: NDVI }
    inputs: [band:B08, band:B04]
outputs:
  ndvi: n1
"""

OPTICAL = ("B02", "B03", "B04", "B05", "B08", "B11", "B12", "MASK")


def write_scene(root, scene_id, sensor, timestamp, bands, transform=None, crs="EPSG:32630",
                footprint=None):
    """Write band arrays as VRAS plus a sidecar; returns the sidecar path."""
    d = Path(root) / scene_id
    d.mkdir(parents=True, exist_ok=True)
    h, w = next(iter(bands.values())).shape
    t = transform or GeoTransform(0.0, float(h), 1.0, 1.0)
    refs = {}
    for name, arr in bands.items():
        write_vras(Raster(np.asarray(arr, dtype=np.float32), t, crs=crs), d / f"{name}.vras")
        refs[name] = f"{name}.vras"
    fp = footprint or [t.origin_x, t.origin_y - h * t.pixel_h, t.origin_x + w * t.pixel_w, t.origin_y]
    sidecar = d / "scene.json"
    sidecar.write_text(json.dumps({"scene_id": scene_id, "sensor": sensor, "timestamp": timestamp,
                                   "crs": crs, "footprint": fp, "bands": refs}, sort_keys=True))
    return sidecar


def optical_bands(h, w, seed=0, names=OPTICAL):
    rng = np.random.default_rng(seed)
    out = {n: rng.uniform(0.01, 0.6, size=(h, w)) for n in names if n != "MASK"}
    if "MASK" in names:
        out["MASK"] = np.ones((h, w))
    return out


@pytest.fixture
def scene_writer(tmp_path):
    def _write(scene_id, sensor="OPTICAL", timestamp=0, bands=None, **kw):
        bands = bands if bands is not None else optical_bands(4, 4)
        return write_scene(tmp_path / "scenes", scene_id, sensor, timestamp, bands, **kw)
    return _write


# --- acceptance reporting ------------------------------------------------------------

CRITERIA: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA, key=lambda s: int(s.split(".")[0])):
        terminalreporter.write_line(f"{CRITERIA[name]:4} {name}")
