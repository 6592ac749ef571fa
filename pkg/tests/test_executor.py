import http.server
import os
import random
import threading
from functools import partial
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from vcube import ops
from vcube.cache import TileCache, cache_evict, cache_stats
from vcube.catalog import Catalog
from vcube.errors import (FetchFailed, GridMismatch, MissingSynthesisParams, NoOverlap, NoScenes,
                          UnknownProduct)
from vcube.executor import Request, execute, fetch, plan
from vcube.fetch import HttpRangeFetcher, LocalFetcher
from vcube.raster import (BBox, GeoTransform, Raster, Window, crop, read_vras, tile_grid)

from conftest import NDVI_SPEC, optical_bands, write_scene
from oracles import tiles_touching

DAY = 86400
T512 = GeoTransform(0.0, 512.0, 1.0, 1.0)
FULL = BBox(0, 0, 512, 512)
TOP_LEFT = BBox(0, 256, 256, 512)

SAR_CHAIN = """\
name: backscatter
sensor: SAR
nodes:
  - {id: cal, op: calibrate_sigma0, inputs: [band:VV, band:CAL_A]}
  - {id: ml, op: multilook, params: {factor: 2}, inputs: [node:cal]}
  - {id: lee, op: lee_filter, params: {window: 5, looks: 4.0}, inputs: [node:ml]}
  - {id: db, op: to_db, inputs: [node:lee]}
outputs:
  sigma0_db: db
"""

COMPOSITE = """\
name: composite
sensor: OPTICAL
nodes:
  - {id: b04, op: temporal_synthesis, inputs: [band:B04, band:MASK]}
  - {id: b08, op: temporal_synthesis, inputs: [band:B08, band:MASK]}
  - {id: ndvi, op: band_index, params: {index: NDVI}, inputs: [node:b08, node:b04]}
outputs:
  ndvi: ndvi
  red: b04
"""


def optical_catalog(root, n_scenes=1, size=512, seed=0, cloudy=False):
    cat = Catalog(root / "cat")
    rng = np.random.default_rng(seed)
    t = GeoTransform(0.0, float(size), 1.0, 1.0)
    for i in range(n_scenes):
        bands = optical_bands(size, size, seed=seed * 100 + i)
        if cloudy:
            bands["MASK"] = (rng.random((size, size)) > 0.4).astype(float)
        cat.ingest_scene(write_scene(root / "scenes", f"s{i:02d}", "OPTICAL", (i + 1) * DAY,
                                     bands, transform=t))
    cat.register_product(NDVI_SPEC)
    cat.register_product(COMPOSITE)
    return cat


def sar_catalog(root, size=512, seed=0):
    cat = Catalog(root / "cat")
    rng = np.random.default_rng(seed)
    sigma0 = rng.uniform(0.01, 0.5, size=(size, size))
    cal = np.full((size, size), 50.0)
    dn = cal * np.sqrt(sigma0 * rng.gamma(4.0, 0.25, size=(size, size)))
    cat.ingest_scene(write_scene(root / "scenes", "sar0", "SAR", DAY, {"VV": dn, "CAL_A": cal},
                                 transform=GeoTransform(0.0, float(size), 1.0, 1.0)))
    cat.register_product(SAR_CHAIN)
    return cat


# --- plan ------------------------------------------------------------------------

def test_plan_one_tile_ndvi(tmp_path):
    cat = optical_catalog(tmp_path)
    p = plan(cat, Request("ndvi", TOP_LEFT, 0, 10 * DAY))
    fetches = [t for t in p.tasks if t.kind == "fetch"]
    op_tasks = [t for t in p.tasks if t.kind == "op"]
    # top-left bbox covers pixel rows/cols [0, 256)
    expected = tiles_touching(512, 512, 256, 0, 0, 256, 256)
    assert {tuple(t.tile) for t in op_tasks} == expected == {(0, 0)}
    assert sorted(t.ref for t in fetches) == ["band:B04", "band:B08"]
    assert all(tuple(t.tile) in expected for t in fetches)
    assert len(op_tasks) == 1


@given(st.integers(0, 511), st.integers(0, 511), st.integers(1, 511), st.integers(1, 511))
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_plan_tiles_match_brute_force(tmp_path, x, y, w, h):
    cat = getattr(test_plan_tiles_match_brute_force, "_cat", None)
    if cat is None:
        cat = optical_catalog(tmp_path / "p", size=512)
        test_plan_tiles_match_brute_force._cat = cat
    x1, y1 = min(x + w, 512), min(y + h, 512)
    p = plan(cat, Request("ndvi", BBox(x, 512 - y1, x1, 512 - y), 0, 10 * DAY))
    got = {tuple(t.tile) for t in p.tasks if t.kind == "op"}
    assert got == tiles_touching(512, 512, 256, x, y, x1, y1)


def test_plan_no_scenes_and_full_cover(tmp_path):
    cat = optical_catalog(tmp_path)
    with pytest.raises(NoScenes):
        plan(cat, Request("ndvi", TOP_LEFT, 50 * DAY, 60 * DAY))
    p = plan(cat, Request("ndvi", FULL, 0, 10 * DAY))
    assert {tuple(t.tile) for t in p.tasks if t.kind == "op"} == \
        {tuple(tid) for tid, _ in tile_grid(512, 512)}


def test_plan_errors(tmp_path):
    cat = optical_catalog(tmp_path)
    with pytest.raises(UnknownProduct):
        plan(cat, Request("nope", FULL, 0, DAY))
    with pytest.raises(MissingSynthesisParams):
        plan(cat, Request("composite", FULL, 0, 10 * DAY))
    with pytest.raises(NoOverlap):
        # footprint says it overlaps, but the grid does not reach that far
        cat.ingest_scene(write_scene(tmp_path / "x", "wide", "OPTICAL", 20 * DAY,
                                     optical_bands(4, 4), footprint=[0, 0, 1000, 1000],
                                     transform=GeoTransform(0, 4, 1, 1)))
        plan(cat, Request("ndvi", BBox(900, 900, 950, 950), 20 * DAY, 20 * DAY))


def test_plan_grid_mismatch(tmp_path):
    cat = optical_catalog(tmp_path, size=8)
    cat.ingest_scene(write_scene(tmp_path / "y", "odd", "OPTICAL", 2 * DAY, optical_bands(8, 8),
                                 transform=GeoTransform(0.5, 8, 1, 1)))
    with pytest.raises(GridMismatch):
        plan(cat, Request("ndvi", BBox(0, 0, 8, 8), 0, 10 * DAY))


def test_plan_is_deterministic(tmp_path):
    cat = optical_catalog(tmp_path, n_scenes=3)
    req = Request("composite", FULL, 0, 10 * DAY, 2 * DAY, 5 * DAY)
    assert plan(cat, req).keys == plan(Catalog(tmp_path / "cat"), req).keys


# --- execute ---------------------------------------------------------------------

def test_execute_cold_warm_and_corrupt(tmp_path):
    cat = optical_catalog(tmp_path)
    req = Request("ndvi", TOP_LEFT, 0, 10 * DAY)
    cache = TileCache(tmp_path / "cache")
    out1, s1 = execute(plan(cat, req), cache, LocalFetcher())
    assert s1.tiles_computed >= 1 and s1.tiles_from_cache == 0
    out2, s2 = execute(plan(cat, req), cache, LocalFetcher())
    assert s2.tiles_computed == 0 and s2.bytes_fetched == 0
    assert out2 == out1

    entry = cache.entries()[0]
    blob = bytearray(entry.path.read_bytes())
    blob[-3] ^= 0xFF
    entry.path.write_bytes(bytes(blob))
    out3, s3 = execute(plan(cat, req), TileCache(tmp_path / "cache"), LocalFetcher())
    assert s3.cache_corrupt_evicted == 1 and s3.tiles_computed == 1
    assert out3 == out1


def test_execute_matches_direct_kernel(tmp_path):
    cat = optical_catalog(tmp_path)
    out, _ = execute(plan(cat, Request("ndvi", BBox(100, 100, 400, 300), 0, DAY)), None,
                     LocalFetcher())
    scene = cat.scenes()[0]
    full = ops.band_index("NDVI", read_vras(scene.bands["B08"]), read_vras(scene.bands["B04"]))
    assert out["ndvi"] == crop(full, BBox(100, 100, 400, 300))


def test_tiled_sar_chain_equals_whole_raster(tmp_path):
    cat = sar_catalog(tmp_path)
    box = BBox(37, 101, 480, 390)
    out, stats = execute(plan(cat, Request("backscatter", box, 0, 2 * DAY)), None, LocalFetcher())
    scene = cat.scenes()[0]
    whole = ops.to_db(ops.lee_filter(ops.multilook(ops.calibrate_sigma0(
        read_vras(scene.bands["VV"]), read_vras(scene.bands["CAL_A"])), 2), 5, 4.0))
    assert out["sigma0_db"] == crop(whole, box)
    assert out["sigma0_db"].transform.pixel_w == 2.0


def test_temporal_product_equals_direct_synthesis(tmp_path):
    cat = optical_catalog(tmp_path, n_scenes=4, size=300, cloudy=True)
    req = Request("composite", BBox(0, 0, 300, 300), 0, 10 * DAY, 2.5 * DAY, DAY)
    out, _ = execute(plan(cat, req), None, LocalFetcher(), jobs=3)
    scenes = cat.scenes()
    stack = [(s.timestamp, read_vras(s.bands["B04"]), read_vras(s.bands["MASK"])) for s in scenes
             if ops.date_weight(s.timestamp, 2.5 * DAY, DAY) > 0]
    assert len(stack) == 4 - 2  # days 1..4, only days 2 and 3 fall inside the window
    red = ops.temporal_synthesis(ops.TimeStack.build(stack), 2.5 * DAY, DAY)
    assert out["red"] == red
    stack8 = [(t, read_vras(cat.scene(sid).bands["B08"]), m)
              for (t, _, m), sid in zip(stack, ["s01", "s02"])]
    nir = ops.temporal_synthesis(ops.TimeStack.build(stack8), 2.5 * DAY, DAY)
    assert out["ndvi"] == ops.band_index("NDVI", nir, red)


def test_per_scene_outputs_are_named_by_scene(tmp_path):
    cat = optical_catalog(tmp_path, n_scenes=3, size=16)
    out, stats = execute(plan(cat, Request("ndvi", BBox(0, 0, 16, 16), 0, 10 * DAY)), None,
                         LocalFetcher())
    assert sorted(out) == ["ndvi@s00", "ndvi@s01", "ndvi@s02"]
    assert stats.scenes_fetched == 3


def test_laziness_fetch_log(tmp_path):
    cat = optical_catalog(tmp_path)
    fetcher = LocalFetcher()
    execute(plan(cat, Request("ndvi", BBox(10, 300, 200, 500), 0, DAY)), None, fetcher)
    assert fetcher.log and all(r.window == Window(0, 0, 256, 256) for r in fetcher.log)
    assert all(n == 1 for n in fetcher.header_reads.values())


def test_fetch_failure_keeps_completed_entries(tmp_path):
    cat = optical_catalog(tmp_path, n_scenes=2, size=16)
    cache = TileCache(tmp_path / "cache")
    execute(plan(cat, Request("ndvi", BBox(0, 0, 16, 16), 0, DAY)), cache, LocalFetcher())
    os.remove(cat.scene("s01").bands["B08"])
    with pytest.raises(FetchFailed):
        execute(plan(cat, Request("ndvi", BBox(0, 0, 16, 16), 0, 2 * DAY)), cache, LocalFetcher())
    out, stats = execute(plan(cat, Request("ndvi", BBox(0, 0, 16, 16), 0, DAY)), cache,
                         LocalFetcher())
    assert stats.tiles_computed == 0


def test_jobs_do_not_change_output(tmp_path):
    cat = sar_catalog(tmp_path)
    req = Request("backscatter", BBox(0, 0, 512, 512), 0, 2 * DAY)
    a, _ = execute(plan(cat, req), TileCache(tmp_path / "c1"), LocalFetcher(), jobs=1)
    b, _ = execute(plan(cat, req), TileCache(tmp_path / "c8"), LocalFetcher(), jobs=8)
    assert a == b
    assert sorted(os.listdir(tmp_path / "c1")) == sorted(os.listdir(tmp_path / "c8"))


def test_monotone_bytes_fetched(tmp_path):
    cat = optical_catalog(tmp_path)
    small = execute(plan(cat, Request("ndvi", BBox(10, 10, 100, 100), 0, DAY)), None,
                    LocalFetcher())[1]
    big = execute(plan(cat, Request("ndvi", BBox(10, 10, 300, 100), 0, DAY)), None,
                  LocalFetcher())[1]
    assert small.bytes_fetched <= big.bytes_fetched


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_warm_equals_cold(tmp_path_factory, seed):
    rng = random.Random(seed)
    root = tmp_path_factory.mktemp("wc")
    cat = optical_catalog(root, n_scenes=2, size=300, cloudy=True)
    x0, y0 = rng.uniform(0, 250), rng.uniform(0, 250)
    box = BBox(x0, y0, rng.uniform(x0 + 1, 300), rng.uniform(y0 + 1, 300))
    product = rng.choice(["ndvi", "composite"])
    req = Request(product, box, 0, 3 * DAY, 1.5 * DAY, 3 * DAY)
    cache = TileCache(root / "cache")
    cold, _ = execute(plan(cat, req), cache, LocalFetcher())
    # warm part of the cache with an overlapping request first
    warm, stats = execute(plan(cat, req), cache, LocalFetcher())
    assert warm == cold and stats.tiles_computed == 0


# --- fetch -----------------------------------------------------------------------

def test_fetch_windows(tmp_path):
    cat = optical_catalog(tmp_path)
    scene = cat.scenes()[0]
    f = LocalFetcher()
    full = fetch(f, scene, "B04", Window(0, 0, 512, 512))
    assert full == read_vras(scene.bands["B04"])
    g = LocalFetcher()
    part = fetch(g, scene, "B04", Window(256, 0, 256, 256))
    payload = 512 * 512 * 4
    assert g.bytes_fetched == payload // 4
    assert part == read_vras(scene.bands["B04"]).window(Window(256, 0, 256, 256))
    with pytest.raises(FetchFailed):
        fetch(g, scene, "B04", Window(400, 0, 256, 256))
    with pytest.raises(FetchFailed):
        fetch(g, scene, "B99", Window(0, 0, 1, 1))


class _RangeHandler(http.server.SimpleHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_GET(self):
        path = Path(self.translate_path(self.path))
        if not path.is_file():
            self.send_error(404)
            return
        data = path.read_bytes()
        rng = self.headers.get("Range")
        if rng:
            start, end = (int(v) for v in rng.split("=")[1].split("-"))
            body = data[start:end + 1]
            self.send_response(206)
        else:
            body = data
            self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def test_http_range_fetcher_matches_local(tmp_path):
    cat = optical_catalog(tmp_path, size=40)
    root = tmp_path / "scenes"
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0),
                                             partial(_RangeHandler, directory=str(root)))
    th = threading.Thread(target=server.serve_forever, daemon=True)
    th.start()
    try:
        base = f"http://127.0.0.1:{server.server_address[1]}/"
        http_f = HttpRangeFetcher(lambda p: base + Path(p).relative_to(root.resolve()).as_posix())
        req = Request("ndvi", BBox(3, 5, 30, 33), 0, DAY)
        a, sa = execute(plan(cat, req), None, http_f)
        b, sb = execute(plan(cat, req), None, LocalFetcher())
        assert a == b and sa.bytes_fetched == sb.bytes_fetched
        with pytest.raises(FetchFailed):
            HttpRangeFetcher(lambda p: base + "missing.vras").fetch(
                cat.scenes()[0], "B04", Window(0, 0, 1, 1))
    finally:
        server.shutdown()


# --- cache -----------------------------------------------------------------------

def _tile(v=0.0, n=10):
    return Raster(np.full((1, n), v, dtype=np.float32), GeoTransform(0, 1, 1, 1))


def test_cache_stats_and_evict(tmp_path):
    clock = iter(range(100)).__next__
    cache = TileCache(tmp_path / "c", clock=clock)
    assert cache_stats(cache) == {"entries": 0, "total_bytes": 0, "products": {}}
    for i, key in enumerate(["cc" * 32, "aa" * 32, "bb" * 32]):
        cache.put(key, _tile(i), {"product": "p"})
    size = cache.entries()[0].size
    assert cache_evict(cache, 10 * size) == 0
    assert cache_evict(cache, int(1.5 * size)) == 2
    assert [e.key for e in cache.entries()] == ["bb" * 32]
    reopened = TileCache(tmp_path / "c")
    assert reopened.stats() == {"entries": 1, "total_bytes": size,
                                "products": {"p": {"entries": 1, "bytes": size}}}
    assert not (tmp_path / "c" / "cc" / ("cc" * 32 + ".vras")).exists()


def test_cache_layout(tmp_path):
    cache = TileCache(tmp_path / "c")
    key = "ab" + "0" * 62
    cache.put(key, _tile(1.0))
    assert (tmp_path / "c" / "ab" / f"{key}.vras").is_file()
    assert (tmp_path / "c" / "index.jsonl").is_file()
    assert cache.get(key) == _tile(1.0)
    assert cache.get("ff" * 32) is None


def test_stats_invariant_single_grid(tmp_path):
    cat = sar_catalog(tmp_path)
    cat.register_product(SAR_CHAIN.replace("backscatter", "flat").replace(
        "  - {id: ml, op: multilook, params: {factor: 2}, inputs: [node:cal]}\n", "").replace(
        "inputs: [node:ml]", "inputs: [node:cal]"))
    cache = TileCache(tmp_path / "cache")
    req = Request("flat", BBox(0, 0, 512, 512), 0, 2 * DAY)
    _, cold = execute(plan(cat, req), cache, LocalFetcher())
    assert cold.tiles_requested == 4
    assert cold.tiles_computed + cold.tiles_from_cache == 4 * 3
    _, warm = execute(plan(cat, req), cache, LocalFetcher())
    # a cached output tile cuts off everything upstream of it
    assert warm.tiles_computed + warm.tiles_from_cache == 4 * 1
    assert all(v >= 0 for v in warm.to_json().values())
