"""
On-demand materialization of virtual products.

:func:`plan` expands a request into tile tasks: one task per (node, scene,
tile) that the requested area actually depends on, plus leaf fetch tasks for
source band windows.  Every op task carries a content-addressed cache key
built from the engine version, the node's op and params, its tile window and
the keys of its inputs.

:func:`execute` walks the plan from the output tiles down.  A cache hit stops
the descent, so a fully cached request fetches nothing.  Missing tasks are
then computed level by level, optionally in a thread pool; results do not
depend on the thread count.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cache import TileCache
from .catalog import Catalog, SceneRecord
from .errors import (CacheCorrupt, GridMismatch, MissingBand,
                     MissingSynthesisParams, NoScenes)
from .fetch import Fetcher
from .ops import REGISTRY, TimeStack, date_weight, temporal_synthesis
from .pipeline import AGGREGATE, BAND_PREFIX, NODE_PREFIX, ProductSpec, topo_order
from .raster import (DEFAULT_NODATA, BBox, GeoTransform, Raster, TileId, Window, bbox_window, read_vras_header,
                     tiles_for_window)

ENGINE_VERSION = "vcube-engine/1"


@dataclass(frozen=True)
class Request:
    product: str
    bbox: BBox
    t0: int
    t1: int
    center: float | None = None
    half_window: float | None = None

    def __post_init__(self):
        if self.t0 > self.t1:
            raise ValueError(f"t0 ({self.t0}) is after t1 ({self.t1})")
        if self.half_window is not None and not self.half_window > 0:
            raise ValueError("half_window must be positive")


@dataclass(frozen=True)
class Grid:
    width: int
    height: int
    transform: GeoTransform
    crs: str


@dataclass(frozen=True)
class TileTask:
    id: str
    kind: str              # "fetch" or "op"
    ref: str               # "band:<NAME>" or "node:<id>"
    scene: str | None      # None for time-aggregated nodes
    tile: TileId
    window: Window
    key: str
    deps: tuple[str, ...]  # grouped per input, see ``groups``
    groups: tuple[tuple[int, ...], ...] = ()  # dep index ranges per input slot


@dataclass
class ExecutionPlan:
    request: Request
    spec: ProductSpec
    scenes: list[SceneRecord]
    grids: dict[str, Grid]
    tasks: list[TileTask]
    outputs: dict[str, tuple[str, Window, list[str]]]  # name -> (node id, window, task ids)
    tiles_requested: int
    stack_scenes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.by_id = {t.id: t for t in self.tasks}

    @property
    def keys(self) -> list[str]:
        return [t.key for t in self.tasks]


@dataclass
class RunStats:
    tiles_requested: int = 0
    tiles_computed: int = 0
    tiles_from_cache: int = 0
    scenes_fetched: int = 0
    bytes_fetched: int = 0
    bytes_cached: int = 0
    wall_time: float = 0.0
    fetch_calls: int = 0
    cache_corrupt_evicted: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# --- planning --------------------------------------------------------------------

def plan(catalog: Catalog, request: Request) -> ExecutionPlan:
    """Tile-level task graph for ``request``; deterministic for identical inputs."""
    spec = catalog.product(request.product).spec
    if spec.is_temporal and (request.center is None or request.half_window is None):
        raise MissingSynthesisParams(
            f"product {spec.name!r} aggregates over time; center and half_window are required")
    scenes = catalog.query_scenes(request.bbox, request.t0, request.t1, spec.sensor)
    if not scenes:
        raise NoScenes(f"no {spec.sensor.value} scenes intersect the request for {spec.name!r}")
    bands = spec.bands()
    for s in scenes:
        missing = sorted(set(bands) - set(s.bands))
        if missing:
            raise MissingBand(f"scene {s.scene_id} lacks band(s) {missing} needed by {spec.name!r}")

    base_scene = min(scenes, key=lambda s: s.scene_id)
    base = _scene_grid(base_scene, bands)
    for s in scenes:
        g = _scene_grid(s, bands)
        if g != base:
            raise GridMismatch(f"scene {s.scene_id} grid differs from {base_scene.scene_id}")

    nodes = spec.node_map
    grids: dict[str, Grid] = {BAND_PREFIX + b: base for b in bands}
    for nid in topo_order(spec):
        node = nodes[nid]
        in_grids = {grids[ref] for ref in node.inputs}
        if len(in_grids) != 1:
            raise GridMismatch(f"node {nid!r} combines inputs on different grids")
        g = in_grids.pop()
        w, h, t = REGISTRY[node.op].out_grid(g.width, g.height, g.transform, node.params)
        grids[NODE_PREFIX + nid] = Grid(w, h, t, g.crs)

    contexts = spec.contexts()
    out_nodes = sorted(set(spec.outputs.values()))
    aggregate = contexts[out_nodes[0]] == AGGREGATE

    stack_scenes = scenes
    if spec.is_temporal:
        stack_scenes = [s for s in scenes
                        if date_weight(s.timestamp, request.center, request.half_window) > 0]

    builder = _PlanBuilder(spec, grids, {s.scene_id: s for s in scenes}, stack_scenes, request)
    out_contexts: list[str | None] = [None] if aggregate else [s.scene_id for s in scenes]
    outputs: dict[str, tuple[str, Window, list[str]]] = {}
    tiles_requested = 0
    for out_name, nid in spec.outputs.items():
        g = grids[NODE_PREFIX + nid]
        win = bbox_window(g.width, g.height, g.transform, request.bbox)
        tiles = tiles_for_window(g.width, g.height, win)
        for ctx in out_contexts:
            ids = [builder.task(NODE_PREFIX + nid, ctx, tid, tw) for tid, tw in tiles]
            key = out_name if ctx is None or len(out_contexts) == 1 else f"{out_name}@{ctx}"
            outputs[key] = (nid, win, ids)
            tiles_requested += len(tiles)
    return ExecutionPlan(request, spec, scenes, grids, builder.tasks, outputs, tiles_requested,
                         [s.scene_id for s in stack_scenes])


def _scene_grid(scene: SceneRecord, bands: list[str]) -> Grid:
    name = bands[0] if bands else sorted(scene.bands)[0]
    hdr = read_vras_header(scene.bands[name])
    return Grid(hdr.width, hdr.height, hdr.transform, hdr.crs)


class _PlanBuilder:
    def __init__(self, spec, grids, scenes, stack_scenes, request):
        self.spec = spec
        self.nodes = spec.node_map
        self.grids = grids
        self.scenes = scenes
        self.stack_scenes = stack_scenes
        self.request = request
        self.tasks: list[TileTask] = []
        self.by_id: dict[str, TileTask] = {}

    def task(self, ref: str, scene: str | None, tile: TileId, window: Window) -> str:
        tid = f"{ref}|{scene or '*'}|{tile.col},{tile.row}"
        if tid in self.by_id:
            return tid
        if ref.startswith(BAND_PREFIX):
            band = ref[len(BAND_PREFIX):]
            digest = self.scenes[scene].digests[band]
            key = _hash({"leaf": digest, "window": list(window)})
            t = TileTask(tid, "fetch", ref, scene, tile, window, key, ())
        else:
            t = self._op_task(tid, ref, scene, tile, window)
        self.by_id[tid] = t
        self.tasks.append(t)  # post-order: dependencies are appended first
        return tid

    def _inputs_for(self, ref: str, scene: str, needed: Window) -> list[str]:
        g = self.grids[ref]
        return [self.task(ref, scene, t, w) for t, w in tiles_for_window(g.width, g.height, needed)]

    def _op_task(self, tid, ref, scene, tile, window) -> TileTask:
        node = self.nodes[ref[len(NODE_PREFIX):]]
        sig = REGISTRY[node.op]
        deps: list[str] = []
        groups: list[tuple[int, ...]] = []
        descriptor = node.descriptor()
        if sig.temporal:
            scene_ids = [s.scene_id for s in self.stack_scenes]
            for sid in scene_ids:
                for in_ref in node.inputs:
                    g = self.grids[in_ref]
                    needed = sig.needs(window, g.width, g.height, node.params)
                    ids = self._inputs_for(in_ref, sid, needed)
                    groups.append((len(deps), len(deps) + len(ids)))
                    deps.extend(ids)
            descriptor["stack"] = [self.scenes[s].timestamp for s in scene_ids]
            descriptor["center"] = self.request.center
            descriptor["half_window"] = self.request.half_window
        else:
            for in_ref in node.inputs:
                g = self.grids[in_ref]
                needed = sig.needs(window, g.width, g.height, node.params)
                ids = self._inputs_for(in_ref, scene, needed)
                groups.append((len(deps), len(deps) + len(ids)))
                deps.extend(ids)
        input_keys = [[self.by_id[d].key for d in deps[a:b]] for a, b in groups]
        key = _hash({"engine": ENGINE_VERSION, "node": descriptor, "tile": list(tile),
                     "window": list(window), "inputs": input_keys})
        return TileTask(tid, "op", ref, scene, tile, window, key, tuple(deps), tuple(groups))


# --- execution -------------------------------------------------------------------

class _Run:
    def __init__(self, plan_: ExecutionPlan, cache: TileCache | None, fetcher: Fetcher):
        self.plan = plan_
        self.cache = cache
        self.fetcher = fetcher
        self.stats = RunStats(tiles_requested=plan_.tiles_requested)
        self.values: dict[str, Raster] = {}
        self.lock = threading.Lock()
        self.fetched_scenes: set[str] = set()

    def find_needed(self) -> set[str]:
        """Top-down pass: load cache hits, collect tasks that must run."""
        need: set[str] = set()
        seen: set[str] = set()
        stack = [tid for _, _, ids in self.plan.outputs.values() for tid in reversed(ids)]
        while stack:
            tid = stack.pop()
            if tid in seen:
                continue
            seen.add(tid)
            task = self.plan.by_id[tid]
            if task.kind == "op" and self.cache is not None:
                try:
                    hit = self.cache.get(task.key)
                except CacheCorrupt:
                    self.stats.cache_corrupt_evicted += 1
                    hit = None
                if hit is not None:
                    self.values[tid] = hit
                    self.stats.tiles_from_cache += 1
                    continue
            need.add(tid)
            stack.extend(reversed(task.deps))
        return need

    def run_task(self, task: TileTask) -> Raster:
        if task.kind == "fetch":
            scene = next(s for s in self.plan.scenes if s.scene_id == task.scene)
            r = self.fetcher.fetch(scene, task.ref[len(BAND_PREFIX):], task.window)
            with self.lock:
                self.stats.fetch_calls += 1
                self.stats.bytes_fetched += task.window.width * task.window.height * 4
                self.fetched_scenes.add(task.scene)
            return r
        out = self._compute(task)
        if self.cache is not None:
            entry = self.cache.put(task.key, out, {
                "product": self.plan.spec.name, "node": task.ref[len(NODE_PREFIX):],
                "scene": task.scene, "tile": list(task.tile),
                "inputs": [self.plan.by_id[d].key for d in task.deps]})
            with self.lock:
                self.stats.bytes_cached += entry.size
        with self.lock:
            self.stats.tiles_computed += 1
        return out

    def _assemble(self, dep_ids: list[str], ref: str, needed: Window) -> Raster:
        g = self.plan.grids[ref]
        tiles = [self.values[d] for d in dep_ids]
        nodata = tiles[0].nodata
        arr = np.full((needed.height, needed.width), np.float32(nodata), dtype=np.float32)
        for d, r in zip(dep_ids, tiles):
            tw = self.plan.by_id[d].window
            part = tw.intersection(needed)
            arr[part.slices(needed)] = r.data[part.slices(tw)]
        return Raster(arr, g.transform.offset(needed.col_off, needed.row_off), nodata, g.crs,
                      _checked=False)

    def _compute(self, task: TileTask) -> Raster:
        nid = task.ref[len(NODE_PREFIX):]
        node = self.plan.spec.node(nid)
        sig = REGISTRY[node.op]
        out_grid = self.plan.grids[task.ref]
        inputs = []
        slot = 0
        n_in = len(node.inputs)
        for a, b in task.groups:
            in_ref = node.inputs[slot % n_in]
            g = self.plan.grids[in_ref]
            needed = sig.needs(task.window, g.width, g.height, node.params)
            inputs.append(self._assemble(list(task.deps[a:b]), in_ref, needed))
            slot += 1
        if sig.temporal:
            req = self.plan.request
            by_id = {s.scene_id: s for s in self.plan.scenes}
            entries = [(by_id[sid].timestamp, inputs[2 * i], inputs[2 * i + 1])
                       for i, sid in enumerate(self.plan.stack_scenes)]
            if entries:
                result = temporal_synthesis(TimeStack.build(entries), req.center, req.half_window)
            else:
                ref_t = out_grid.transform.offset(task.window.col_off, task.window.row_off)
                return Raster(np.full((task.window.height, task.window.width), DEFAULT_NODATA,
                                      dtype=np.float32), ref_t, DEFAULT_NODATA, out_grid.crs)
        else:
            result = sig.kernel(*inputs, **node.params)
        # locate the kernel output on the node grid and cut out the task window
        t = out_grid.transform
        col = round((result.transform.origin_x - t.origin_x) / t.pixel_w)
        row = round((t.origin_y - result.transform.origin_y) / t.pixel_h)
        here = Window(col, row, result.width, result.height)
        return Raster(result.data[task.window.slices(here)],
                      t.offset(task.window.col_off, task.window.row_off),
                      result.nodata, out_grid.crs, _checked=False)

    def execute(self, need: set[str], jobs: int) -> None:
        order = [t for t in self.plan.tasks if t.id in need]
        level: dict[str, int] = {}
        for t in order:
            level[t.id] = 1 + max((level[d] for d in t.deps if d in need), default=-1)
        waves: dict[int, list[TileTask]] = {}
        for t in order:
            waves.setdefault(level[t.id], []).append(t)
        pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
        try:
            for lv in sorted(waves):
                wave = waves[lv]
                if pool is None:
                    results = [self.run_task(t) for t in wave]
                else:
                    results = list(pool.map(self.run_task, wave))
                for t, r in zip(wave, results):
                    self.values[t.id] = r
        finally:
            if pool is not None:
                pool.shutdown(wait=True)

    def outputs(self) -> dict[str, Raster]:
        out = {}
        for name in sorted(self.plan.outputs):
            nid, win, ids = self.plan.outputs[name]
            out[name] = self._assemble(ids, NODE_PREFIX + nid, win)
        return out


def execute(plan_: ExecutionPlan, cache: TileCache | None, fetcher: Fetcher,
            jobs: int = 1) -> tuple[dict[str, Raster], RunStats]:
    """Materialize ``plan_``; returns output rasters (cropped to the request) and run statistics.

    Fetch errors abort the run; cache entries written before the failure stay valid.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    start = time.perf_counter()
    run = _Run(plan_, cache, fetcher)
    need = run.find_needed()
    run.execute(need, jobs)
    outputs = run.outputs()
    run.stats.scenes_fetched = len(run.fetched_scenes)
    run.stats.wall_time = time.perf_counter() - start
    return outputs, run.stats


def generate(catalog: Catalog, request: Request, cache: TileCache | None, fetcher: Fetcher,
             jobs: int = 1) -> tuple[dict[str, Raster], RunStats]:
    return execute(plan(catalog, request), cache, fetcher, jobs)


def fetch(fetcher: Fetcher, scene: SceneRecord, band: str, window: Window) -> Raster:
    return fetcher.fetch(scene, band, window)


__all__ = ["ENGINE_VERSION", "Request", "TileTask", "ExecutionPlan", "RunStats", "plan",
           "execute", "generate", "fetch"]
