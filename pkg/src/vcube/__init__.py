"""vcube: virtual raster products materialized lazily, tile by tile, with a content-addressed cache."""

from .cache import TileCache, cache_evict, cache_stats
from .catalog import Catalog, ProductRecord, SceneRecord
from .executor import ENGINE_VERSION, ExecutionPlan, Request, RunStats, execute, generate, plan
from .fetch import HttpRangeFetcher, LocalFetcher
from .pipeline import ProductSpec, parse_spec, render_dot, serialize_spec, topo_order, validate
from .raster import (TILE_SIZE, BBox, GeoTransform, Raster, TileId, Window, crop, map_to_pixel,
                     pixel_to_map, read_vras, tile_grid, write_vras)
from .sensors import Sensor

__version__ = "0.1.0"

__all__ = [
    "BBox", "Catalog", "ENGINE_VERSION", "ExecutionPlan", "GeoTransform", "HttpRangeFetcher",
    "LocalFetcher", "ProductRecord", "ProductSpec", "Raster", "Request", "RunStats", "SceneRecord",
    "Sensor", "TILE_SIZE", "TileCache", "TileId", "Window", "cache_evict", "cache_stats", "crop",
    "execute", "generate", "map_to_pixel", "parse_spec", "pixel_to_map", "plan", "read_vras",
    "render_dot", "serialize_spec", "tile_grid", "topo_order", "validate", "write_vras",
]
