"""
Scene and product catalog backed by JSON-lines files.

Layout of a catalog directory::

    scenes.jsonl     one ingested scene per line (sidecar fields + band digests)
    products.jsonl   one registered product per line (canonical declaration)

Scene sidecar documents look like::

    {"scene_id": "S2_20230101", "sensor": "OPTICAL", "timestamp": 1672531200,
     "crs": "EPSG:32630", "footprint": [minx, miny, maxx, maxy],
     "bands": {"B04": "B04.vras", "MASK": "MASK.vras"}}

Band paths are relative to the sidecar.  A catalog object loads a snapshot
when opened; mutations append to the files under a lock.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import (DuplicateProduct, DuplicateScene, GridMismatch, MalformedFile, MissingBand,
                     SpecError, UnknownProduct, ValidationFailed, CatalogError)
from .pipeline import ProductSpec, parse_spec, prune, serialize_spec
from .raster import BBox, read_vras_header
from .sensors import MANDATORY_BANDS, Sensor

SCENES_FILE = "scenes.jsonl"
PRODUCTS_FILE = "products.jsonl"


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    sensor: Sensor
    timestamp: int
    footprint: BBox
    crs_label: str
    bands: dict        # band name -> absolute path
    digests: dict      # band name -> SHA-256 hex of the band file
    ingested_at: int

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "sensor": self.sensor.value,
            "timestamp": self.timestamp,
            "crs": self.crs_label,
            "footprint": list(self.footprint.as_tuple()),
            "bands": {k: self.bands[k] for k in sorted(self.bands)},
            "digests": {k: self.digests[k] for k in sorted(self.digests)},
            "ingested_at": self.ingested_at,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneRecord":
        return cls(d["scene_id"], Sensor(d["sensor"]), int(d["timestamp"]),
                   BBox(*d["footprint"]), d["crs"], dict(d["bands"]), dict(d["digests"]),
                   int(d["ingested_at"]))


@dataclass(frozen=True)
class ProductRecord:
    name: str
    spec: ProductSpec
    registered_at: int


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Catalog:
    """Persistent index of scenes and product declarations."""

    def __init__(self, root, clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()
        self._scenes: dict[str, SceneRecord] = {}
        self._products: dict[str, ProductRecord] = {}
        self._load()

    @classmethod
    def open(cls, root, **kw) -> "Catalog":
        return cls(root, **kw)

    def _load(self) -> None:
        scenes = self.root / SCENES_FILE
        if scenes.exists():
            for line in scenes.read_text("utf-8").splitlines():
                if line.strip():
                    rec = SceneRecord.from_json(json.loads(line))
                    self._scenes[rec.scene_id] = rec
        products = self.root / PRODUCTS_FILE
        if products.exists():
            for line in products.read_text("utf-8").splitlines():
                if line.strip():
                    d = json.loads(line)
                    spec = parse_spec(d["spec"])
                    self._products[d["name"]] = ProductRecord(d["name"], spec, int(d["registered_at"]))

    def _append(self, filename: str, obj: dict) -> None:
        with open(self.root / filename, "a", encoding="utf-8") as fh:
            fh.write(_dumps(obj) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # scenes

    def __len__(self) -> int:
        return len(self._scenes)

    def scenes(self) -> list[SceneRecord]:
        return sorted(self._scenes.values(), key=lambda r: (r.timestamp, r.scene_id))

    def scene(self, scene_id: str) -> SceneRecord:
        try:
            return self._scenes[scene_id]
        except KeyError:
            raise CatalogError(f"unknown scene {scene_id!r}") from None

    def ingest_scene(self, sidecar_path) -> SceneRecord:
        """Index the scene described by a sidecar; re-ingesting identical content is a no-op."""
        sidecar_path = Path(sidecar_path)
        try:
            doc = json.loads(sidecar_path.read_text("utf-8"))
            scene_id = doc["scene_id"]
            sensor = Sensor(doc["sensor"])
            timestamp = doc["timestamp"]
            crs = doc["crs"]
            footprint = BBox(*doc["footprint"])
            band_refs = doc["bands"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CatalogError(f"{sidecar_path}: bad sidecar ({type(exc).__name__}: {exc})") from exc
        if not isinstance(scene_id, str) or not scene_id:
            raise CatalogError(f"{sidecar_path}: scene_id must be a non-empty string")
        if not isinstance(timestamp, int) or isinstance(timestamp, bool):
            raise CatalogError(f"{sidecar_path}: timestamp must be integer epoch seconds")
        if not isinstance(band_refs, dict) or not band_refs:
            raise CatalogError(f"{sidecar_path}: bands must be a non-empty mapping")

        missing = MANDATORY_BANDS[sensor] - set(band_refs)
        if missing:
            raise MissingBand(f"{scene_id}: {sensor.value} scene lacks band(s) {sorted(missing)}")

        bands, digests, grid = {}, {}, None
        for name in sorted(band_refs):
            path = (sidecar_path.parent / band_refs[name]).resolve()
            if not path.is_file():
                raise MissingBand(f"{scene_id}: band {name} file {path} does not exist")
            try:
                hdr = read_vras_header(path)
            except MalformedFile as exc:
                raise CatalogError(f"{scene_id}: band {name}: {exc}") from exc
            this = (hdr.width, hdr.height, hdr.transform, hdr.crs)
            if hdr.crs != crs:
                raise GridMismatch(f"{scene_id}: band {name} CRS {hdr.crs!r} != sidecar CRS {crs!r}")
            if grid is None:
                grid = this
            elif this != grid:
                raise GridMismatch(f"{scene_id}: band {name} grid differs from the other bands")
            bands[name] = str(path)
            digests[name] = file_digest(path)

        with self._lock:
            existing = self._scenes.get(scene_id)
            if existing is not None:
                if existing.digests == digests and existing.to_json()["bands"] == bands \
                        and existing.timestamp == timestamp and existing.footprint == footprint \
                        and existing.sensor == sensor and existing.crs_label == crs:
                    return existing
                raise DuplicateScene(f"scene {scene_id!r} already ingested with different content")
            rec = SceneRecord(scene_id, sensor, timestamp, footprint, crs, bands, digests,
                              int(self._clock()))
            self._append(SCENES_FILE, rec.to_json())
            self._scenes[scene_id] = rec
            return rec

    def query_scenes(self, bbox: BBox, t0: int, t1: int, sensor: Sensor) -> list[SceneRecord]:
        """Scenes of ``sensor`` whose footprint overlaps ``bbox`` with t0 <= timestamp <= t1."""
        if t0 > t1:
            raise ValueError(f"empty time window: t0={t0} > t1={t1}")
        sensor = Sensor(sensor)
        hits = [r for r in self._scenes.values()
                if r.sensor == sensor and t0 <= r.timestamp <= t1 and r.footprint.intersects(bbox)]
        return sorted(hits, key=lambda r: (r.timestamp, r.scene_id))

    # products

    def products(self) -> list[ProductRecord]:
        return [self._products[k] for k in sorted(self._products)]

    def product(self, name: str) -> ProductRecord:
        try:
            return self._products[name]
        except KeyError:
            raise UnknownProduct(f"no product named {name!r}") from None

    def register_product(self, spec: ProductSpec | str) -> ProductRecord:
        """Register a parsed spec (or declaration text); unused nodes are pruned first."""
        try:
            if isinstance(spec, (str, bytes)):
                spec = parse_spec(spec)
            else:
                spec = parse_spec(serialize_spec(spec))
        except SpecError as exc:
            raise ValidationFailed(exc) from exc
        spec = prune(spec)
        with self._lock:
            if spec.name in self._products:
                raise DuplicateProduct(f"product {spec.name!r} is already registered")
            rec = ProductRecord(spec.name, spec, int(self._clock()))
            self._append(PRODUCTS_FILE, {"name": rec.name, "registered_at": rec.registered_at,
                                         "spec": serialize_spec(spec)})
            self._products[spec.name] = rec
            return rec
