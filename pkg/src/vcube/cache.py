"""
Content-addressed tile cache.

On disk::

    <root>/index.jsonl         one entry per line: key, size, digest, created_at, provenance
    <root>/<key[:2]>/<key>.vras

Entries are written through a temporary file and renamed into place, so a
reader never sees a half-written payload.  Two writers racing on one key
store identical bytes by construction; the last rename wins.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import CacheCorrupt, MalformedFile
from .raster import Raster, decode_vras, encode_vras

INDEX_FILE = "index.jsonl"


@dataclass(frozen=True)
class CacheEntry:
    key: str
    path: Path
    size: int
    digest: str
    created_at: float
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"key": self.key, "size": self.size, "digest": self.digest,
                "created_at": self.created_at, "provenance": self.provenance}


class TileCache:
    def __init__(self, root, clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: dict[str, CacheEntry] = {}
        index = self.root / INDEX_FILE
        if index.exists():
            for line in index.read_text("utf-8").splitlines():
                if not line.strip():
                    continue
                d = json.loads(line)
                if d.get("evicted"):
                    self._entries.pop(d["key"], None)
                else:
                    self._entries[d["key"]] = CacheEntry(
                        d["key"], self.path_for(d["key"]), int(d["size"]), d["digest"],
                        float(d["created_at"]), d.get("provenance", {}))

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.vras"

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[CacheEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: (e.created_at, e.key))

    def total_bytes(self) -> int:
        with self._lock:
            return sum(e.size for e in self._entries.values())

    def get(self, key: str) -> Raster | None:
        """Cached tile for ``key``; raises CacheCorrupt (after evicting) on a digest mismatch."""
        entry = self._entries.get(key)
        if entry is None:
            return None
        try:
            blob = entry.path.read_bytes()
        except FileNotFoundError:
            self.remove(key)
            return None
        if hashlib.sha256(blob).hexdigest() != entry.digest:
            self.remove(key)
            raise CacheCorrupt(f"cache entry {key} failed digest verification")
        try:
            return decode_vras(blob)
        except MalformedFile as exc:
            self.remove(key)
            raise CacheCorrupt(f"cache entry {key}: {exc}") from exc

    def put(self, key: str, raster: Raster, provenance: dict | None = None) -> CacheEntry:
        blob = encode_vras(raster)
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
        entry = CacheEntry(key, path, len(blob), hashlib.sha256(blob).hexdigest(),
                           float(self._clock()), provenance or {})
        with self._lock:
            self._entries[key] = entry
            with open(self.root / INDEX_FILE, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
        return entry

    def remove(self, key: str) -> None:
        with self._lock:
            entry = self._entries.pop(key, None)
            if entry is None:
                return
            self._rewrite_index()
        try:
            entry.path.unlink()
        except FileNotFoundError:
            pass

    def _rewrite_index(self) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for e in sorted(self._entries.values(), key=lambda e: (e.created_at, e.key)):
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
        os.replace(tmp, self.root / INDEX_FILE)

    def stats(self) -> dict:
        """Entry count, total bytes and a per-product breakdown."""
        with self._lock:
            entries = list(self._entries.values())
        per: dict[str, dict] = {}
        for e in entries:
            name = e.provenance.get("product", "")
            p = per.setdefault(name, {"entries": 0, "bytes": 0})
            p["entries"] += 1
            p["bytes"] += e.size
        return {"entries": len(entries), "total_bytes": sum(e.size for e in entries),
                "products": {k: per[k] for k in sorted(per)}}

    def evict(self, max_bytes: int) -> int:
        """Drop the oldest entries (by created_at, then key) until total size <= max_bytes."""
        with self._lock:
            order = sorted(self._entries.values(), key=lambda e: (e.created_at, e.key))
            total = sum(e.size for e in order)
            victims = []
            for e in order:
                if total <= max_bytes:
                    break
                victims.append(e)
                total -= e.size
            if not victims:
                return 0
            for e in victims:
                del self._entries[e.key]
            self._rewrite_index()
        for e in victims:
            try:
                e.path.unlink()
            except FileNotFoundError:
                pass
        return len(victims)


def cache_stats(cache: TileCache) -> dict:
    return cache.stats()


def cache_evict(cache: TileCache, max_bytes: int) -> int:
    return cache.evict(max_bytes)
