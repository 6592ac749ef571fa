"""
Windowed source readers.

A fetcher returns exactly the requested pixel window of one scene band and
logs every read, so callers can check that nothing outside the requested
tiles was touched.  Headers are read once per file and reused.
"""

from __future__ import annotations

import io
import struct
import threading
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import FetchFailed, MalformedFile
from .raster import (FIXED_HEADER_SIZE, SAMPLE_BYTES, Raster, VrasHeader, Window, read_header,
                     read_window_from)


@dataclass(frozen=True)
class FetchRecord:
    scene_id: str
    band: str
    source: str
    window: Window
    payload_bytes: int


class Fetcher(ABC):
    """Reads pixel windows of scene bands; safe for concurrent use."""

    def __init__(self):
        self._lock = threading.Lock()
        self._headers: dict[str, VrasHeader] = {}
        self.log: list[FetchRecord] = []
        self.header_reads: dict[str, int] = {}

    @property
    def bytes_fetched(self) -> int:
        with self._lock:
            return sum(r.payload_bytes for r in self.log)

    def header(self, source: str) -> VrasHeader:
        with self._lock:
            hdr = self._headers.get(source)
        if hdr is not None:
            return hdr
        hdr = self._read_header(source)
        with self._lock:
            if source not in self._headers:
                self._headers[source] = hdr
                self.header_reads[source] = self.header_reads.get(source, 0) + 1
            return self._headers[source]

    def fetch(self, scene, band: str, window: Window) -> Raster:
        """Pixel ``window`` of ``band`` in ``scene`` (a SceneRecord)."""
        try:
            source = scene.bands[band]
        except KeyError:
            raise FetchFailed(f"scene {scene.scene_id} has no band {band!r}") from None
        try:
            hdr = self.header(source)
            if (window.col_off < 0 or window.row_off < 0 or window.width <= 0
                    or window.height <= 0 or window.col_end > hdr.width
                    or window.row_end > hdr.height):
                raise FetchFailed(f"window {tuple(window)} outside {hdr.width}x{hdr.height} "
                                  f"band {band} of {scene.scene_id}")
            data = self._read_window(source, hdr, window)
        except FetchFailed:
            raise
        except (OSError, MalformedFile, urllib.error.URLError, ValueError) as exc:
            raise FetchFailed(f"{scene.scene_id}/{band}: {exc}") from exc
        rec = FetchRecord(scene.scene_id, band, source, window,
                          window.width * window.height * SAMPLE_BYTES)
        with self._lock:
            self.log.append(rec)
        try:
            return Raster(data, hdr.transform.offset(window.col_off, window.row_off),
                          hdr.nodata, hdr.crs)
        except ValueError as exc:
            raise FetchFailed(f"{scene.scene_id}/{band}: {exc}") from exc

    @abstractmethod
    def _read_header(self, source: str) -> VrasHeader: ...

    @abstractmethod
    def _read_window(self, source: str, hdr: VrasHeader, window: Window) -> np.ndarray: ...


class LocalFetcher(Fetcher):
    """Reads VRAS files from the local filesystem with seeks, one row per read."""

    def _read_header(self, source):
        with open(source, "rb") as fh:
            return read_header(fh)

    def _read_window(self, source, hdr, window):
        with open(source, "rb") as fh:
            return read_window_from(fh, hdr, window)


class HttpRangeFetcher(Fetcher):
    """Reads VRAS files over HTTP using byte-range requests.

    ``url_for`` maps a catalog band path to its URL.
    """

    def __init__(self, url_for: Callable[[str], str], timeout: float = 30.0):
        super().__init__()
        self.url_for = url_for
        self.timeout = timeout

    def _get_range(self, source: str, start: int, length: int) -> bytes:
        req = urllib.request.Request(self.url_for(source),
                                     headers={"Range": f"bytes={start}-{start + length - 1}"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            body = resp.read()
            if resp.status == 200:  # server ignored the range
                body = body[start:start + length]
        if len(body) != length:
            raise MalformedFile(f"short range read from {source}")
        return body

    def _read_header(self, source):
        fixed = self._get_range(source, 0, FIXED_HEADER_SIZE)
        crs_len = struct.unpack_from("<H", fixed, FIXED_HEADER_SIZE - 2)[0]
        extra = self._get_range(source, FIXED_HEADER_SIZE, crs_len) if crs_len else b""
        return read_header(io.BytesIO(fixed + extra))

    def _read_window(self, source, hdr, window):
        out = np.empty((window.height, window.width), dtype=np.float32)
        row_bytes = window.width * SAMPLE_BYTES
        for i in range(window.height):
            start = hdr.header_size + ((window.row_off + i) * hdr.width + window.col_off) * SAMPLE_BYTES
            out[i] = np.frombuffer(self._get_range(source, start, row_bytes), dtype="<f4")
        return out
