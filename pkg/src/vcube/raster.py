"""
Single-band raster grids, north-up georeferencing, tiling and the VRAS file format.

A :class:`Raster` is immutable: its sample array is flagged read-only on
construction.  Nodata is a float32 sentinel compared bit-exactly; NaN and
infinities are never stored.

VRAS layout (little-endian)::

    b"VRAS1"  u32 width  u32 height
    f64 origin_x  f64 origin_y  f64 pixel_w  f64 pixel_h
    f32 nodata  u16 crs_len  crs bytes (UTF-8)
    width*height f32 samples, row-major, row 0 at the top
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, NamedTuple

import numpy as np

from .errors import GridMismatch, MalformedFile, NoOverlap

TILE_SIZE = 256
DEFAULT_NODATA = -9999.0

MAGIC = b"VRAS1"
_FIXED = struct.Struct("<5sII4dfH")
SAMPLE_BYTES = 4
FIXED_HEADER_SIZE = _FIXED.size


@dataclass(frozen=True)
class GeoTransform:
    origin_x: float
    origin_y: float
    pixel_w: float
    pixel_h: float

    def __post_init__(self):
        if not (self.pixel_w > 0 and self.pixel_h > 0):
            raise ValueError(f"pixel sizes must be positive, got {self.pixel_w}, {self.pixel_h}")
        for v in (self.origin_x, self.origin_y, self.pixel_w, self.pixel_h):
            if not math.isfinite(v):
                raise ValueError("geotransform terms must be finite")

    @classmethod
    def from_gdal(cls, gt) -> "GeoTransform":
        """Build from a GDAL-style 6-tuple; rotation terms must be zero and pixel height negative."""
        ox, pw, rx, oy, ry, ph = gt
        if rx != 0 or ry != 0:
            raise ValueError("rotated geotransforms are not supported")
        return cls(ox, oy, pw, -ph)

    def to_gdal(self) -> tuple[float, float, float, float, float, float]:
        return (self.origin_x, self.pixel_w, 0.0, self.origin_y, 0.0, -self.pixel_h)

    def offset(self, col: int, row: int) -> "GeoTransform":
        """Transform of a sub-grid whose upper-left pixel is (col, row) of this grid."""
        return GeoTransform(self.origin_x + col * self.pixel_w,
                            self.origin_y - row * self.pixel_h,
                            self.pixel_w, self.pixel_h)

    def scaled(self, factor: int) -> "GeoTransform":
        return GeoTransform(self.origin_x, self.origin_y,
                            self.pixel_w * factor, self.pixel_h * factor)


@dataclass(frozen=True)
class BBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise ValueError(f"degenerate bbox {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.min_x, self.min_y, self.max_x, self.max_y)

    def intersects(self, other: "BBox") -> bool:
        """Positive-area overlap; boxes that only share an edge do not intersect."""
        return (self.min_x < other.max_x and other.min_x < self.max_x
                and self.min_y < other.max_y and other.min_y < self.max_y)

    def contains(self, other: "BBox") -> bool:
        return (self.min_x <= other.min_x and self.min_y <= other.min_y
                and other.max_x <= self.max_x and other.max_y <= self.max_y)

    @classmethod
    def parse(cls, text: str) -> "BBox":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox needs four comma-separated numbers")
        return cls(*parts)


class TileId(NamedTuple):
    col: int
    row: int


class Window(NamedTuple):
    """Pixel window: column/row offset plus width/height."""

    col_off: int
    row_off: int
    width: int
    height: int

    @property
    def col_end(self) -> int:
        return self.col_off + self.width

    @property
    def row_end(self) -> int:
        return self.row_off + self.height

    def intersection(self, other: "Window") -> "Window | None":
        c0 = max(self.col_off, other.col_off)
        r0 = max(self.row_off, other.row_off)
        c1 = min(self.col_end, other.col_end)
        r1 = min(self.row_end, other.row_end)
        if c0 >= c1 or r0 >= r1:
            return None
        return Window(c0, r0, c1 - c0, r1 - r0)

    def slices(self, relative_to: "Window | None" = None) -> tuple[slice, slice]:
        c0, r0 = (0, 0) if relative_to is None else (relative_to.col_off, relative_to.row_off)
        return (slice(self.row_off - r0, self.row_end - r0),
                slice(self.col_off - c0, self.col_end - c0))


def pixel_to_map(t: GeoTransform, col: float, row: float) -> tuple[float, float]:
    """Map coordinates of the center of pixel (col, row)."""
    return (t.origin_x + (col + 0.5) * t.pixel_w, t.origin_y - (row + 0.5) * t.pixel_h)


def map_to_pixel(t: GeoTransform, x: float, y: float) -> tuple[int, int]:
    """Pixel containing (x, y).  Points on a left/top pixel edge belong to that pixel."""
    return (math.floor((x - t.origin_x) / t.pixel_w), math.floor((t.origin_y - y) / t.pixel_h))


@dataclass(frozen=True, eq=False)
class Raster:
    data: np.ndarray
    transform: GeoTransform
    nodata: float = DEFAULT_NODATA
    crs: str = ""
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"raster data must be 2-D, got shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        nodata = float(np.float32(self.nodata))
        if self._checked:
            bad = ~np.isfinite(arr)
            if bad.any():
                raise ValueError("raster samples must be finite or equal to the nodata sentinel")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "nodata", nodata)

    @classmethod
    def from_values(cls, values: np.ndarray, transform: GeoTransform,
                    nodata: float = DEFAULT_NODATA, crs: str = "",
                    invalid: np.ndarray | None = None) -> "Raster":
        """Cast float values to float32, mapping non-finite results and ``invalid`` pixels to nodata."""
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.asarray(values, dtype=np.float64).astype(np.float32)
        bad = ~np.isfinite(out)
        if invalid is not None:
            bad |= invalid
        out[bad] = np.float32(nodata)
        return cls(out, transform, nodata, crs, _checked=False)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def valid_mask(self) -> np.ndarray:
        return self.data != np.float32(self.nodata)

    def extent(self) -> BBox:
        t = self.transform
        return BBox(t.origin_x, t.origin_y - self.height * t.pixel_h,
                    t.origin_x + self.width * t.pixel_w, t.origin_y)

    def same_grid(self, other: "Raster") -> bool:
        return (self.shape == other.shape and self.transform == other.transform
                and self.crs == other.crs)

    def window(self, w: Window) -> "Raster":
        if (w.col_off < 0 or w.row_off < 0 or w.col_end > self.width
                or w.row_end > self.height or w.width <= 0 or w.height <= 0):
            raise ValueError(f"window {tuple(w)} outside {self.width}x{self.height} raster")
        return Raster(self.data[w.slices()], self.transform.offset(w.col_off, w.row_off),
                      self.nodata, self.crs, _checked=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return (self.transform == other.transform and self.crs == other.crs
                and np.float32(self.nodata).tobytes() == np.float32(other.nodata).tobytes()
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    __hash__ = None


def require_same_grid(*rasters: Raster) -> None:
    first = rasters[0]
    for r in rasters[1:]:
        if not first.same_grid(r):
            raise GridMismatch(
                f"grid {r.width}x{r.height} {r.transform} {r.crs!r} does not match "
                f"{first.width}x{first.height} {first.transform} {first.crs!r}")


def bbox_window(width: int, height: int, t: GeoTransform, b: BBox) -> Window:
    """Minimal pixel window of a ``width`` x ``height`` grid covering ``b`` clipped to the grid."""
    c0 = math.floor((b.min_x - t.origin_x) / t.pixel_w)
    c1 = math.ceil((b.max_x - t.origin_x) / t.pixel_w)
    r0 = math.floor((t.origin_y - b.max_y) / t.pixel_h)
    r1 = math.ceil((t.origin_y - b.min_y) / t.pixel_h)
    c0, r0 = max(c0, 0), max(r0, 0)
    c1, r1 = min(c1, width), min(r1, height)
    if c0 >= c1 or r0 >= r1:
        raise NoOverlap(f"bbox {b.as_tuple()} does not overlap the {width}x{height} grid")
    return Window(c0, r0, c1 - c0, r1 - r0)


def crop(r: Raster, b: BBox) -> Raster:
    """Smallest pixel-aligned sub-raster covering the part of ``b`` inside the raster."""
    if not r.extent().intersects(b):
        raise NoOverlap(f"bbox {b.as_tuple()} does not overlap raster extent {r.extent().as_tuple()}")
    return r.window(bbox_window(r.width, r.height, r.transform, b))


def tile_grid(width: int, height: int, size: int = TILE_SIZE) -> list[tuple[TileId, Window]]:
    """Row-major list of tiles covering a ``width`` x ``height`` grid; edge tiles are partial."""
    tiles = []
    for row in range(math.ceil(height / size)):
        for col in range(math.ceil(width / size)):
            c0, r0 = col * size, row * size
            tiles.append((TileId(col, row),
                          Window(c0, r0, min(size, width - c0), min(size, height - r0))))
    return tiles


def tiles_for_window(width: int, height: int, w: Window,
                     size: int = TILE_SIZE) -> list[tuple[TileId, Window]]:
    """Tiles of the grid that intersect ``w``, row-major."""
    out = []
    for row in range(w.row_off // size, (w.row_end - 1) // size + 1):
        for col in range(w.col_off // size, (w.col_end - 1) // size + 1):
            c0, r0 = col * size, row * size
            out.append((TileId(col, row),
                        Window(c0, r0, min(size, width - c0), min(size, height - r0))))
    return out


# --- VRAS ------------------------------------------------------------------

@dataclass(frozen=True)
class VrasHeader:
    width: int
    height: int
    transform: GeoTransform
    nodata: float
    crs: str
    header_size: int

    @property
    def payload_size(self) -> int:
        return self.width * self.height * SAMPLE_BYTES


def encode_header(width: int, height: int, t: GeoTransform, nodata: float, crs: str) -> bytes:
    label = crs.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValueError("CRS label too long")
    return _FIXED.pack(MAGIC, width, height, t.origin_x, t.origin_y, t.pixel_w, t.pixel_h,
                       nodata, len(label)) + label


def encode_vras(r: Raster) -> bytes:
    return (encode_header(r.width, r.height, r.transform, r.nodata, r.crs)
            + r.data.astype("<f4", copy=False).tobytes())


def write_vras(r: Raster, path) -> None:
    Path(path).write_bytes(encode_vras(r))


def read_header(fh: BinaryIO) -> VrasHeader:
    fixed = fh.read(_FIXED.size)
    if len(fixed) < _FIXED.size:
        raise MalformedFile("truncated header")
    magic, width, height, ox, oy, pw, ph, nodata, crs_len = _FIXED.unpack(fixed)
    if magic != MAGIC:
        raise MalformedFile(f"bad magic {magic!r}")
    label = fh.read(crs_len)
    if len(label) < crs_len:
        raise MalformedFile("truncated CRS label")
    try:
        crs = label.decode("utf-8")
        transform = GeoTransform(ox, oy, pw, ph)
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedFile(str(exc)) from exc
    if width == 0 or height == 0:
        raise MalformedFile("empty raster")
    if math.isnan(nodata):
        raise MalformedFile("NaN nodata sentinel")
    return VrasHeader(width, height, transform, float(nodata), crs, _FIXED.size + crs_len)


def decode_vras(blob: bytes) -> Raster:
    import io

    hdr = read_header(io.BytesIO(blob))
    payload = blob[hdr.header_size:]
    if len(payload) != hdr.payload_size:
        raise MalformedFile(f"payload is {len(payload)} bytes, header promises {hdr.payload_size}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(hdr.height, hdr.width)
    try:
        return Raster(data, hdr.transform, hdr.nodata, hdr.crs)
    except ValueError as exc:
        raise MalformedFile(str(exc)) from exc


def read_vras(path) -> Raster:
    return decode_vras(Path(path).read_bytes())


def read_vras_header(path) -> VrasHeader:
    with open(path, "rb") as fh:
        hdr = read_header(fh)
        if os.fstat(fh.fileno()).st_size != hdr.header_size + hdr.payload_size:
            raise MalformedFile(f"{path}: file size does not match header")
    return hdr


def read_window_from(fh: BinaryIO, hdr: VrasHeader, w: Window) -> np.ndarray:
    """Read the samples of ``w`` row by row with seeks; returns a float32 array."""
    out = np.empty((w.height, w.width), dtype=np.float32)
    row_bytes = w.width * SAMPLE_BYTES
    for i in range(w.height):
        fh.seek(hdr.header_size + ((w.row_off + i) * hdr.width + w.col_off) * SAMPLE_BYTES)
        chunk = fh.read(row_bytes)
        if len(chunk) != row_bytes:
            raise MalformedFile("truncated payload")
        out[i] = np.frombuffer(chunk, dtype="<f4")
    return out
