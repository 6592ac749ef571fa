"""
Built-in raster operations and their registry.

Every kernel is a pure function of its input rasters.  Arithmetic runs in
float64 and is cast to float32 once at the end; per-pixel failures
(nodata operand, zero denominator, log of a non-positive value, ...) turn
into nodata instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AllNodata, BadParam, BadWindow, EmptyStack, UnknownParam
from .raster import GeoTransform, Raster, Window, require_same_grid

# --- spectral indexes ----------------------------------------------------------

#: input roles and Sentinel-2 band bindings for each index, in input order
INDEX_BANDS: dict[str, tuple[str, ...]] = {
    "NDVI": ("B08", "B04"),
    "EVI": ("B08", "B04", "B02"),
    "ARI": ("B03", "B05"),
    "MSAVI": ("B08", "B04"),
    "MCARI": ("B05", "B04", "B03"),
    "SIPI": ("B08", "B02", "B04"),
    "NDWI": ("B03", "B08"),
    "NBR": ("B08", "B12"),
}


def _ndvi(nir, red):
    return (nir - red) / (nir + red)


def _evi(nir, red, blue):
    return 2.5 * (nir - red) / (nir + 6.0 * red - 7.5 * blue + 1.0)


def _ari(green, rededge):
    return 1.0 / green - 1.0 / rededge


def _msavi(nir, red):
    return (2.0 * nir + 1.0 - np.sqrt((2.0 * nir + 1.0) ** 2 - 8.0 * (nir - red))) / 2.0


def _mcari(rededge, red, green):
    return ((rededge - red) - 0.2 * (rededge - green)) * (rededge / red)


def _sipi(nir, blue, red):
    return (nir - blue) / (nir - red)


def _ndwi(green, nir):
    return (green - nir) / (green + nir)


def _nbr(nir, swir):
    return (nir - swir) / (nir + swir)


_INDEX_FUNCS: dict[str, Callable[..., np.ndarray]] = {
    "NDVI": _ndvi, "EVI": _evi, "ARI": _ari, "MSAVI": _msavi,
    "MCARI": _mcari, "SIPI": _sipi, "NDWI": _ndwi, "NBR": _nbr,
}


def _combine_invalid(rasters: Sequence[Raster]) -> np.ndarray:
    invalid = np.zeros(rasters[0].shape, dtype=bool)
    for r in rasters:
        invalid |= ~r.valid_mask()
    return invalid


def _like(ref: Raster, values, invalid=None) -> Raster:
    return Raster.from_values(values, ref.transform, ref.nodata, ref.crs, invalid=invalid)


def band_index(index: str, *bands: Raster) -> Raster:
    """Evaluate a spectral index; ``bands`` follow the order in :data:`INDEX_BANDS`."""
    index = index.upper()
    if index not in _INDEX_FUNCS:
        raise BadParam(f"unknown index {index!r}; expected one of {sorted(_INDEX_FUNCS)}")
    if len(bands) != len(INDEX_BANDS[index]):
        raise ValueError(f"{index} takes {len(INDEX_BANDS[index])} bands, got {len(bands)}")
    require_same_grid(*bands)
    invalid = _combine_invalid(bands)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = _INDEX_FUNCS[index](*(b.data.astype(np.float64) for b in bands))
    return _like(bands[0], values, invalid)


# --- temporal synthesis --------------------------------------------------------

@dataclass(frozen=True)
class TimeStack:
    """Co-registered observations of one band plus their clear-sky masks, sorted by time.

    Mask samples: 1.0 clear, 0.0 cloudy, nodata unobserved.
    """

    timestamps: tuple[int, ...]
    rasters: tuple[Raster, ...]
    masks: tuple[Raster, ...]

    def __post_init__(self):
        if not (len(self.timestamps) == len(self.rasters) == len(self.masks)):
            raise ValueError("timestamps, rasters and masks must have equal length")
        if not self.timestamps:
            raise EmptyStack("time stack is empty")
        order = sorted(range(len(self.timestamps)), key=lambda i: self.timestamps[i])
        ts = tuple(self.timestamps[i] for i in order)
        if any(a == b for a, b in zip(ts, ts[1:])):
            raise ValueError("stack timestamps must be distinct")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "rasters", tuple(self.rasters[i] for i in order))
        object.__setattr__(self, "masks", tuple(self.masks[i] for i in order))
        require_same_grid(*self.rasters, *self.masks)

    @classmethod
    def build(cls, entries: Sequence[tuple[int, Raster, Raster]]) -> "TimeStack":
        if not entries:
            raise EmptyStack("time stack is empty")
        ts, rs, ms = zip(*entries)
        return cls(tuple(ts), tuple(rs), tuple(ms))


def date_weight(t: float, center: float, half_window: float) -> float:
    return max(0.0, 1.0 - abs(t - center) / half_window)


def temporal_synthesis(stack: TimeStack, center: float, half_window: float) -> Raster:
    """Cloud-gated weighted mean of a time stack with a triangular date-distance kernel.

    A simple stand-in for operational compositors, not a reproduction of any of them.
    """
    if half_window <= 0:
        raise BadParam("half_window must be positive")
    ref = stack.rasters[0]
    num = np.zeros(ref.shape, dtype=np.float64)
    den = np.zeros(ref.shape, dtype=np.float64)
    for t, r, m in zip(stack.timestamps, stack.rasters, stack.masks):
        w = date_weight(t, center, half_window)
        if w == 0.0:
            continue
        usable = (m.data == np.float32(1.0)) & m.valid_mask() & r.valid_mask()
        x = r.data.astype(np.float64)
        num = np.where(usable, num + w * x, num)
        den = np.where(usable, den + w, den)
    empty = den == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        values = num / den
    return _like(ref, values, empty)


# --- SAR chain -------------------------------------------------------------------

def calibrate_sigma0(dn: Raster, cal_a: Raster) -> Raster:
    """Radiometric calibration: sigma0 = DN^2 / A^2, nodata where A <= 0."""
    require_same_grid(dn, cal_a)
    a = cal_a.data.astype(np.float64)
    d = dn.data.astype(np.float64)
    invalid = _combine_invalid((dn, cal_a)) | (a <= 0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = (d * d) / (a * a)
    return _like(dn, values, invalid)


def multilook(r: Raster, factor: int) -> Raster:
    """Block-average by ``factor``; nodata pixels are excluded from each block mean."""
    if int(factor) != factor or factor < 1:
        raise BadParam(f"multilook factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return r
    h, w = r.shape
    oh, ow = -(-h // factor), -(-w // factor)
    ph, pw = oh * factor - h, ow * factor - w
    valid = np.pad(r.valid_mask(), ((0, ph), (0, pw)), constant_values=False)
    x = np.pad(r.data.astype(np.float64), ((0, ph), (0, pw)))
    x = np.where(valid, x, 0.0)
    # fixed accumulation order per block, independent of array size
    sums = np.zeros((oh, ow))
    counts = np.zeros((oh, ow), dtype=np.int64)
    for i in range(factor):
        for j in range(factor):
            sums += x[i::factor, j::factor]
            counts += valid[i::factor, j::factor]
    with np.errstate(divide="ignore", invalid="ignore"):
        values = sums / counts
    return Raster.from_values(values, r.transform.scaled(factor), r.nodata, r.crs,
                              invalid=counts == 0)


def _window_sums(x: np.ndarray, valid: np.ndarray, half: int):
    """Sum, sum of squares and count of valid samples in each (2*half+1)^2 window.

    Windows are clipped at the array border.  Shifted slices are accumulated in
    a fixed order so each output depends only on its own neighbourhood values,
    which keeps tiled and whole-raster evaluation bit-identical.
    """
    h, w = x.shape
    xv = np.where(valid, x, 0.0)
    xp = np.pad(xv, half)
    vp = np.pad(valid, half).astype(np.int32)
    s = np.zeros((h, w))
    s2 = np.zeros((h, w))
    n = np.zeros((h, w), dtype=np.int32)
    size = 2 * half + 1
    for dy in range(size):
        for dx in range(size):
            blk = xp[dy:dy + h, dx:dx + w]
            s += blk
            s2 += blk * blk
            n += vp[dy:dy + h, dx:dx + w]
    return s, s2, n


def lee_filter(r: Raster, window: int = 5, looks: float = 1.0) -> Raster:
    """Lee MMSE speckle filter with noise variance 1/looks."""
    if int(window) != window or window < 3 or window % 2 == 0:
        raise BadWindow(f"window must be an odd integer >= 3, got {window}")
    if not looks > 0:
        raise BadParam(f"looks must be positive, got {looks}")
    valid = r.valid_mask()
    x = r.data.astype(np.float64)
    s, s2, n = _window_sums(x, valid, int(window) // 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = s / n
        v = np.maximum(s2 / n - m * m, 0.0)
        gain = np.where(v > 0, np.maximum(0.0, v - m * m / looks) / np.where(v > 0, v, 1.0), 0.0)
    values = m + gain * (x - m)
    return _like(r, values, ~valid)


def to_db(r: Raster) -> Raster:
    x = r.data.astype(np.float64)
    invalid = ~r.valid_mask() | (x <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = 10.0 * np.log10(np.where(invalid, 1.0, x))
    return _like(r, values, invalid)


def from_db(r: Raster) -> Raster:
    with np.errstate(over="ignore"):
        values = np.power(10.0, r.data.astype(np.float64) / 10.0)
    return _like(r, values, ~r.valid_mask())


def cloud_mask_ratio(mask: Raster) -> float:
    """Fraction of observed mask pixels flagged cloudy (0.0)."""
    valid = mask.valid_mask()
    n = int(valid.sum())
    if n == 0:
        raise AllNodata("mask has no valid pixels")
    return int(((mask.data == 0.0) & valid).sum()) / n


# --- registry --------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    type: type
    default: object = None
    required: bool = False
    check: Callable[[object], str | None] | None = None


@dataclass(frozen=True)
class OpSignature:
    """Registry entry: input roles, parameter schema and how the op maps grids."""

    name: str
    roles: Callable[[dict], tuple[str, ...]]
    params: dict[str, ParamSpec]
    kernel: Callable[..., Raster]
    temporal: bool = False
    doc: str = ""
    # output grid size/transform from input grid
    out_grid: Callable[[int, int, GeoTransform, dict], tuple[int, int, GeoTransform]] = field(
        default=lambda w, h, t, p: (w, h, t))
    # input window required to compute an output window
    needs: Callable[[Window, int, int, dict], Window] = field(default=lambda win, w, h, p: win)

    def resolve_params(self, given: dict) -> dict:
        """Fill defaults and type-check ``given``; raises :class:`BadParam`."""
        out = {}
        for key in given:
            if key not in self.params:
                raise UnknownParam(f"{self.name}: unknown parameter {key!r}")
        for key, ps in self.params.items():
            if key not in given:
                if ps.required:
                    raise BadParam(f"{self.name}: missing required parameter {key!r}")
                out[key] = ps.default
                continue
            val = given[key]
            if ps.type is float and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            if type(val) is not ps.type:
                raise BadParam(f"{self.name}: parameter {key!r} must be {ps.type.__name__}, "
                               f"got {type(val).__name__}")
            if ps.check is not None:
                problem = ps.check(val)
                if problem:
                    raise BadParam(f"{self.name}: parameter {key!r} {problem}")
            out[key] = val
        return out

    def describe(self) -> dict:
        return {
            "name": self.name,
            "temporal": self.temporal,
            "params": {k: {"type": p.type.__name__, "required": p.required, "default": p.default}
                       for k, p in self.params.items()},
            "doc": self.doc,
        }


def _check_index(v):
    return None if str(v).upper() in INDEX_BANDS else f"must be one of {sorted(INDEX_BANDS)}"


def _check_factor(v):
    return None if v >= 1 else "must be >= 1"


def _check_window(v):
    return None if v >= 3 and v % 2 == 1 else "must be an odd integer >= 3"


def _check_looks(v):
    return None if v > 0 and math.isfinite(v) else "must be positive"


def _multilook_grid(w, h, t, p):
    f = p["factor"]
    return -(-w // f), -(-h // f), t.scaled(f)


def _multilook_needs(win: Window, w: int, h: int, p) -> Window:
    f = p["factor"]
    c0, r0 = win.col_off * f, win.row_off * f
    c1, r1 = min(win.col_end * f, w), min(win.row_end * f, h)
    return Window(c0, r0, c1 - c0, r1 - r0)


def _lee_needs(win: Window, w: int, h: int, p) -> Window:
    half = p["window"] // 2
    c0, r0 = max(win.col_off - half, 0), max(win.row_off - half, 0)
    c1, r1 = min(win.col_end + half, w), min(win.row_end + half, h)
    return Window(c0, r0, c1 - c0, r1 - r0)


REGISTRY: dict[str, OpSignature] = {}


def _register(sig: OpSignature) -> None:
    assert sig.name not in REGISTRY
    REGISTRY[sig.name] = sig


_register(OpSignature(
    "band_index",
    roles=lambda p: INDEX_BANDS[str(p["index"]).upper()],
    params={"index": ParamSpec(str, required=True, check=_check_index)},
    kernel=lambda *bands, index: band_index(index, *bands),
    doc="spectral index; inputs follow the index's band roles",
))
_register(OpSignature(
    "temporal_synthesis",
    roles=lambda p: ("value", "mask"),
    params={},
    kernel=None,  # evaluated by the executor from a TimeStack
    temporal=True,
    doc="cloud-free weighted composite; center/half_window come from the request",
))
_register(OpSignature(
    "calibrate_sigma0",
    roles=lambda p: ("dn", "cal_a"),
    params={},
    kernel=lambda dn, cal_a: calibrate_sigma0(dn, cal_a),
    doc="sigma0 = DN^2 / A^2",
))
_register(OpSignature(
    "multilook",
    roles=lambda p: ("image",),
    params={"factor": ParamSpec(int, default=2, check=_check_factor)},
    kernel=lambda r, factor: multilook(r, factor),
    out_grid=_multilook_grid,
    needs=_multilook_needs,
    doc="block mean over factor x factor pixels",
))
_register(OpSignature(
    "lee_filter",
    roles=lambda p: ("image",),
    params={"window": ParamSpec(int, default=5, check=_check_window),
            "looks": ParamSpec(float, default=1.0, check=_check_looks)},
    kernel=lambda r, window, looks: lee_filter(r, window, looks),
    needs=_lee_needs,
    doc="Lee MMSE speckle filter",
))
_register(OpSignature(
    "to_db",
    roles=lambda p: ("image",),
    params={},
    kernel=lambda r: to_db(r),
    doc="10*log10(x), nodata for x <= 0",
))
_register(OpSignature(
    "from_db",
    roles=lambda p: ("image",),
    params={},
    kernel=lambda r: from_db(r),
    doc="10^(x/10)",
))


def list_ops() -> list[dict]:
    """Registry description, one entry per op, sorted by name."""
    out = []
    for name in sorted(REGISTRY):
        sig = REGISTRY[name]
        d = sig.describe()
        if name == "band_index":
            d["arity"] = {k: len(v) for k, v in INDEX_BANDS.items()}
            d["roles"] = {k: list(v) for k, v in INDEX_BANDS.items()}
        else:
            roles = sig.roles({k: p.default for k, p in sig.params.items()})
            d["arity"] = len(roles)
            d["roles"] = list(roles)
        out.append(d)
    return out


__all__ = [
    "INDEX_BANDS", "REGISTRY", "OpSignature", "ParamSpec", "TimeStack",
    "band_index", "temporal_synthesis", "calibrate_sigma0", "multilook", "lee_filter",
    "to_db", "from_db", "cloud_mask_ratio", "date_weight", "list_ops",
]
