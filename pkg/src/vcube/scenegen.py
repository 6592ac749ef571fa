"""
Synthetic optical and SAR scenes for hermetic experiments.

Each generated scene is a directory of VRAS band files plus a ``scene.json``
sidecar ready for :meth:`vcube.catalog.Catalog.ingest_scene`.  Ground-truth
fields are written to ``<out>/truth/`` and are not referenced by sidecars.

Smooth fields are sums of a few seeded 2-D cosine modes; cloud masks are the
top ``cloud_fraction`` quantile of another such field, so clouds come as
coherent blobs and the cloudy pixel count is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadTemplate
from .raster import GeoTransform, Raster, write_vras
from .sensors import Sensor

OPTICAL_BANDS = ("B02", "B03", "B04", "B05", "B08", "B11", "B12")

# reflectance range of each band's ground-truth field
_BAND_RANGES = {
    "B02": (0.02, 0.12), "B03": (0.04, 0.16), "B04": (0.03, 0.20), "B05": (0.08, 0.25),
    "B08": (0.20, 0.50), "B11": (0.10, 0.30), "B12": (0.05, 0.25),
}
_DAY = 86400


@dataclass
class SceneTemplate:
    sensor: Sensor
    width: int = 256
    height: int = 256
    transform: GeoTransform = field(default_factory=lambda: GeoTransform(0.0, 2560.0, 10.0, 10.0))
    timestamps: list[int] = field(default_factory=lambda: [1_672_531_200])
    seed: int = 0
    cloud_fraction: float = 0.0
    looks: float = 4.0
    cal_a: float | str = 100.0      # constant calibration value or "smooth"
    crs: str = "EPSG:32630"
    modes: int = 6
    noise: float = 0.003            # per-date reflectance perturbation (std)
    prefix: str = ""

    def check(self, sensor: Sensor) -> None:
        if Sensor(self.sensor) != sensor:
            raise BadTemplate(f"template sensor is {self.sensor}, expected {sensor.value}")
        if self.width < 1 or self.height < 1:
            raise BadTemplate("grid must be at least 1x1")
        if not self.timestamps:
            raise BadTemplate("at least one timestamp is required")
        if len(set(self.timestamps)) != len(self.timestamps):
            raise BadTemplate("timestamps must be distinct")
        if not 0.0 <= self.cloud_fraction <= 1.0:
            raise BadTemplate("cloud_fraction must lie in [0, 1]")
        if not self.looks > 0:
            raise BadTemplate("looks must be positive")
        if isinstance(self.cal_a, str) and self.cal_a != "smooth":
            raise BadTemplate("cal_a must be a positive number or 'smooth'")
        if not isinstance(self.cal_a, str) and not self.cal_a > 0:
            raise BadTemplate("cal_a must be positive")

    def footprint(self) -> list[float]:
        t = self.transform
        return [t.origin_x, t.origin_y - self.height * t.pixel_h,
                t.origin_x + self.width * t.pixel_w, t.origin_y]


def smooth_field(rng: np.random.Generator, height: int, width: int, modes: int,
                 lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Sum of seeded cosine modes rescaled to [lo, hi]."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    f = np.zeros((height, width))
    for _ in range(modes):
        kx, ky = rng.uniform(0.5, 4.0, size=2) * rng.choice([-1, 1], size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        f += amp * np.cos(2 * np.pi * (kx * xx / max(width, 1) + ky * yy / max(height, 1)) + phase)
    span = f.max() - f.min()
    f = (f - f.min()) / span if span > 0 else np.zeros_like(f)
    return lo + (hi - lo) * f


def cloud_mask(rng: np.random.Generator, height: int, width: int, fraction: float,
               modes: int) -> np.ndarray:
    """Boolean cloud map with exactly round(fraction * N) cloudy pixels in coherent blobs."""
    n = height * width
    k = int(round(fraction * n))
    cloudy = np.zeros(n, dtype=bool)
    if k:
        f = smooth_field(rng, height, width, modes).ravel()
        cloudy[np.argsort(-f, kind="stable")[:k]] = True
    return cloudy.reshape(height, width)


def _scene_id(tpl: SceneTemplate, kind: str, i: int) -> str:
    return f"{tpl.prefix}{kind}_{tpl.seed}_{i:03d}_{tpl.timestamps[i]}"


def _write_scene(out: Path, scene_id: str, tpl: SceneTemplate, ts: int,
                 bands: dict[str, np.ndarray]) -> Path:
    d = out / scene_id
    d.mkdir(parents=True, exist_ok=True)
    refs = {}
    for name, arr in bands.items():
        write_vras(Raster(arr.astype(np.float32), tpl.transform, crs=tpl.crs), d / f"{name}.vras")
        refs[name] = f"{name}.vras"
    sidecar = d / "scene.json"
    sidecar.write_text(json.dumps({
        "scene_id": scene_id, "sensor": Sensor(tpl.sensor).value, "timestamp": int(ts),
        "crs": tpl.crs, "footprint": tpl.footprint(), "bands": refs,
    }, indent=2, sort_keys=True) + "\n")
    return sidecar


def _write_truth(out: Path, tpl: SceneTemplate, fields: dict[str, np.ndarray]) -> None:
    d = out / "truth"
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in fields.items():
        write_vras(Raster(arr.astype(np.float32), tpl.transform, crs=tpl.crs), d / f"{name}.vras")


def optical_truth(tpl: SceneTemplate) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([tpl.seed, 0])
    return {b: smooth_field(rng, tpl.height, tpl.width, tpl.modes, *_BAND_RANGES[b])
            for b in OPTICAL_BANDS}


def gen_optical(tpl: SceneTemplate, out) -> list[Path]:
    """Write one optical scene per timestamp; returns the sidecar paths."""
    tpl.check(Sensor.OPTICAL)
    out = Path(out)
    truth = optical_truth(tpl)
    _write_truth(out, tpl, truth)
    sidecars = []
    for i, ts in enumerate(tpl.timestamps):
        rng = np.random.default_rng([tpl.seed, 1, i])
        clouds = cloud_mask(rng, tpl.height, tpl.width, tpl.cloud_fraction, tpl.modes)
        haze = smooth_field(rng, tpl.height, tpl.width, tpl.modes)
        bands = {}
        for b in OPTICAL_BANDS:
            clear = truth[b] + rng.normal(0.0, tpl.noise, size=truth[b].shape)
            cloud_val = 0.55 + 0.4 * haze + rng.normal(0.0, 0.02, size=haze.shape)
            bands[b] = np.clip(np.where(clouds, cloud_val, clear), 0.0, 1.0)
        bands["MASK"] = np.where(clouds, 0.0, 1.0)
        sidecars.append(_write_scene(out, _scene_id(tpl, "S2", i), tpl, ts, bands))
    return sidecars


def sar_truth(tpl: SceneTemplate) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([tpl.seed, 2])
    sigma0 = smooth_field(rng, tpl.height, tpl.width, tpl.modes, 0.01, 0.5)
    if tpl.cal_a == "smooth":
        cal = smooth_field(rng, tpl.height, tpl.width, 2, 80.0, 120.0)
    else:
        cal = np.full((tpl.height, tpl.width), float(tpl.cal_a))
    return {"SIGMA0": sigma0, "CAL_A": cal}


def gen_sar(tpl: SceneTemplate, out) -> list[Path]:
    """Write one SAR scene per timestamp: DN = A * sqrt(sigma0 * speckle)."""
    tpl.check(Sensor.SAR)
    out = Path(out)
    truth = sar_truth(tpl)
    _write_truth(out, tpl, truth)
    sidecars = []
    for i, ts in enumerate(tpl.timestamps):
        rng = np.random.default_rng([tpl.seed, 3, i])
        speckle = rng.gamma(shape=tpl.looks, scale=1.0 / tpl.looks, size=truth["SIGMA0"].shape)
        dn = truth["CAL_A"] * np.sqrt(truth["SIGMA0"] * speckle)
        bands = {"VV": dn, "CAL_A": truth["CAL_A"]}
        sidecars.append(_write_scene(out, _scene_id(tpl, "S1", i), tpl, ts, bands))
    return sidecars


def daily(start: int, count: int, step_days: int = 1) -> list[int]:
    return [start + i * step_days * _DAY for i in range(count)]
