"""Sensor kinds and the band names each one provides."""

from __future__ import annotations

from enum import Enum


class Sensor(str, Enum):
    OPTICAL = "OPTICAL"
    SAR = "SAR"


#: band names a product declaration may reference for each sensor
SENSOR_BANDS: dict[Sensor, frozenset[str]] = {
    Sensor.OPTICAL: frozenset(
        ["B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A",
         "B09", "B10", "B11", "B12", "MASK"]),
    Sensor.SAR: frozenset(["VV", "VH", "HH", "HV", "CAL_A"]),
}

#: bands every ingested scene of that sensor must carry
MANDATORY_BANDS: dict[Sensor, frozenset[str]] = {
    Sensor.OPTICAL: frozenset(["MASK"]),
    Sensor.SAR: frozenset(["CAL_A"]),
}
