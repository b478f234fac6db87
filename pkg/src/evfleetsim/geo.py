"""Distance, travel-time and energy arithmetic.

Scalar helpers take plain floats; the ``*_many`` variants broadcast over
numpy arrays and are used on the dispatch hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, SimulationError

EARTH_RADIUS_MILES = 3958.8
SOC_EPS = 1e-9


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class Region(NamedTuple):
    """Lat/lon bounding box in degrees."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, p) -> bool:
        return self.lat_min <= p[0] <= self.lat_max and self.lon_min <= p[1] <= self.lon_max


def haversine_miles(a, b) -> float:
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    h = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_MILES * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def manhattan_miles(a, b) -> float:
    """Axis-aligned L1 arc length: meridian arc plus parallel arc at the mean latitude."""
    dlat = math.radians(abs(b[0] - a[0]))
    dlon = abs(b[1] - a[1]) % 360.0
    dlon = math.radians(min(dlon, 360.0 - dlon))
    mid = math.radians((a[0] + b[0]) / 2)
    return EARTH_RADIUS_MILES * (dlat + dlon * math.cos(mid))


def manhattan_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.asarray(x, dtype=float) for x in (lat1, lon1, lat2, lon2))
    dlat = np.radians(np.abs(lat2 - lat1))
    dlon = np.abs(lon2 - lon1) % 360.0
    dlon = np.radians(np.minimum(dlon, 360.0 - dlon))
    mid = np.radians((lat1 + lat2) / 2)
    return EARTH_RADIUS_MILES * (dlat + dlon * np.cos(mid))


@dataclass(frozen=True)
class DistanceModel:
    mode: str = "haversine"
    correction_factor: float = 1.0

    def __post_init__(self):
        if self.mode not in ("haversine", "manhattan"):
            raise ConfigError(f"unknown distance mode {self.mode!r}")
        if not self.correction_factor > 0:
            raise ConfigError("correction_factor must be positive")

    def base(self, a, b) -> float:
        return haversine_miles(a, b) if self.mode == "haversine" else manhattan_miles(a, b)

    def __call__(self, a, b) -> float:
        return self.base(a, b) * self.correction_factor

    def many(self, lat1, lon1, lat2, lon2) -> np.ndarray:
        f = haversine_many if self.mode == "haversine" else manhattan_many
        return f(lat1, lon1, lat2, lon2) * self.correction_factor


def corrected_distance(a, b, model: DistanceModel) -> float:
    return model(a, b)


def travel_time_minutes(distance: float, velocity_mph: float) -> float:
    if not velocity_mph > 0:
        raise ConfigError(f"velocity must be positive, got {velocity_mph}")
    return 60.0 * distance / velocity_mph


def soc_drop(distance: float, battery_kwh: float, consumption_wh_per_mile: float) -> float:
    """Fraction of the pack spent driving ``distance`` miles."""
    if distance < 0:
        raise ConfigError(f"negative distance {distance}")
    return distance * consumption_wh_per_mile / (battery_kwh * 1000.0)


def drain(soc: float, delta: float) -> float:
    """``soc - delta``; float noise below zero is clamped, a real deficit raises."""
    out = soc - delta
    if out < 0:
        if out < -SOC_EPS:
            raise SimulationError(f"SoC underflow: {soc} - {delta} = {out}")
        return 0.0
    return out


def charge_duration_minutes(from_soc: float, to_soc: float, battery_kwh: float, charge_rate_kw: float) -> float:
    if to_soc < from_soc:
        raise ConfigError(f"to_soc {to_soc} below from_soc {from_soc}")
    return 60.0 * (to_soc - from_soc) * battery_kwh / charge_rate_kw


def charge_gain(minutes: float, battery_kwh: float, charge_rate_kw: float) -> float:
    return minutes * charge_rate_kw / (60.0 * battery_kwh)


def _lat_from_u(u):
    return np.degrees(np.arcsin(2.0 * u - 1.0))


def uniform_sphere_point(rng: np.random.Generator, region: Optional[Region] = None) -> GeoPoint:
    lat, lon = uniform_sphere_points(rng, 1, region)
    return GeoPoint(float(lat[0]), float(lon[0]))


def uniform_sphere_points(rng: np.random.Generator, n: int, region: Optional[Region] = None):
    """Area-uniform points on the sphere, optionally restricted to ``region``.

    Restriction samples the conditional distribution directly (inverse CDF
    over the band of ``sin(lat)``), which is exactly what rejection sampling
    would produce but without the rejection cost for small boxes.
    """
    if region is None:
        u_lo, u_hi, lon_lo, lon_hi = 0.0, 1.0, -180.0, 180.0
    else:
        u_lo = (math.sin(math.radians(region.lat_min)) + 1) / 2
        u_hi = (math.sin(math.radians(region.lat_max)) + 1) / 2
        lon_lo, lon_hi = region.lon_min, region.lon_max
    u = rng.uniform(u_lo, u_hi, size=n)
    lon = rng.uniform(lon_lo, lon_hi, size=n)
    lat = _lat_from_u(u)
    if region is not None:
        lat = np.clip(lat, region.lat_min, region.lat_max)
    return lat, lon
