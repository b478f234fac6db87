"""Arrival streams: synthetic Poisson trips or cleaned trip-record CSVs."""

from __future__ import annotations

import datetime as dt
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional

import numpy as np
import pandas as pd

from . import geo
from .domain import TripRequest
from .errors import ConfigError, SchemaError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("pickup_datetime", "pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon", "trip_distance")
OPTIONAL_COLUMNS = ("dropoff_datetime",)
COORD_COLUMNS = ("pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon")


@dataclass
class TripTable:
    """Trips sorted by arrival time (minutes since scenario start).

    ``distance`` is the recorded trip distance in miles and ``duration`` the
    recorded trip duration in minutes; either may be NaN when unknown.
    """

    arrival: np.ndarray
    origin_lat: np.ndarray
    origin_lon: np.ndarray
    dest_lat: np.ndarray
    dest_lon: np.ndarray
    distance: np.ndarray
    duration: np.ndarray

    def __post_init__(self):
        for name in ("arrival", "origin_lat", "origin_lon", "dest_lat", "dest_lon", "distance", "duration"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        order = np.argsort(self.arrival, kind="stable")
        if (order != np.arange(len(order))).any():
            for name in ("arrival", "origin_lat", "origin_lon", "dest_lat", "dest_lon", "distance", "duration"):
                setattr(self, name, getattr(self, name)[order])

    def __len__(self):
        return len(self.arrival)

    @classmethod
    def empty(cls) -> "TripTable":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z)

    @classmethod
    def from_rows(cls, rows) -> "TripTable":
        """Rows of (arrival, o_lat, o_lon, d_lat, d_lon[, distance[, duration]])."""
        if not rows:
            return cls.empty()
        cols = [list(c) for c in zip(*[tuple(r) + (np.nan,) * (7 - len(r)) for r in rows])]
        return cls(*cols)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "arrival_minute": self.arrival,
            "pickup_lat": self.origin_lat,
            "pickup_lon": self.origin_lon,
            "dropoff_lat": self.dest_lat,
            "dropoff_lon": self.dest_lon,
            "trip_distance": self.distance,
            "trip_duration": self.duration,
        })

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.arrival, self.origin_lat, self.origin_lon, self.dest_lat, self.dest_lon, self.distance, self.duration):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class CleaningFilter:
    lower_percentile: float = 0.5
    upper_percentile: float = 99.5
    window_start: Optional[dt.datetime] = None
    window_end: Optional[dt.datetime] = None
    max_distance: Optional[float] = None
    require_positive_distance: bool = True

    def __post_init__(self):
        if not 0 <= self.lower_percentile < self.upper_percentile <= 100:
            raise ConfigError("need 0 <= lower_percentile < upper_percentile <= 100")


@dataclass(frozen=True)
class CoordinateBounds:
    """Inclusive per-column coordinate limits resolved from percentiles."""

    limits: tuple  # ((column, lo, hi), ...)

    def mask(self, df: pd.DataFrame) -> np.ndarray:
        keep = np.ones(len(df), dtype=bool)
        for col, lo, hi in self.limits:
            v = df[col].to_numpy(dtype=float)
            keep &= (v >= lo) & (v <= hi)
        return keep


def resolve_bounds(df: pd.DataFrame, lower: float, upper: float) -> CoordinateBounds:
    limits = []
    for col in COORD_COLUMNS:
        v = df[col].to_numpy(dtype=float)
        if len(v):
            lo, hi = np.percentile(v, [lower, upper])
        else:
            lo, hi = -np.inf, np.inf
        limits.append((col, float(lo), float(hi)))
    return CoordinateBounds(tuple(limits))


@dataclass(frozen=True)
class LoadReport:
    rows_in: int
    rows_kept: int
    rows_unparseable: int
    bounds: Optional[CoordinateBounds] = None
    origin: Optional[dt.datetime] = None


def read_trip_frame(path, schema_map: Optional[Mapping[str, str]] = None) -> tuple[pd.DataFrame, int]:
    """Read a trip CSV into canonical column names; returns (frame, unparseable row count)."""
    schema_map = dict(schema_map or {})
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raw = pd.DataFrame()
    except FileNotFoundError as exc:
        raise ConfigError(f"trip file not found: {path}") from exc
    names = {c: schema_map.get(c, c) for c in REQUIRED_COLUMNS + OPTIONAL_COLUMNS}
    if raw.empty and len(raw.columns) == 0:
        return pd.DataFrame(columns=list(REQUIRED_COLUMNS)), 0
    for c in REQUIRED_COLUMNS:
        if names[c] not in raw.columns:
            raise SchemaError(f"missing column {names[c]!r} (mapped from {c!r})")
    df = pd.DataFrame(index=raw.index)
    df["pickup_datetime"] = pd.to_datetime(raw[names["pickup_datetime"]], errors="coerce", format="ISO8601")
    if names["dropoff_datetime"] in raw.columns:
        df["dropoff_datetime"] = pd.to_datetime(raw[names["dropoff_datetime"]], errors="coerce", format="ISO8601")
    for c in COORD_COLUMNS + ("trip_distance",):
        df[c] = pd.to_numeric(raw[names[c]], errors="coerce")
    bad = df.isna().any(axis=1)
    bad |= ~df["pickup_lat"].between(-90, 90) | ~df["dropoff_lat"].between(-90, 90)
    bad |= ~df["pickup_lon"].between(-180, 180) | ~df["dropoff_lon"].between(-180, 180)
    n_bad = int(bad.sum())
    if n_bad:
        log.warning("%s: skipped %d unparseable rows", path, n_bad)
    return df[~bad].reset_index(drop=True), n_bad


def clean_frame(df: pd.DataFrame, filt: CleaningFilter, bounds: Optional[CoordinateBounds] = None):
    """Apply the cleaning filter. Percentile bounds are resolved on the
    in-window rows unless ``bounds`` is given; applying the same resolved
    bounds again is a no-op."""
    keep = np.ones(len(df), dtype=bool)
    if filt.window_start is not None:
        keep &= (df["pickup_datetime"] >= pd.Timestamp(filt.window_start)).to_numpy()
    if filt.window_end is not None:
        keep &= (df["pickup_datetime"] < pd.Timestamp(filt.window_end)).to_numpy()
    if filt.require_positive_distance:
        keep &= (df["trip_distance"] > 0).to_numpy()
    if filt.max_distance is not None:
        keep &= (df["trip_distance"] <= filt.max_distance).to_numpy()
    if bounds is None:
        bounds = resolve_bounds(df[keep], filt.lower_percentile, filt.upper_percentile)
    keep &= bounds.mask(df)
    return df[keep].reset_index(drop=True), bounds


def frame_to_table(df: pd.DataFrame, origin: Optional[dt.datetime] = None) -> tuple[TripTable, Optional[dt.datetime]]:
    if len(df) == 0:
        return TripTable.empty(), origin
    if origin is None:
        origin = df["pickup_datetime"].min().floor("D").to_pydatetime()
    t0 = pd.Timestamp(origin)
    arrival = (df["pickup_datetime"] - t0).dt.total_seconds().to_numpy() / 60.0
    if "dropoff_datetime" in df:
        duration = (df["dropoff_datetime"] - df["pickup_datetime"]).dt.total_seconds().to_numpy() / 60.0
        duration = np.where(duration > 0, duration, np.nan)
    else:
        duration = np.full(len(df), np.nan)
    table = TripTable(
        arrival,
        df["pickup_lat"].to_numpy(float), df["pickup_lon"].to_numpy(float),
        df["dropoff_lat"].to_numpy(float), df["dropoff_lon"].to_numpy(float),
        df["trip_distance"].to_numpy(float), duration,
    )
    return table, origin


def load_trip_records(path, schema_map=None, filt: CleaningFilter = CleaningFilter(),
                      origin: Optional[dt.datetime] = None) -> tuple[TripTable, LoadReport]:
    """Load, clean and sort a trip CSV.

    Arrival times are minutes since ``origin`` (default: the window start,
    else midnight of the earliest pickup).
    """
    df, n_bad = read_trip_frame(path, schema_map)
    rows_in = len(df) + n_bad
    kept, bounds = clean_frame(df, filt)
    table, origin = frame_to_table(kept, origin or filt.window_start)
    return table, LoadReport(rows_in, len(table), n_bad, bounds, origin)


@dataclass(frozen=True)
class RegressionReport:
    slope: float
    intercept: float
    r_squared: float
    test_mse: float
    train_fraction: float
    n_train: int
    n_test: int

    @property
    def correction_factor(self) -> float:
        return self.slope


def fit_correction_factor(table: TripTable, train_fraction: float = 0.8,
                          rng: Optional[np.random.Generator] = None) -> RegressionReport:
    """OLS of recorded distance on Haversine distance; the slope is the correction factor.

    R-squared is reported on the training split, MSE on the held-out split.
    """
    if not 0 < train_fraction <= 1:
        raise ConfigError("train_fraction must be in (0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    ok = np.isfinite(table.distance)
    x = geo.haversine_many(table.origin_lat[ok], table.origin_lon[ok], table.dest_lat[ok], table.dest_lon[ok])
    y = table.distance[ok]
    perm = rng.permutation(len(x))
    n_train = int(round(train_fraction * len(x)))
    if n_train < 2:
        raise ConfigError("need at least 2 training rows with recorded distance")
    tr, te = perm[:n_train], perm[n_train:]
    xt, yt = x[tr], y[tr]
    xm, ym = xt.mean(), yt.mean()
    sxx = float(((xt - xm) ** 2).sum())
    if sxx == 0.0:
        raise ConfigError("degenerate fit: Haversine distances have no spread")
    slope = float(((xt - xm) * (yt - ym)).sum()) / sxx
    intercept = float(ym - slope * xm)
    resid = yt - (slope * xt + intercept)
    sst = float(((yt - ym) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / sst if sst > 0 else 1.0
    if len(te):
        test_mse = float(((y[te] - (slope * x[te] + intercept)) ** 2).mean())
    else:
        test_mse = float("nan")
    return RegressionReport(slope, intercept, min(max(r2, 0.0), 1.0), test_mse, train_fraction, len(tr), len(te))


def generate_poisson_trips(rate: float, horizon: float, region: Optional[geo.Region], rng: np.random.Generator,
                           distance_model: geo.DistanceModel = geo.DistanceModel(),
                           hourly_profile=None, start_minute_of_day: float = 0.0) -> TripTable:
    """Poisson arrivals on [0, horizon) with uniform-sphere endpoints.

    ``hourly_profile`` (24 multipliers of ``rate``) makes the process
    non-homogeneous; it is sampled by thinning a homogeneous stream at the
    peak rate.
    """
    if not rate > 0:
        raise ConfigError("arrival rate must be positive")
    if horizon <= 0:
        return TripTable.empty()
    if hourly_profile is None:
        peak = rate
    else:
        profile = np.asarray(hourly_profile, dtype=float)
        peak = rate * profile.max()
        if peak <= 0:
            return TripTable.empty()
    times = []
    t = 0.0
    chunk = max(16, int(peak * horizon * 1.1) + 16)
    while t < horizon:
        gaps = rng.exponential(1.0 / peak, size=chunk)
        ts = t + np.cumsum(gaps)
        times.append(ts[ts < horizon])
        t = ts[-1]
    arrival = np.concatenate(times)
    if hourly_profile is not None:
        hour = (((arrival + start_minute_of_day) % 1440.0) // 60).astype(int)
        accept = rng.uniform(size=len(arrival)) * peak < rate * profile[hour]
        arrival = arrival[accept]
    n = len(arrival)
    olat, olon = geo.uniform_sphere_points(rng, n, region)
    dlat, dlon = geo.uniform_sphere_points(rng, n, region)
    dist = distance_model.many(olat, olon, dlat, dlon)
    return TripTable(arrival, olat, olon, dlat, dlon, dist, np.full(n, np.nan))


def arrival_stream(table: TripTable, distance_model: Optional[geo.DistanceModel] = None) -> Iterator[TripRequest]:
    """Yield ``TripRequest`` objects in arrival order.

    Trips without a recorded distance get the corrected distance between
    their endpoints.
    """
    for i in range(len(table)):
        o = geo.GeoPoint(float(table.origin_lat[i]), float(table.origin_lon[i]))
        d = geo.GeoPoint(float(table.dest_lat[i]), float(table.dest_lon[i]))
        dist = float(table.distance[i])
        if not np.isfinite(dist):
            dist = distance_model(o, d) if distance_model is not None else geo.haversine_miles(o, d)
        dur = float(table.duration[i])
        yield TripRequest(i, o, d, float(table.arrival[i]), dist, dur if np.isfinite(dur) else None)


def write_trip_csv(table: TripTable, path, origin: dt.datetime) -> Path:
    """Write ``table`` in the canonical CSV schema (ISO-8601 datetimes, miles)."""
    t0 = pd.Timestamp(origin)
    df = pd.DataFrame({
        "pickup_datetime": (t0 + pd.to_timedelta(table.arrival, unit="min")).strftime("%Y-%m-%dT%H:%M:%S.%f"),
        "pickup_lat": table.origin_lat,
        "pickup_lon": table.origin_lon,
        "dropoff_lat": table.dest_lat,
        "dropoff_lon": table.dest_lon,
        "trip_distance": table.distance,
    })
    if np.isfinite(table.duration).any():
        end = t0 + pd.to_timedelta(table.arrival + np.nan_to_num(table.duration), unit="min")
        df["dropoff_datetime"] = end.strftime("%Y-%m-%dT%H:%M:%S.%f")
    path = Path(path)
    df.to_csv(path, index=False, float_format="%.9f")
    return path
