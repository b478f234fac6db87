"""Scenario configuration.

A scenario is one YAML (or JSON) document whose sections mirror the
simulator's modules::

    seed: 7
    horizon_minutes: 1440
    fleet: {size: 100, velocity_mph: 11.21}
    chargers: {count: 20, posts: 4}
    matching: {kind: power_of_d, d: 5, filter: idle_charging_waiting}
    charging: {schedule: night, alpha: 1.0, assignment: closest_available}
    dataset: {kind: synthetic, rate_per_minute: 2.0}
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RegionSpec(_Section):
    lat_min: float = Field(ge=-90, le=90)
    lat_max: float = Field(ge=-90, le=90)
    lon_min: float = Field(ge=-180, le=180)
    lon_max: float = Field(ge=-180, le=180)

    @model_validator(mode="after")
    def _ordered(self):
        if self.lat_min > self.lat_max or self.lon_min > self.lon_max:
            raise ValueError("region min must not exceed max")
        return self

    def to_region(self):
        from .geo import Region
        return Region(self.lat_min, self.lat_max, self.lon_min, self.lon_max)


# Roughly the five boroughs of New York City.
NYC_REGION = RegionSpec(lat_min=40.58, lat_max=40.88, lon_min=-74.05, lon_max=-73.75)


class FleetConfig(_Section):
    size: int = Field(100, gt=0)
    battery_kwh: float = Field(51.25, gt=0)
    consumption_wh_per_mile: float = Field(230.0, gt=0)
    charge_rate_kw: float = Field(20.0, gt=0)
    velocity_mph: float = Field(11.21, gt=0)
    initial_soc: float = Field(1.0, ge=0, le=1)
    placement: Literal["sample_from_origins", "uniform_in_region"] = "sample_from_origins"


class ChargerConfig(_Section):
    count: int = Field(20, gt=0)
    posts: int = Field(4, gt=0)
    placement: Literal["sample_from_origins", "uniform_in_bounding_box"] = "sample_from_origins"
    lower_percentile: float = Field(5.0, ge=0, le=100)
    upper_percentile: float = Field(95.0, ge=0, le=100)
    region: Optional[RegionSpec] = None


class AdaptiveConfig(_Section):
    period: int = Field(1000, gt=0)
    threshold: float = Field(0.05, ge=0, le=1)
    high_soc: float = Field(0.8, ge=0, le=1)


class MatchingConfig(_Section):
    kind: Literal["closest", "closest_available", "power_of_d"] = "power_of_d"
    d: float = Field(10.0, ge=1)
    filter: Literal[
        "only_idle",
        "idle_charging_waiting",
        "idle_charging_waiting_driving",
        "min_charge_time",
    ] = "idle_charging_waiting"
    min_charge_minutes: float = Field(10.0, ge=0)
    min_end_soc: float = Field(0.0, ge=0, le=1)
    adaptive: Optional[AdaptiveConfig] = None


class ScheduleStep(_Section):
    start_minute: float = Field(ge=0, lt=1440)
    threshold: float = Field(ge=0, le=1)


class ChargingConfig(_Section):
    schedule: Union[Literal["always", "night"], list[ScheduleStep]] = "always"
    alpha: float = Field(1.0, ge=0, le=1)
    assignment: Literal["closest_available", "power_of_d"] = "closest_available"
    d: int = Field(2, ge=1)
    interrupt: bool = True


class SyntheticDataset(_Section):
    kind: Literal["synthetic"] = "synthetic"
    rate_per_minute: float = Field(1.0, gt=0)
    region: RegionSpec = NYC_REGION
    # 24 hourly multipliers of rate_per_minute; None = homogeneous
    hourly_profile: Optional[list[float]] = None

    @field_validator("hourly_profile")
    @classmethod
    def _profile(cls, v):
        if v is not None and (len(v) != 24 or min(v) < 0):
            raise ValueError("hourly_profile needs 24 non-negative multipliers")
        return v


class CsvDataset(_Section):
    kind: Literal["csv"] = "csv"
    path: str
    columns: dict[str, str] = {}
    lower_percentile: float = Field(0.5, ge=0, le=100)
    upper_percentile: float = Field(99.5, ge=0, le=100)
    window_start: Optional[dt.datetime] = None
    window_end: Optional[dt.datetime] = None
    max_distance: Optional[float] = Field(None, gt=0)


class DistanceConfig(_Section):
    mode: Literal["haversine", "manhattan"] = "haversine"
    # a number, or "fit" to regress recorded distances on Haversine distance
    correction_factor: Union[float, Literal["fit"]] = 1.0
    train_fraction: float = Field(0.8, gt=0, lt=1)

    @field_validator("correction_factor")
    @classmethod
    def _positive(cls, v):
        if v != "fit" and not v > 0:
            raise ValueError("correction_factor must be positive")
        return v


class ScenarioConfig(_Section):
    seed: int = Field(0, ge=0)
    horizon_minutes: float = Field(1440.0, gt=0)
    start_datetime: dt.datetime = dt.datetime(2024, 5, 1)
    resolution_minutes: float = Field(1.0, gt=0)
    drain: bool = True
    fleet: FleetConfig = FleetConfig()
    chargers: ChargerConfig = ChargerConfig()
    matching: MatchingConfig = MatchingConfig()
    charging: ChargingConfig = ChargingConfig()
    dataset: Union[SyntheticDataset, CsvDataset] = Field(SyntheticDataset(), discriminator="kind")
    distance: DistanceConfig = DistanceConfig()

    @model_validator(mode="after")
    def _consistent(self):
        if self.chargers.lower_percentile >= self.chargers.upper_percentile:
            raise ValueError("chargers.lower_percentile must be below upper_percentile")
        ds = self.dataset
        if isinstance(ds, CsvDataset) and ds.lower_percentile >= ds.upper_percentile:
            raise ValueError("dataset.lower_percentile must be below upper_percentile")
        return self

    @property
    def start_minute_of_day(self) -> float:
        t = self.start_datetime
        return t.hour * 60 + t.minute + t.second / 60


def load_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if isinstance(data.get("dataset"), dict) and "path" in data["dataset"]:
        p = Path(data["dataset"]["path"])
        if not p.is_absolute():
            data["dataset"]["path"] = str((path.parent / p).resolve())
    return parse_config(data, overrides)


def parse_config(data: dict, overrides: Optional[dict] = None) -> ScenarioConfig:
    data = dict(data)
    ds = data.get("dataset")
    if isinstance(ds, dict) and "kind" not in ds:
        data["dataset"] = {**ds, "kind": "csv" if "path" in ds else "synthetic"}
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: ScenarioConfig) -> dict:
    return config.model_dump(mode="json")
