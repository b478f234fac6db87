"""Scenario pipeline: dataset -> distance model -> world -> run -> artifacts."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geo
from .charging import ChargerAssignmentRule, ChargerAvailabilityRule, ThresholdSchedule
from .config import CsvDataset, ScenarioConfig, dump_config
from .dispatch import AdaptiveDController, AvailabilityFilter, DispatchPolicy, FeasibilityRule
from .domain import Fleet, Stations, VehicleParams
from .errors import ConfigError
from .ingest import (
    CleaningFilter, RegressionReport, TripTable, arrival_stream, fit_correction_factor,
    generate_poisson_trips, load_trip_records,
)
from .metrics import EventLog, SummaryMetrics, pickup_histogram, state_timeseries, summarize, write_histogram
from .world import ChargingSetup, RunResult, World

log = logging.getLogger(__name__)


def place_initial_vehicles(table: TripTable, fleet_size: int, rng: np.random.Generator):
    """Sample ``fleet_size`` trip origins uniformly with replacement."""
    if len(table) == 0:
        raise ConfigError("cannot place vehicles: trip table is empty")
    idx = rng.integers(0, len(table), size=fleet_size)
    return table.origin_lat[idx].copy(), table.origin_lon[idx].copy()


def place_chargers(count: int, rule: str, rng: np.random.Generator, table: Optional[TripTable] = None,
                   region: Optional[geo.Region] = None, lower_percentile: float = 5.0,
                   upper_percentile: float = 95.0):
    """Charger locations.

    ``sample_from_origins`` draws trip origins lying inside the given
    percentile range of origin latitude and longitude; ``uniform_in_bounding_box``
    draws area-uniform points in ``region`` (or in that percentile box).
    """
    if count <= 0:
        raise ConfigError("charger count must be positive")
    box = region
    if box is None and table is not None and len(table):
        la = np.percentile(table.origin_lat, [lower_percentile, upper_percentile])
        lo = np.percentile(table.origin_lon, [lower_percentile, upper_percentile])
        box = geo.Region(la[0], la[1], lo[0], lo[1])
    if rule == "uniform_in_bounding_box":
        if box is None:
            raise ConfigError("uniform charger placement needs a region or trips")
        return geo.uniform_sphere_points(rng, count, box)
    if rule != "sample_from_origins":
        raise ConfigError(f"unknown charger placement {rule!r}")
    if table is None or len(table) == 0:
        raise ConfigError("charger placement from origins needs trips")
    inside = np.flatnonzero(
        (table.origin_lat >= box.lat_min) & (table.origin_lat <= box.lat_max)
        & (table.origin_lon >= box.lon_min) & (table.origin_lon <= box.lon_max))
    if len(inside) == 0:
        inside = np.arange(len(table))
    pick = rng.choice(inside, size=count, replace=count > len(inside))
    return table.origin_lat[pick].copy(), table.origin_lon[pick].copy()


def build_policy(config: ScenarioConfig) -> DispatchPolicy:
    m = config.matching
    adaptive = None
    if m.adaptive is not None:
        adaptive = AdaptiveDController(
            d_current=int(m.d), review_period_trips=m.adaptive.period,
            idle_high_soc_threshold_fraction=m.adaptive.threshold,
            high_soc_level=m.adaptive.high_soc, fleet_size=config.fleet.size)
    return DispatchPolicy(
        kind=m.kind, d=1.0 if m.kind == "closest" else m.d, filter=AvailabilityFilter(m.filter),
        min_charge_minutes=m.min_charge_minutes, feasibility=FeasibilityRule(m.min_end_soc), adaptive=adaptive)


def build_schedule(spec) -> ThresholdSchedule:
    if spec == "always":
        return ThresholdSchedule.always()
    if spec == "night":
        return ThresholdSchedule.night()
    return ThresholdSchedule([(s.start_minute, s.threshold) for s in spec])


def build_charging(config: ScenarioConfig) -> ChargingSetup:
    c = config.charging
    return ChargingSetup(
        schedule=build_schedule(c.schedule),
        availability=ChargerAvailabilityRule(c.alpha),
        assignment=ChargerAssignmentRule(c.assignment, c.d),
        interrupt=c.interrupt,
        day_origin=config.start_minute_of_day,
    )


def vehicle_params(config: ScenarioConfig) -> VehicleParams:
    f = config.fleet
    return VehicleParams(f.battery_kwh, f.consumption_wh_per_mile, f.charge_rate_kw, f.velocity_mph)


@dataclass
class Dataset:
    table: TripTable
    distance_model: geo.DistanceModel
    regression: Optional[RegressionReport] = None
    rows_in: Optional[int] = None
    rows_kept: Optional[int] = None


def build_dataset(config: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    dcfg = config.distance
    ds = config.dataset
    if isinstance(ds, CsvDataset):
        filt = CleaningFilter(ds.lower_percentile, ds.upper_percentile, ds.window_start, ds.window_end,
                              ds.max_distance)
        table, report = load_trip_records(ds.path, ds.columns, filt, origin=ds.window_start or config.start_datetime)
        regression = None
        factor = dcfg.correction_factor
        if factor == "fit":
            regression = fit_correction_factor(table, dcfg.train_fraction, rng)
            factor = regression.slope
        model = geo.DistanceModel(dcfg.mode, factor)
        keep = (table.arrival >= 0) & (table.arrival <= config.horizon_minutes)
        table = TripTable(*(getattr(table, n)[keep] for n in
                            ("arrival", "origin_lat", "origin_lon", "dest_lat", "dest_lon", "distance", "duration")))
        return Dataset(table, model, regression, report.rows_in, len(table))
    if dcfg.correction_factor == "fit":
        raise ConfigError("correction_factor 'fit' needs a csv dataset with recorded distances")
    model = geo.DistanceModel(dcfg.mode, dcfg.correction_factor)
    table = generate_poisson_trips(ds.rate_per_minute, config.horizon_minutes, ds.region.to_region(), rng,
                                   model, ds.hourly_profile, config.start_minute_of_day)
    return Dataset(table, model)


def build_world(config: ScenarioConfig, dataset: Dataset, rng: np.random.Generator,
                check_invariants: bool = False, strict: bool = True) -> World:
    table = dataset.table
    if config.fleet.placement == "uniform_in_region":
        region = config.dataset.region.to_region() if not isinstance(config.dataset, CsvDataset) else None
        if region is None:
            raise ConfigError("uniform_in_region vehicle placement needs a synthetic dataset region")
        vlat, vlon = geo.uniform_sphere_points(rng, config.fleet.size, region)
    else:
        vlat, vlon = place_initial_vehicles(table, config.fleet.size, rng)
    ch = config.chargers
    slat, slon = place_chargers(ch.count, ch.placement, rng, table,
                                ch.region.to_region() if ch.region else None,
                                ch.lower_percentile, ch.upper_percentile)
    fleet = Fleet(vlat, vlon, config.fleet.initial_soc, vehicle_params(config))
    stations = Stations(slat, slon, ch.posts)
    trips = list(arrival_stream(table, dataset.distance_model))
    return World(trips, fleet, stations, build_policy(config), build_charging(config), dataset.distance_model,
                 rng, config.horizon_minutes, drain=config.drain, check_invariants=check_invariants, strict=strict)


@dataclass
class Simulation:
    """Everything a finished run produced, in memory."""

    config: ScenarioConfig
    dataset: Dataset
    world: World
    result: RunResult
    summary: SummaryMetrics
    runtime_seconds: float

    @property
    def log(self) -> EventLog:
        return self.world.log


def simulate(config: ScenarioConfig, check_invariants: bool = False, strict: bool = True) -> Simulation:
    """Run one scenario without writing anything to disk.

    One generator seeded from ``config.seed`` feeds, in order: dataset
    generation (or the regression split), vehicle placement, charger
    placement, and every draw made during the run.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    dataset = build_dataset(config, rng)
    world = build_world(config, dataset, rng, check_invariants, strict)
    result = world.run()
    summary = summarize(world.log, config.fleet.size, config.horizon_minutes, config.resolution_minutes)
    return Simulation(config, dataset, world, result, summary, time.perf_counter() - t0)


@dataclass
class RunManifest:
    config: dict
    seed: int
    dataset_rows: int
    dataset_hash: str
    runtime_seconds: float
    events_processed: int
    final_time: float
    artifacts: dict = field(default_factory=dict)
    regression: Optional[dict] = None
    d_trajectory: list = field(default_factory=list)
    invariant_violations: int = 0
    alpha_bound_violations: int = 0

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")
        return path


def write_artifacts(sim: Simulation, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = sim.config
    paths = {
        "summary": sim.summary.to_json(out / "summary.json"),
        "events": sim.log.to_csv(out / "events.csv"),
        "timeseries": state_timeseries(sim.log, cfg.resolution_minutes, cfg.horizon_minutes,
                                       cfg.fleet.size).to_csv(out / "timeseries.csv"),
        "pickup_hist": write_histogram(*pickup_histogram(sim.log, 1.0), out / "pickup_hist.csv"),
        "chargers": _write_chargers(sim.world.stations, out / "chargers.csv"),
    }
    return {k: str(v) for k, v in paths.items()}


def _write_chargers(stations: Stations, path) -> Path:
    path = Path(path)
    lines = ["station_id,lat,lon,posts"]
    lines += [f"{i},{stations.lat[i]!r},{stations.lon[i]!r},{int(stations.posts[i])}" for i in range(len(stations))]
    path.write_text("\n".join(lines) + "\n")
    return path


def run_scenario(config: ScenarioConfig, out_dir, check_invariants: bool = False) -> RunManifest:
    sim = simulate(config, check_invariants=check_invariants)
    artifacts = write_artifacts(sim, out_dir)
    manifest = RunManifest(
        config=dump_config(config),
        seed=config.seed,
        dataset_rows=len(sim.dataset.table),
        dataset_hash=sim.dataset.table.fingerprint(),
        runtime_seconds=round(sim.runtime_seconds, 3),
        events_processed=sim.result.stats.events_processed,
        final_time=sim.result.stats.final_time,
        artifacts=artifacts,
        regression=asdict(sim.dataset.regression) if sim.dataset.regression else None,
        d_trajectory=[list(x) for x in sim.result.d_trajectory],
        invariant_violations=len(sim.result.invariant_violations),
        alpha_bound_violations=sim.result.alpha_bound_violations,
    )
    manifest.artifacts["manifest"] = str(manifest.to_json(Path(out_dir) / "manifest.json"))
    manifest.to_json(Path(out_dir) / "manifest.json")
    return manifest


def _sweep_one(args):
    config, out_dir, check = args
    return asdict(run_scenario(config, out_dir, check))


def run_sweep(configs: list[ScenarioConfig], out_root, workers: int = 1, check_invariants: bool = False) -> list[dict]:
    """Independent runs, one per config, each in ``out_root/run_<i>_seed<seed>``."""
    jobs = [(c, Path(out_root) / f"run_{i:03d}_seed{c.seed}", check_invariants) for i, c in enumerate(configs)]
    if workers <= 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, jobs))
