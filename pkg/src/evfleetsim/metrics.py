"""Event log and the performance metrics computed from it.

Everything here is post-hoc: metrics are pure functions of an ``EventLog``
so they can be recomputed from ``events.csv`` alone.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .domain import VehicleState

STATE_NAMES = [s.name for s in VehicleState]
_STATE_CODE = {s.name: int(s) for s in VehicleState}


class EventRecord(NamedTuple):
    time: float
    entity: str  # "vehicle" | "trip"
    id: int
    event: str
    state: str
    soc: float
    lat: float
    lon: float
    miles: float  # vehicle: miles driven committed here; trip: distance
    minutes: float  # vehicle: minutes of charge credited here; trip: planned duration
    ref: int  # vehicle: trip/station id; trip: vehicle id


FIELDS = EventRecord._fields

# vehicle events
INIT = "INIT"
DISPATCH = "DISPATCH"
PICKUP = "PICKUP"
DROPOFF = "DROPOFF"
TO_CHARGER = "TO_CHARGER"
ARRIVE_CHARGER = "ARRIVE_CHARGER"
START_CHARGE = "START_CHARGE"
END_CHARGE = "END_CHARGE"
INTERRUPT = "INTERRUPT"
SNAPSHOT = "SNAPSHOT"
# trip events
ARRIVAL = "ARRIVAL"
MATCHED = "MATCHED"
RENEGED = "RENEGED"
UNAVAILABLE = "UNAVAILABLE"

NAN = float("nan")


class EventLog:
    """Append-only, time-ordered list of ``EventRecord``."""

    def __init__(self, records=None):
        self.records: list[EventRecord] = list(records or [])

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, rec: EventRecord) -> None:
        if self.records and rec.time < self.records[-1].time:
            raise ValueError(f"event log time went backwards: {rec.time} < {self.records[-1].time}")
        self.records.append(rec)

    def vehicle(self, time, vid, event, state, soc, lat, lon, miles=0.0, minutes=0.0, ref=-1):
        self.append(EventRecord(time, "vehicle", vid, event, state, soc, lat, lon, miles, minutes, ref))

    def trip(self, time, tid, event, state, miles=NAN, minutes=NAN, ref=-1):
        self.append(EventRecord(time, "trip", tid, event, state, NAN, NAN, NAN, miles, minutes, ref))

    def select(self, entity=None, event=None) -> list[EventRecord]:
        return [r for r in self.records
                if (entity is None or r.entity == entity) and (event is None or r.event == event)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for r in self.records:
                w.writerow([_fmt(x) for x in r])
        return path

    @classmethod
    def from_csv(cls, path) -> "EventLog":
        recs = []
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                recs.append(EventRecord(
                    float(row["time"]), row["entity"], int(row["id"]), row["event"], row["state"],
                    float(row["soc"]), float(row["lat"]), float(row["lon"]),
                    float(row["miles"]), float(row["minutes"]), int(row["ref"])))
        return cls(recs)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _trips(log: EventLog):
    """Per-trip dict of event -> record."""
    trips: dict[int, dict[str, EventRecord]] = {}
    for r in log.records:
        if r.entity == "trip":
            trips.setdefault(r.id, {})[r.event] = r
    return trips


def service_level(log: EventLog) -> Optional[float]:
    trips = _trips(log)
    n = sum(1 for t in trips.values() if ARRIVAL in t)
    if n == 0:
        return None
    return sum(1 for t in trips.values() if DROPOFF in t) / n


def workload_served(log: EventLog) -> Optional[float]:
    trips = _trips(log)
    total = sum(t[ARRIVAL].miles for t in trips.values() if ARRIVAL in t)
    if total <= 0:
        return None
    served = sum(t[ARRIVAL].miles for t in trips.values() if DROPOFF in t and ARRIVAL in t)
    return served / total


def trips_to_charger_rate(log: EventLog, fleet_size: int, horizon_minutes: float) -> float:
    n = sum(1 for r in log.records if r.entity == "vehicle" and r.event == TO_CHARGER and r.time <= horizon_minutes)
    return n / (fleet_size * horizon_minutes / 60.0)


def _vehicle_arrays(log: EventLog):
    recs = [r for r in log.records if r.entity == "vehicle"]
    t = np.array([r.time for r in recs], dtype=float)
    vid = np.array([r.id for r in recs], dtype=np.int64)
    state = np.array([_STATE_CODE[r.state] for r in recs], dtype=np.int64)
    soc = np.array([r.soc for r in recs], dtype=float)
    return t, vid, state, soc


def sample_times(horizon_minutes: float, resolution: float) -> np.ndarray:
    n = int(math.ceil(horizon_minutes / resolution - 1e-9))
    return np.arange(n) * resolution


def _soc_at_samples(t, vid, soc, samples, fleet_size):
    """Fleet-mean SoC at each sample, linear between consecutive commits per vehicle."""
    total = np.zeros(len(samples))
    order = np.lexsort((np.arange(len(t)), vid))
    t, vid, soc = t[order], vid[order], soc[order]
    for v in range(fleet_size):
        lo, hi = np.searchsorted(vid, [v, v + 1])
        tv, sv = t[lo:hi], soc[lo:hi]
        if len(tv) == 0:
            continue
        # last record at each timestamp wins; np.interp needs increasing x
        keep = np.append(tv[1:] != tv[:-1], True)
        tv, sv = tv[keep], sv[keep]
        val = np.interp(samples, tv, sv)
        val[samples < tv[0]] = np.nan
        total += np.nan_to_num(val)
    return total / fleet_size


def time_avg_soc(log: EventLog, resolution: float, horizon_minutes: float, fleet_size: int) -> float:
    t, vid, _, soc = _vehicle_arrays(log)
    samples = sample_times(horizon_minutes, resolution)
    return float(_soc_at_samples(t, vid, soc, samples, fleet_size).mean())


@dataclass
class StateTimeseries:
    time: np.ndarray
    counts: np.ndarray  # (samples, 6), columns in VehicleState order
    avg_soc: np.ndarray
    active_trips: np.ndarray

    def rows(self):
        for i, t in enumerate(self.time):
            yield [t, *self.counts[i].tolist(), self.avg_soc[i], int(self.active_trips[i])]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", *STATE_NAMES, "avg_soc", "potential_active_trips"])
            for row in self.rows():
                w.writerow([_fmt(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
        return path


def state_timeseries(log: EventLog, resolution: float, horizon_minutes: float, fleet_size: int) -> StateTimeseries:
    t, vid, state, soc = _vehicle_arrays(log)
    samples = sample_times(horizon_minutes, resolution)
    # each record moves one vehicle from its previous state to ``state``
    prev = np.full(len(t), -1, dtype=np.int64)
    last = np.full(fleet_size, -1, dtype=np.int64)
    for i in range(len(t)):
        prev[i] = last[vid[i]]
        last[vid[i]] = state[i]
    delta = np.zeros((len(t), len(VehicleState)), dtype=np.int64)
    delta[np.arange(len(t)), state] += 1
    has_prev = prev >= 0
    delta[np.flatnonzero(has_prev), prev[has_prev]] -= 1
    cum = np.vstack([np.zeros((1, len(VehicleState)), dtype=np.int64), np.cumsum(delta, axis=0)])
    idx = np.searchsorted(t, samples, side="right")
    counts = cum[idx]
    avg = _soc_at_samples(t, vid, soc, samples, fleet_size)
    trips = _trips(log)
    starts = np.array([tr[ARRIVAL].time for tr in trips.values() if ARRIVAL in tr])
    ends = starts + np.array([tr[ARRIVAL].minutes for tr in trips.values() if ARRIVAL in tr])
    if len(starts):
        s_sorted, e_sorted = np.sort(starts), np.sort(ends)
        active = np.searchsorted(s_sorted, samples, "right") - np.searchsorted(e_sorted, samples, "right")
    else:
        active = np.zeros(len(samples), dtype=np.int64)
    return StateTimeseries(samples, counts, avg, active)


def pickup_times(log: EventLog) -> np.ndarray:
    """Dispatch-to-pickup minutes for every picked-up trip."""
    out = [tr[PICKUP].time - tr[MATCHED].time for tr in _trips(log).values() if PICKUP in tr and MATCHED in tr]
    return np.array(out, dtype=float)


def pickup_histogram(log: EventLog, bin_width_min: float = 1.0, max_minutes: Optional[float] = None):
    """Returns (bin_edges, counts) over [0, max) with bins [k*w, (k+1)*w)."""
    pt = pickup_times(log)
    top = max_minutes if max_minutes is not None else (pt.max() if len(pt) else 0.0)
    nbins = max(1, int(math.floor(top / bin_width_min)) + 1)
    edges = np.arange(nbins + 1) * bin_width_min
    k = np.floor(pt / bin_width_min).astype(np.int64)
    k = k[(k >= 0) & (k < nbins)]
    counts = np.bincount(k, minlength=nbins)
    return edges, counts


def write_histogram(edges, counts, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_start", "bin_end", "count"])
        for i, c in enumerate(counts):
            w.writerow([_fmt(float(edges[i])), _fmt(float(edges[i + 1])), int(c)])
    return path


def charger_drive_times(log: EventLog) -> np.ndarray:
    start: dict[int, float] = {}
    out = []
    for r in log.records:
        if r.entity != "vehicle":
            continue
        if r.event == TO_CHARGER:
            start[r.id] = r.time
        elif r.event == ARRIVE_CHARGER and r.id in start:
            out.append(r.time - start.pop(r.id))
        elif r.event == INTERRUPT:
            start.pop(r.id, None)
    return np.array(out, dtype=float)


@dataclass
class SummaryMetrics:
    avg_trip_time_min: Optional[float]
    avg_trip_distance_mi: Optional[float]
    avg_pickup_time_min: Optional[float]
    avg_time_to_charger_min: Optional[float]
    trips_to_charger_per_car_per_hour: float
    time_avg_soc: float
    service_level_fraction: Optional[float]
    workload_served_fraction: Optional[float]
    arrivals: int
    served: int
    dropped: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _mean(a) -> Optional[float]:
    return float(np.mean(a)) if len(a) else None


def summarize(log: EventLog, fleet_size: int, horizon_minutes: float, resolution: float = 1.0) -> SummaryMetrics:
    trips = _trips(log)
    done = [tr for tr in trips.values() if DROPOFF in tr]
    arrivals = sum(1 for tr in trips.values() if ARRIVAL in tr)
    return SummaryMetrics(
        avg_trip_time_min=_mean([tr[DROPOFF].time - tr[PICKUP].time for tr in done]),
        avg_trip_distance_mi=_mean([tr[ARRIVAL].miles for tr in done]),
        avg_pickup_time_min=_mean(pickup_times(log)),
        avg_time_to_charger_min=_mean(charger_drive_times(log)),
        trips_to_charger_per_car_per_hour=trips_to_charger_rate(log, fleet_size, horizon_minutes),
        time_avg_soc=time_avg_soc(log, resolution, horizon_minutes, fleet_size),
        service_level_fraction=service_level(log),
        workload_served_fraction=workload_served(log),
        arrivals=arrivals,
        served=len(done),
        dropped=sum(1 for tr in trips.values() if RENEGED in tr or UNAVAILABLE in tr),
    )
