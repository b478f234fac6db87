"""Charging sweep run on every arrival: which idle vehicles go to charge, and where."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Fleet, Stations, VehicleState as VS
from .errors import ConfigError

DAY_MINUTES = 1440.0


class ThresholdSchedule:
    """Piecewise-constant map from minute-of-day to the charging threshold C(t)."""

    def __init__(self, steps: Sequence[tuple[float, float]]):
        steps = sorted((float(s), float(c)) for s, c in steps)
        if not steps or steps[0][0] != 0.0:
            raise ConfigError("schedule must start at minute 0")
        for s, c in steps:
            if not 0 <= s < DAY_MINUTES or not 0 <= c <= 1:
                raise ConfigError(f"bad schedule step ({s}, {c})")
        self.starts = [s for s, _ in steps]
        self.values = [c for _, c in steps]

    def at_minute_of_day(self, m: float) -> float:
        return self.values[bisect.bisect_right(self.starts, m % DAY_MINUTES) - 1]

    @classmethod
    def always(cls, level: float = 0.95) -> "ThresholdSchedule":
        return cls([(0.0, level)])

    @classmethod
    def night(cls, day_level: float = 0.4, night_level: float = 0.95) -> "ThresholdSchedule":
        # daytime is 6 am - 11 pm
        return cls([(0.0, night_level), (360.0, day_level), (1380.0, night_level)])

    def __repr__(self):
        return f"ThresholdSchedule({list(zip(self.starts, self.values))})"


ALWAYS = ThresholdSchedule.always()
NIGHT = ThresholdSchedule.night()


def threshold_at(time: float, schedule: ThresholdSchedule, day_origin: float = 0.0) -> float:
    """C at simulated minute ``time`` when t=0 falls at minute ``day_origin`` of the day."""
    return schedule.at_minute_of_day(time + day_origin)


def select_vehicles_for_charging(fleet: Fleet, now: float, schedule: ThresholdSchedule,
                                 day_origin: float = 0.0) -> np.ndarray:
    c = threshold_at(now, schedule, day_origin)
    return np.flatnonzero((fleet.state == VS.IDLE) & (fleet.soc <= c))


@dataclass(frozen=True)
class ChargerAvailabilityRule:
    alpha: float = 1.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must be in [0, 1]")

    def mask(self, posts, occupancy, inbound) -> np.ndarray:
        return (posts - occupancy) > self.alpha * inbound


def charger_available(station, rule: ChargerAvailabilityRule) -> bool:
    return bool(rule.mask(station.posts, station.occupancy, station.inbound_count))


@dataclass(frozen=True)
class ChargerAssignmentRule:
    kind: str = "closest_available"  # or power_of_d
    d_chargers: int = 2

    def __post_init__(self):
        if self.kind not in ("closest_available", "power_of_d"):
            raise ConfigError(f"unknown charger assignment {self.kind!r}")
        if self.d_chargers < 1:
            raise ConfigError("d_chargers must be >= 1")


@dataclass(frozen=True)
class Pairing:
    vehicle: int
    station: int
    distance: float
    end_soc: float = 1.0


def assign_chargers(selected, fleet: Fleet, stations: Stations, assignment: ChargerAssignmentRule,
                    availability: ChargerAvailabilityRule, distance_model) -> list[Pairing]:
    """Pair vehicles (in id order) with stations.

    Inbound counts are tracked locally so each pairing is visible to the
    next one in the same sweep. A station the vehicle cannot reach on its
    remaining charge counts as unavailable for that vehicle.
    """
    selected = np.sort(np.asarray(selected, dtype=np.int64))
    if len(selected) == 0 or len(stations) == 0:
        return []
    inbound = stations.inbound.copy()
    posts, occ = stations.posts, stations.occupancy
    avail = availability.mask(posts, occ, inbound)
    p = fleet.params
    range_miles = fleet.soc * p.battery_kwh * 1000.0 / p.consumption_wh_per_mile
    # availability only shrinks within a sweep, so nothing pairs once it is gone
    if not avail.any():
        return []
    dists = distance_model.many(fleet.lat[selected, None], fleet.lon[selected, None],
                                stations.lat[None, :], stations.lon[None, :])
    orders = np.argsort(dists, axis=1, kind="stable")
    if assignment.kind == "power_of_d":
        orders = orders[:, :assignment.d_chargers]
    reach = dists <= range_miles[selected, None] + 1e-12
    # vehicles with no reachable available station now never get one later in the sweep
    keep = np.take_along_axis(reach & avail[None, :], orders, axis=1).any(axis=1)
    pairs = []
    for v, dist, order, r in zip(selected[keep], dists[keep], orders[keep], reach[keep]):
        if not avail.any():
            break
        ok = order[avail[order] & r[order]]
        if len(ok) == 0:
            continue
        s = int(ok[0])
        pairs.append(Pairing(int(v), s, float(dist[s])))
        inbound[s] += 1
        avail[s] = availability.mask(posts[s], occ[s], inbound[s])
    return pairs
