"""Trip-to-vehicle matching.

Matching is a two-stage decision: an availability filter picks which
vehicles may be dispatched at all, then a selection rule picks one of them
(or drops the trip). Candidates are ranked by corrected pickup distance,
then SoC descending, then vehicle id.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import Fleet, TripRequest, VehicleState as VS

DROP = None


class AvailabilityFilter(enum.Enum):
    ONLY_IDLE = "only_idle"
    IDLE_CHARGING_WAITING = "idle_charging_waiting"
    IDLE_CHARGING_WAITING_DRIVING = "idle_charging_waiting_driving"
    MIN_CHARGE_TIME = "min_charge_time"


_FILTER_STATES = {
    AvailabilityFilter.ONLY_IDLE: (VS.IDLE,),
    AvailabilityFilter.IDLE_CHARGING_WAITING: (VS.IDLE, VS.CHARGING, VS.WAITING_FOR_CHARGER),
    AvailabilityFilter.IDLE_CHARGING_WAITING_DRIVING: (
        VS.IDLE, VS.CHARGING, VS.WAITING_FOR_CHARGER, VS.DRIVING_TO_CHARGER),
}


def available_vehicles(fleet: Fleet, filt: AvailabilityFilter, now: float, min_charge_minutes: float = 10.0) -> np.ndarray:
    """Ids (ascending) of vehicles eligible for dispatch under ``filt``."""
    st = fleet.state
    if filt is AvailabilityFilter.MIN_CHARGE_TIME:
        charged = (st == VS.CHARGING) & (now - fleet.charging_since >= min_charge_minutes)
        return np.flatnonzero((st == VS.IDLE) | charged)
    states = _FILTER_STATES[filt]
    mask = st == states[0]
    for s in states[1:]:
        mask |= st == s
    return np.flatnonzero(mask)


@dataclass
class Candidates:
    """Dispatch candidates for one trip, in ranked order (nearest first)."""

    ids: np.ndarray
    distance: np.ndarray
    soc: np.ndarray
    feasible: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.distance = np.asarray(self.distance, dtype=float)
        self.soc = np.asarray(self.soc, dtype=float)
        self.feasible = np.asarray(self.feasible, dtype=bool)
        order = np.lexsort((self.ids, -self.soc, self.distance))
        for name in ("ids", "distance", "soc", "feasible"):
            setattr(self, name, getattr(self, name)[order])

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class FeasibilityRule:
    """A vehicle is feasible iff its SoC covers pickup plus trip with ``min_end_soc`` left."""

    min_end_soc: float = 0.0

    def check(self, soc, pickup_drop, trip_drop):
        return soc - pickup_drop - trip_drop >= self.min_end_soc - 1e-12


def build_candidates(fleet: Fleet, ids: np.ndarray, trip: TripRequest, now: float, distance_model,
                     feasibility: FeasibilityRule) -> Candidates:
    lat, lon, soc = fleet.effective_positions(ids, now)
    dist = distance_model.many(lat, lon, trip.origin[0], trip.origin[1])
    p = fleet.params
    per_mile = p.consumption_wh_per_mile / (p.battery_kwh * 1000.0)
    feasible = feasibility.check(soc, dist * per_mile, p.soc_drop(trip.trip_distance))
    return Candidates(ids, dist, soc, feasible)


def effective_d(d: float, rng: np.random.Generator) -> int:
    """floor(d) with probability ceil(d) - d, else ceil(d)."""
    lo, hi = math.floor(d), math.ceil(d)
    if lo == hi:
        return int(lo)
    return int(lo) if rng.random() < hi - d else int(hi)


def power_of_d(cands: Candidates, k: int) -> Optional[int]:
    """Highest-SoC feasible vehicle among the ``k`` nearest; DROP if none."""
    k = min(k, len(cands))
    if k == 0:
        return DROP
    ok = np.flatnonzero(cands.feasible[:k])
    if len(ok) == 0:
        return DROP
    # argmax takes the first maximum, i.e. the nearest (then lowest id) among equal SoC
    best = ok[np.argmax(cands.soc[ok])]
    return int(cands.ids[best])


def power_of_d_dispatch(trip, candidates: Candidates, d: float, feasibility=None, rng=None) -> Optional[int]:
    return power_of_d(candidates, effective_d(d, rng))


def closest_dispatch(trip, candidates: Candidates, feasibility=None) -> Optional[int]:
    return power_of_d(candidates, 1)


def closest_available_dispatch(trip, candidates: Candidates, feasibility=None) -> Optional[int]:
    """Nearest feasible candidate (ties: higher SoC, lower id); DROP if none."""
    ok = np.flatnonzero(candidates.feasible)
    if len(ok) == 0:
        return DROP
    return int(candidates.ids[ok[0]])


@dataclass
class AdaptiveDController:
    """Adjusts d by one step every ``review_period_trips`` arrivals.

    d goes up when idle high-SoC vehicles averaged more than
    ``idle_high_soc_threshold_fraction`` of the fleet while trips were being
    dropped; it goes down when there were none at all.
    """

    d_current: int = 5
    review_period_trips: int = 1000
    idle_high_soc_threshold_fraction: float = 0.05
    high_soc_level: float = 0.8
    fleet_size: int = 1
    _idle_sum: float = 0.0
    _samples: int = 0
    _drops: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.d_current = max(1, int(self.d_current))

    def observe(self, idle_high_soc: int, dropped: bool) -> Optional[int]:
        """Record one arrival; returns the new d when a review boundary is reached."""
        self._idle_sum += idle_high_soc
        self._samples += 1
        self._drops += int(dropped)
        if self._samples >= self.review_period_trips:
            return self.review()
        return None

    def review(self) -> int:
        avg = self._idle_sum / self._samples if self._samples else 0.0
        new = adaptive_review(self, avg, self._drops, self.fleet_size)
        self.history.append((avg, self._drops, self.d_current, new))
        self.d_current = new
        self._idle_sum, self._samples, self._drops = 0.0, 0, 0
        return new


def adaptive_review(controller: AdaptiveDController, avg_idle_high_soc_count: float, drops_in_window: int,
                    fleet_size: int) -> int:
    d = controller.d_current
    if avg_idle_high_soc_count > controller.idle_high_soc_threshold_fraction * fleet_size and drops_in_window > 0:
        return d + 1
    if avg_idle_high_soc_count == 0 and d > 1:
        return d - 1
    return d


@dataclass
class DispatchPolicy:
    kind: str = "power_of_d"  # closest | closest_available | power_of_d
    d: float = 1.0
    filter: AvailabilityFilter = AvailabilityFilter.IDLE_CHARGING_WAITING
    min_charge_minutes: float = 10.0
    feasibility: FeasibilityRule = FeasibilityRule()
    adaptive: Optional[AdaptiveDController] = None

    @property
    def current_d(self) -> float:
        if self.kind == "closest":
            return 1
        if self.adaptive is not None:
            return self.adaptive.d_current
        return self.d

    def select(self, cands: Candidates, rng: np.random.Generator) -> tuple[Optional[int], int]:
        """Returns (vehicle id or DROP, number of candidates evaluated)."""
        if self.kind == "closest_available":
            return closest_available_dispatch(None, cands), len(cands)
        k = effective_d(self.current_d, rng)
        return power_of_d(cands, k), min(k, len(cands))
