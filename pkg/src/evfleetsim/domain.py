"""Fleet entities and their state machines.

Vehicles and stations are stored column-wise (numpy arrays) so dispatch and
charger selection can work on the whole fleet at once. ``Vehicle`` and
``ChargingStation`` are thin views onto one row.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geo
from .errors import SimulationError


class VehicleState(enum.IntEnum):
    IDLE = 0
    DRIVING_WITHOUT_PASSENGER = 1
    DRIVING_WITH_PASSENGER = 2
    DRIVING_TO_CHARGER = 3
    WAITING_FOR_CHARGER = 4
    CHARGING = 5


class StationState(enum.IntEnum):
    AVAILABLE = 0
    BUSY = 1


class TripState(enum.Enum):
    WAITING = "WAITING"
    MATCHED = "MATCHED"
    RENEGED = "RENEGED"
    UNAVAILABLE = "UNAVAILABLE"


VS = VehicleState

LEGAL_TRANSITIONS = frozenset({
    (VS.IDLE, VS.DRIVING_WITHOUT_PASSENGER),
    (VS.DRIVING_WITHOUT_PASSENGER, VS.DRIVING_WITH_PASSENGER),
    (VS.DRIVING_WITH_PASSENGER, VS.IDLE),
    (VS.IDLE, VS.DRIVING_TO_CHARGER),
    (VS.DRIVING_TO_CHARGER, VS.WAITING_FOR_CHARGER),
    (VS.WAITING_FOR_CHARGER, VS.CHARGING),
    (VS.CHARGING, VS.IDLE),
    # interrupts
    (VS.DRIVING_TO_CHARGER, VS.IDLE),
    (VS.WAITING_FOR_CHARGER, VS.IDLE),
})

INTERRUPTIBLE = frozenset({VS.DRIVING_TO_CHARGER, VS.WAITING_FOR_CHARGER, VS.CHARGING})


@dataclass(frozen=True)
class VehicleParams:
    battery_kwh: float = 51.25
    consumption_wh_per_mile: float = 230.0
    charge_rate_kw: float = 20.0
    velocity_mph: float = 11.21

    def soc_drop(self, distance: float) -> float:
        return geo.soc_drop(distance, self.battery_kwh, self.consumption_wh_per_mile)

    def charge_minutes(self, from_soc: float, to_soc: float) -> float:
        return geo.charge_duration_minutes(from_soc, to_soc, self.battery_kwh, self.charge_rate_kw)

    def charge_gain(self, minutes: float) -> float:
        return geo.charge_gain(minutes, self.battery_kwh, self.charge_rate_kw)

    def travel_minutes(self, distance: float) -> float:
        return geo.travel_time_minutes(distance, self.velocity_mph)


@dataclass(eq=False)
class TripRequest:
    id: int
    origin: geo.GeoPoint
    destination: geo.GeoPoint
    arrival_time: float
    trip_distance: float
    duration: Optional[float] = None
    state: TripState = TripState.WAITING
    matched_vehicle: Optional[int] = None
    dispatch_time: Optional[float] = None
    pickup_time: Optional[float] = None
    completion_time: Optional[float] = None
    candidates_considered: int = 0


class Fleet:
    """Column store for every vehicle in a world.

    Besides committed location/SoC, each row carries the parameters of its
    current leg or charge so an interrupt (or a dispatch what-if) can
    reconstruct where the vehicle would be right now.
    """

    def __init__(self, lats, lons, soc, params: VehicleParams):
        n = len(lats)
        self.params = params
        self.lat = np.array(lats, dtype=float)
        self.lon = np.array(lons, dtype=float)
        self.soc = np.broadcast_to(np.asarray(soc, dtype=float), (n,)).copy()
        self.state = np.zeros(n, dtype=np.int8)
        self.station = np.full(n, -1, dtype=np.int64)
        self.charging_since = np.full(n, np.nan)
        self.end_soc = np.ones(n)
        # current driving leg: start time, duration, endpoints, miles
        self.leg_start = np.full(n, np.nan)
        self.leg_duration = np.zeros(n)
        self.leg_from_lat = np.zeros(n)
        self.leg_from_lon = np.zeros(n)
        self.leg_to_lat = np.zeros(n)
        self.leg_to_lon = np.zeros(n)
        self.leg_miles = np.zeros(n)
        self.process = [None] * n
        self.ids = np.arange(n)
        self.vehicles = [Vehicle(self, i) for i in range(n)]

    def __len__(self):
        return len(self.lat)

    def __getitem__(self, i) -> "Vehicle":
        return self.vehicles[i]

    def __iter__(self):
        return iter(self.vehicles)

    def state_counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=len(VehicleState))

    def effective_positions(self, idx, now: float, include_trip_legs: bool = False):
        """Location and SoC of vehicles ``idx`` as if interrupted at ``now``.

        Trip legs are never interrupted; ``include_trip_legs`` interpolates
        them too, for reporting.
        """
        lat = self.lat[idx].copy()
        lon = self.lon[idx].copy()
        soc = self.soc[idx].copy()
        st = self.state[idx]
        p = self.params
        moving = st == VS.DRIVING_TO_CHARGER
        if include_trip_legs:
            moving |= (st == VS.DRIVING_WITHOUT_PASSENGER) | (st == VS.DRIVING_WITH_PASSENGER)
        drv = np.flatnonzero(moving)
        if len(drv):
            j = idx[drv]
            f = _leg_fraction(now - self.leg_start[j], self.leg_duration[j])
            lat[drv] = self.leg_from_lat[j] + f * (self.leg_to_lat[j] - self.leg_from_lat[j])
            lon[drv] = self.leg_from_lon[j] + f * (self.leg_to_lon[j] - self.leg_from_lon[j])
            soc[drv] = np.maximum(soc[drv] - f * self.leg_miles[j] * p.consumption_wh_per_mile / (p.battery_kwh * 1000.0), 0.0)
        chg = np.flatnonzero(st == VS.CHARGING)
        if len(chg):
            j = idx[chg]
            gain = (now - self.charging_since[j]) * p.charge_rate_kw / (60.0 * p.battery_kwh)
            soc[chg] = np.minimum(soc[chg] + gain, self.end_soc[j])
        return lat, lon, soc


def _leg_fraction(elapsed, duration):
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(duration > 0, elapsed / np.where(duration > 0, duration, 1.0), 1.0)
    return np.clip(f, 0.0, 1.0)


def leg_fraction(elapsed: float, duration: float) -> float:
    if duration <= 0:
        return 1.0
    return min(max(elapsed / duration, 0.0), 1.0)


class Vehicle:
    __slots__ = ("fleet", "id")

    def __init__(self, fleet: Fleet, i: int):
        self.fleet = fleet
        self.id = i

    @property
    def location(self) -> geo.GeoPoint:
        return geo.GeoPoint(float(self.fleet.lat[self.id]), float(self.fleet.lon[self.id]))

    @location.setter
    def location(self, p):
        self.fleet.lat[self.id] = p[0]
        self.fleet.lon[self.id] = p[1]

    @property
    def soc(self) -> float:
        return float(self.fleet.soc[self.id])

    @soc.setter
    def soc(self, value: float):
        if not -geo.SOC_EPS <= value <= 1 + geo.SOC_EPS:
            raise SimulationError(f"vehicle {self.id}: SoC {value} outside [0, 1]")
        self.fleet.soc[self.id] = min(max(value, 0.0), 1.0)

    @property
    def state(self) -> VehicleState:
        return VehicleState(int(self.fleet.state[self.id]))

    @property
    def station(self) -> int:
        return int(self.fleet.station[self.id])

    @property
    def charging_since(self) -> Optional[float]:
        v = self.fleet.charging_since[self.id]
        return None if np.isnan(v) else float(v)

    @property
    def active_process(self):
        return self.fleet.process[self.id]

    @property
    def params(self) -> VehicleParams:
        return self.fleet.params

    def __repr__(self):
        return f"Vehicle({self.id}, {self.state.name}, soc={self.soc:.4f})"


def transition(vehicle: Vehicle, new_state: VehicleState) -> None:
    old = vehicle.state
    if (old, new_state) not in LEGAL_TRANSITIONS:
        raise SimulationError(f"vehicle {vehicle.id}: illegal transition {old.name} -> {new_state.name}")
    vehicle.fleet.state[vehicle.id] = new_state


class Stations:
    """Column store for charging stations; each has one FIFO queue of (vehicle, end_soc)."""

    def __init__(self, lats, lons, posts):
        n = len(lats)
        self.lat = np.array(lats, dtype=float)
        self.lon = np.array(lons, dtype=float)
        self.posts = np.broadcast_to(np.asarray(posts, dtype=np.int64), (n,)).copy()
        if (self.posts <= 0).any():
            raise SimulationError("every station needs at least one post")
        self.occupancy = np.zeros(n, dtype=np.int64)
        self.inbound = np.zeros(n, dtype=np.int64)
        self.state = np.zeros(n, dtype=np.int8)
        self.queues = [deque() for _ in range(n)]
        self.stations = [ChargingStation(self, i) for i in range(n)]

    def __len__(self):
        return len(self.lat)

    def __getitem__(self, i) -> "ChargingStation":
        return self.stations[i]

    def __iter__(self):
        return iter(self.stations)


class ChargingStation:
    __slots__ = ("table", "id")

    def __init__(self, table: Stations, i: int):
        self.table = table
        self.id = i

    @property
    def location(self) -> geo.GeoPoint:
        return geo.GeoPoint(float(self.table.lat[self.id]), float(self.table.lon[self.id]))

    @property
    def posts(self) -> int:
        return int(self.table.posts[self.id])

    @property
    def occupancy(self) -> int:
        return int(self.table.occupancy[self.id])

    @occupancy.setter
    def occupancy(self, value: int):
        if not 0 <= value <= self.posts:
            raise SimulationError(f"station {self.id}: occupancy {value} outside [0, {self.posts}]")
        self.table.occupancy[self.id] = value

    @property
    def inbound_count(self) -> int:
        return int(self.table.inbound[self.id])

    @inbound_count.setter
    def inbound_count(self, value: int):
        if value < 0:
            raise SimulationError(f"station {self.id}: negative inbound count")
        self.table.inbound[self.id] = value

    @property
    def queue(self) -> deque:
        return self.table.queues[self.id]

    @property
    def state(self) -> StationState:
        return StationState(int(self.table.state[self.id]))

    @property
    def busy(self) -> bool:
        return self.state is StationState.BUSY

    def __repr__(self):
        return (f"ChargingStation({self.id}, occupancy={self.occupancy}/{self.posts}, "
                f"queue={len(self.queue)}, inbound={self.inbound_count})")


def station_set_busy_or_available(station: ChargingStation) -> None:
    busy = station.occupancy >= station.posts
    station.table.state[station.id] = StationState.BUSY if busy else StationState.AVAILABLE
