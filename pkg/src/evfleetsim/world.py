"""The simulated fleet: arrival handling and the vehicle/charger processes.

Every customer arrival runs the matching algorithm and then the charging
sweep. Vehicle activities are generator processes on the kernel; location
and SoC are committed only when an activity completes or is interrupted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geo
from .charging import (
    ChargerAssignmentRule, ChargerAvailabilityRule, ThresholdSchedule, assign_chargers,
    select_vehicles_for_charging,
)
from .dispatch import (
    AvailabilityFilter, DispatchPolicy, available_vehicles, build_candidates,
)
from .domain import (
    INTERRUPTIBLE, Fleet, Stations, TripRequest, TripState, VehicleParams, VehicleState as VS,
    leg_fraction, station_set_busy_or_available, transition,
)
from .errors import SimulationError
from .kernel import Interrupt, Kernel, KernelStats
from .metrics import (
    ARRIVAL, ARRIVE_CHARGER, DISPATCH, DROPOFF, END_CHARGE, INIT, INTERRUPT, MATCHED, PICKUP,
    RENEGED, SNAPSHOT, START_CHARGE, TO_CHARGER, UNAVAILABLE, EventLog,
)

log = logging.getLogger(__name__)


@dataclass
class ChargingSetup:
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule.always)
    availability: ChargerAvailabilityRule = ChargerAvailabilityRule(1.0)
    assignment: ChargerAssignmentRule = ChargerAssignmentRule()
    interrupt: bool = True
    day_origin: float = 0.0  # minute of day at t = 0


@dataclass
class RunResult:
    stats: KernelStats
    horizon: float
    d_trajectory: list
    invariant_violations: list
    alpha_bound_violations: int


class World:
    def __init__(self, trips: list[TripRequest], fleet: Fleet, stations: Stations,
                 policy: DispatchPolicy, charging: ChargingSetup, distance_model: geo.DistanceModel,
                 rng: np.random.Generator, horizon: float, drain: bool = True,
                 check_invariants: bool = False, strict: bool = True):
        self.kernel = Kernel()
        self.trips = trips
        self.fleet = fleet
        self.stations = stations
        self.policy = policy
        self.charging = charging
        self.distance = distance_model
        self.rng = rng
        self.horizon = float(horizon)
        self.drain = drain
        self.strict = strict
        self.log = EventLog()
        self.params: VehicleParams = fleet.params
        self.last_completion = 0.0
        self.d_trajectory: list = []
        self.violations: list = []
        self.alpha_bound_violations = 0
        self.check_invariants = check_invariants
        if check_invariants:
            self.kernel.after_event = lambda k: self.check()

    # ---- logging helpers -------------------------------------------------
    def _vlog(self, event, vid, miles=0.0, minutes=0.0, ref=-1):
        f = self.fleet
        self.log.vehicle(self.kernel.now, vid, event, VS(int(f.state[vid])).name, float(f.soc[vid]),
                         float(f.lat[vid]), float(f.lon[vid]), float(miles), float(minutes), int(ref))

    def _tlog(self, trip, event, miles=float("nan"), minutes=float("nan"), ref=-1):
        self.log.trip(self.kernel.now, trip.id, event, trip.state.value, miles, minutes, ref)

    # ---- run -------------------------------------------------------------
    def run(self) -> RunResult:
        for v in range(len(self.fleet)):
            self._vlog(INIT, v)
        self.kernel.schedule_timeout(self.horizon, lambda h: self._snapshot())
        try:
            self.kernel.process(self._arrivals(), name="arrivals")
            stats = self.kernel.run_until(self.horizon)
            if self.drain and self.last_completion > self.horizon:
                more = self.kernel.run_until(self.last_completion)
                stats = KernelStats(stats.events_processed + more.events_processed, more.final_time)
        except SimulationError as exc:
            exc.event_log = self.log
            raise
        return RunResult(stats, self.horizon, self.d_trajectory, self.violations, self.alpha_bound_violations)

    def _arrivals(self):
        k = self.kernel
        for trip in self.trips:
            if trip.arrival_time > self.horizon:
                break
            yield k.timeout(max(0.0, trip.arrival_time - k.now))
            self.on_arrival(trip)

    def _snapshot(self):
        f = self.fleet
        idx = np.arange(len(f))
        lat, lon, soc = f.effective_positions(idx, self.kernel.now, include_trip_legs=True)
        for v in idx:
            self.log.vehicle(self.kernel.now, int(v), SNAPSHOT, VS(int(f.state[v])).name, float(soc[v]),
                             float(lat[v]), float(lon[v]), 0.0, 0.0, -1)

    # ---- arrival handling ------------------------------------------------
    def on_arrival(self, trip: TripRequest) -> None:
        now = self.kernel.now
        p = self.params
        trip_minutes = trip.duration if trip.duration is not None else p.travel_minutes(trip.trip_distance)
        self._tlog(trip, ARRIVAL, miles=trip.trip_distance, minutes=trip_minutes)
        pol = self.policy
        filt = pol.filter if self.charging.interrupt else AvailabilityFilter.ONLY_IDLE
        ids = available_vehicles(self.fleet, filt, now, pol.min_charge_minutes)
        vid = None
        if len(ids) == 0:
            trip.state = TripState.UNAVAILABLE
            self._tlog(trip, UNAVAILABLE)
        else:
            cands = build_candidates(self.fleet, ids, trip, now, self.distance, pol.feasibility)
            vid, trip.candidates_considered = pol.select(cands, self.rng)
            if vid is None:
                trip.state = TripState.RENEGED
                self._tlog(trip, RENEGED)
            else:
                pickup_miles = float(cands.distance[np.flatnonzero(cands.ids == vid)[0]])
        if pol.adaptive is not None:
            ctl = pol.adaptive
            high = int(np.count_nonzero((self.fleet.state == VS.IDLE) & (self.fleet.soc >= ctl.high_soc_level)))
            before = ctl.d_current
            new_d = ctl.observe(high, vid is None)
            if new_d is not None:
                self.d_trajectory.append((now, trip.id, before, new_d))
        if vid is not None:
            if self.fleet.state[vid] != VS.IDLE:
                self.interrupt_charging(vid)
            self._start(vid, self.run_trip(vid, trip, pickup_miles, trip_minutes), "trip")
        self.charging_sweep()

    def charging_sweep(self) -> None:
        ch = self.charging
        selected = select_vehicles_for_charging(self.fleet, self.kernel.now, ch.schedule, ch.day_origin)
        if len(selected) == 0:
            return
        for pair in assign_chargers(selected, self.fleet, self.stations, ch.assignment, ch.availability, self.distance):
            self._start(pair.vehicle, self.charge_visit(pair.vehicle, pair.station, pair.distance, pair.end_soc),
                        "charge")

    def _start(self, vid, gen, name):
        proc = self.kernel.process(gen, name=f"{name}:{vid}")
        if not proc.finished:
            self.fleet.process[vid] = proc

    # ---- processes -------------------------------------------------------
    def _set_leg(self, vid, to_lat, to_lon, miles, duration):
        f = self.fleet
        f.leg_start[vid] = self.kernel.now
        f.leg_duration[vid] = duration
        f.leg_from_lat[vid], f.leg_from_lon[vid] = f.lat[vid], f.lon[vid]
        f.leg_to_lat[vid], f.leg_to_lon[vid] = to_lat, to_lon
        f.leg_miles[vid] = miles

    def run_trip(self, vid: int, trip: TripRequest, pickup_miles: float, trip_minutes: float):
        k, f, p = self.kernel, self.fleet, self.params
        v = f[vid]
        trip.state = TripState.MATCHED
        trip.matched_vehicle = vid
        trip.dispatch_time = k.now
        pickup_minutes = p.travel_minutes(pickup_miles)
        self.last_completion = max(self.last_completion, k.now + pickup_minutes + trip_minutes)
        transition(v, VS.DRIVING_WITHOUT_PASSENGER)
        self._set_leg(vid, trip.origin.lat, trip.origin.lon, pickup_miles, pickup_minutes)
        self._tlog(trip, MATCHED, miles=pickup_miles, minutes=pickup_minutes, ref=vid)
        self._vlog(DISPATCH, vid, ref=trip.id)
        yield k.timeout(pickup_minutes)

        v.location = trip.origin
        v.soc = geo.drain(v.soc, p.soc_drop(pickup_miles))
        transition(v, VS.DRIVING_WITH_PASSENGER)
        trip.pickup_time = k.now
        self._set_leg(vid, trip.destination.lat, trip.destination.lon, trip.trip_distance, trip_minutes)
        self._vlog(PICKUP, vid, miles=pickup_miles, ref=trip.id)
        self._tlog(trip, PICKUP, ref=vid)
        yield k.timeout(trip_minutes)

        v.location = trip.destination
        v.soc = geo.drain(v.soc, p.soc_drop(trip.trip_distance))
        transition(v, VS.IDLE)
        trip.completion_time = k.now
        f.leg_start[vid] = math.nan
        f.process[vid] = None
        self._vlog(DROPOFF, vid, miles=trip.trip_distance, ref=trip.id)
        self._tlog(trip, DROPOFF, miles=trip.trip_distance, ref=vid)

    def charge_visit(self, vid: int, sid: int, miles: float, end_soc: float = 1.0):
        """Drive to the charger, queue, charge. Interruptible in all three phases."""
        k, f, p = self.kernel, self.fleet, self.params
        v, s = f[vid], self.stations[sid]
        drive_minutes = p.travel_minutes(miles)
        transition(v, VS.DRIVING_TO_CHARGER)
        f.station[vid] = sid
        f.end_soc[vid] = end_soc
        s.inbound_count += 1
        self._set_leg(vid, s.location.lat, s.location.lon, miles, drive_minutes)
        self._vlog(TO_CHARGER, vid, ref=sid)
        try:
            yield k.timeout(drive_minutes)
        except Interrupt as intr:
            frac = leg_fraction(intr.elapsed, drive_minutes)
            lat0, lon0 = f.leg_from_lat[vid], f.leg_from_lon[vid]
            v.location = (lat0 + frac * (s.location.lat - lat0), lon0 + frac * (s.location.lon - lon0))
            v.soc = geo.drain(v.soc, frac * p.soc_drop(miles))
            s.inbound_count -= 1
            self._leave(vid, INTERRUPT, miles=frac * miles, ref=sid)
            return

        v.soc = geo.drain(v.soc, p.soc_drop(miles))
        v.location = s.location
        s.inbound_count -= 1
        f.leg_start[vid] = math.nan
        transition(v, VS.WAITING_FOR_CHARGER)
        self._vlog(ARRIVE_CHARGER, vid, miles=miles, ref=sid)
        self.enqueue_at_charger(sid, vid, end_soc)
        if f.state[vid] == VS.WAITING_FOR_CHARGER:
            try:
                yield k.passivate()
            except Interrupt:
                s.queue.remove(next(item for item in s.queue if item[0] == vid))
                self._leave(vid, INTERRUPT, ref=sid)
                return

        start_soc = v.soc
        charge_minutes = p.charge_minutes(start_soc, end_soc)
        try:
            yield k.timeout(charge_minutes)
        except Interrupt as intr:
            v.soc = min(start_soc + p.charge_gain(intr.elapsed), end_soc)
            self._release_post(sid)
            self._leave(vid, INTERRUPT, minutes=intr.elapsed, ref=sid)
            self._drain_queue(sid)
            return
        v.soc = end_soc
        self._release_post(sid)
        self._leave(vid, END_CHARGE, minutes=charge_minutes, ref=sid)
        self._drain_queue(sid)

    def _release_post(self, sid):
        s = self.stations[sid]
        s.occupancy -= 1
        station_set_busy_or_available(s)

    def _leave(self, vid, event, miles=0.0, minutes=0.0, ref=-1):
        f = self.fleet
        transition(f[vid], VS.IDLE)
        f.station[vid] = -1
        f.charging_since[vid] = math.nan
        f.leg_start[vid] = math.nan
        f.process[vid] = None
        self._vlog(event, vid, miles=miles, minutes=minutes, ref=ref)

    def enqueue_at_charger(self, sid: int, vid: int, end_soc: float = 1.0) -> None:
        self.stations[sid].queue.append((vid, end_soc))
        self._drain_queue(sid)

    def _drain_queue(self, sid: int) -> None:
        s = self.stations[sid]
        f = self.fleet
        while not s.busy and s.queue:
            vid, end_soc = s.queue.popleft()
            transition(f[vid], VS.CHARGING)
            f.charging_since[vid] = self.kernel.now
            f.end_soc[vid] = end_soc
            s.occupancy += 1
            station_set_busy_or_available(s)
            self._vlog(START_CHARGE, vid, ref=sid)
            proc = f.process[vid]
            if proc is not None and proc.passive:
                self.kernel.activate(proc.waiting_on)

    def interrupt_charging(self, vid: int) -> None:
        state = VS(int(self.fleet.state[vid]))
        if state not in INTERRUPTIBLE:
            raise SimulationError(f"vehicle {vid}: cannot interrupt in state {state.name}")
        if not self.charging.interrupt:
            raise SimulationError("interrupt requested while interrupts are disabled")
        proc = self.fleet.process[vid]
        if proc is None or proc.waiting_on is None:
            raise SimulationError(f"vehicle {vid}: no interruptible process")
        self.kernel.interrupt(proc.waiting_on, cause="dispatch")

    # ---- invariants --------------------------------------------------------
    def check(self) -> None:
        f, s = self.fleet, self.stations
        problems = []
        n = len(s)
        st = f.state
        if not ((f.soc >= 0) & (f.soc <= 1)).all():
            problems.append("SoC outside [0, 1]")
        if not ((st >= 0) & (st < len(VS))).all():
            problems.append("unknown vehicle state")
        at = f.station
        for code, arr, label in ((VS.CHARGING, s.occupancy, "occupancy"),
                                 (VS.DRIVING_TO_CHARGER, s.inbound, "inbound")):
            mask = st == code
            cnt = np.bincount(at[mask], minlength=n) if mask.any() else np.zeros(n, dtype=np.int64)
            if (cnt != arr).any():
                problems.append(f"{label} mismatch at stations {np.flatnonzero(cnt != arr).tolist()}")
        waiting = st == VS.WAITING_FOR_CHARGER
        qcnt = np.bincount(at[waiting], minlength=n) if waiting.any() else np.zeros(n, dtype=np.int64)
        qlen = np.array([len(q) for q in s.queues])
        if (qcnt != qlen).any():
            problems.append("queue length mismatch")
        if (s.occupancy > s.posts).any():
            problems.append("occupancy exceeds posts")
        if ((s.occupancy >= s.posts) != (s.state == 1)).any():
            problems.append("station BUSY flag inconsistent")
        busy_proc = np.array([p is not None for p in f.process])
        if (busy_proc != (st != VS.IDLE)).any():
            problems.append("active process present iff not IDLE violated")
        if self.charging.availability.alpha == 1.0 and ((s.inbound + s.occupancy) > s.posts).any():
            self.alpha_bound_violations += 1
        if problems:
            msg = f"t={self.kernel.now}: " + "; ".join(problems)
            self.violations.append(msg)
            if self.strict:
                raise SimulationError(msg)
