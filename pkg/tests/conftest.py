import math

import numpy as np
import pytest

from evfleetsim import geo
from evfleetsim.charging import ChargerAssignmentRule, ChargerAvailabilityRule, ThresholdSchedule
from evfleetsim.dispatch import AvailabilityFilter, DispatchPolicy, FeasibilityRule
from evfleetsim.domain import Fleet, Stations, TripRequest, VehicleParams
from evfleetsim.world import ChargingSetup, World

# degrees of longitude per mile along the equator
DEG_PER_MILE = 180.0 / (math.pi * geo.EARTH_RADIUS_MILES)

# default pack, consumption and charge rate; 60 mph makes one mile one minute
PARAMS_60 = VehicleParams(battery_kwh=51.25, consumption_wh_per_mile=230.0, charge_rate_kw=20.0, velocity_mph=60.0)
PER_MILE = 230.0 / 51250.0  # SoC per mile
PER_MINUTE = 20.0 / (60.0 * 51.25)  # SoC gained per minute of charging


def eq(x_miles):
    """A point on the equator ``x_miles`` east of (0, 0)."""
    return geo.GeoPoint(0.0, x_miles * DEG_PER_MILE)


def make_trips(specs):
    """specs: (arrival, origin_x, dest_x) in miles along the equator."""
    out = []
    for i, (t, ox, dx) in enumerate(specs):
        out.append(TripRequest(i, eq(ox), eq(dx), float(t), abs(dx - ox) * 1.0))
    return out


def make_world(vehicles, stations, trips, *, kind="closest_available", d=1.0,
               filt=AvailabilityFilter.IDLE_CHARGING_WAITING_DRIVING, schedule=None, alpha=1.0,
               assignment="closest_available", interrupt=True, horizon=1000.0, params=PARAMS_60,
               seed=0, check=True, adaptive=None, min_end_soc=0.0):
    """vehicles: (x, soc); stations: (x, posts); trips: (t, origin_x, dest_x)."""
    fleet = Fleet([eq(x).lat for x, _ in vehicles], [eq(x).lon for x, _ in vehicles],
                  [s for _, s in vehicles], params)
    st = Stations([eq(x).lat for x, _ in stations], [eq(x).lon for x, _ in stations],
                  [p for _, p in stations])
    policy = DispatchPolicy(kind=kind, d=d, filter=filt, feasibility=FeasibilityRule(min_end_soc),
                            adaptive=adaptive)
    charging = ChargingSetup(schedule or ThresholdSchedule.always(), ChargerAvailabilityRule(alpha),
                             ChargerAssignmentRule(assignment), interrupt)
    return World(make_trips(trips), fleet, st, policy, charging, geo.DistanceModel(),
                 np.random.default_rng(seed), horizon, check_invariants=check)


@pytest.fixture
def world_factory():
    return make_world


_criteria: dict = {}


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    number, title = marks
    ok = _criteria.get(number, (title, True))[1]
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _criteria[number] = (title, ok)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d} {title}: {'PASS' if ok else 'FAIL'}")
