import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evfleetsim import geo
from evfleetsim.charging import (
    ALWAYS, NIGHT, ChargerAssignmentRule, ChargerAvailabilityRule, ThresholdSchedule, assign_chargers,
    charger_available, select_vehicles_for_charging, threshold_at,
)
from evfleetsim.domain import Fleet, Stations, VehicleParams, VehicleState as S
from evfleetsim.errors import ConfigError

from conftest import eq


@pytest.mark.parametrize("t", [0, 359, 720, 1439, 5000])
def test_always(t):
    assert threshold_at(t, ALWAYS) == 0.95


@pytest.mark.parametrize("t,c", [(720, 0.4), (120, 0.95), (360, 0.4), (1379.9, 0.4), (1380, 0.95), (1440 + 720, 0.4)])
def test_night(t, c):
    assert threshold_at(t, NIGHT) == c


def test_day_origin_shift():
    # run starts at 10 pm: simulated minute 60 is 11 pm (night), minute 480 is 6 am
    assert threshold_at(0, NIGHT, 1320) == 0.4
    assert threshold_at(60, NIGHT, 1320) == 0.95
    assert threshold_at(480, NIGHT, 1320) == 0.4


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ThresholdSchedule([(60, 0.5)])
    with pytest.raises(ConfigError):
        ThresholdSchedule([(0, 1.5)])


def test_selection():
    fleet = Fleet(np.zeros(4), np.zeros(4), [0.3, 0.41, 0.1, 0.4], VehicleParams())
    fleet.state[2] = S.CHARGING
    assert list(select_vehicles_for_charging(fleet, 720, NIGHT)) == [0, 3]
    assert list(select_vehicles_for_charging(fleet, 0, NIGHT)) == [0, 1, 3]


@pytest.mark.parametrize("alpha,posts,occ,inbound,ok", [
    (1.0, 4, 2, 2, False), (0.0, 4, 3, 10, True), (0.5, 4, 2, 3, True), (0.0, 2, 2, 0, False), (1.0, 4, 0, 3, True)])
def test_alpha_rule(alpha, posts, occ, inbound, ok):
    st_ = Stations([0.0], [0.0], posts)[0]
    st_.occupancy = occ
    st_.inbound_count = inbound
    assert charger_available(st_, ChargerAvailabilityRule(alpha)) is ok


def _setup(vehicle_xs, station_xs, posts=1, soc=0.5):
    fleet = Fleet(np.zeros(len(vehicle_xs)), [eq(x).lon for x in vehicle_xs], soc, VehicleParams())
    stations = Stations(np.zeros(len(station_xs)), [eq(x).lon for x in station_xs], posts)
    return fleet, stations


def test_nearest_busy_goes_to_second():
    fleet, stations = _setup([0], [1, 3])
    stations.occupancy[0] = 1
    pairs = assign_chargers([0], fleet, stations, ChargerAssignmentRule("closest_available"),
                            ChargerAvailabilityRule(1.0), geo.DistanceModel())
    assert [(p.vehicle, p.station, p.end_soc) for p in pairs] == [(0, 1, 1.0)]
    assert pairs[0].distance == pytest.approx(3.0, rel=1e-9)


def test_power_of_d_chargers_skips_when_d_nearest_unavailable():
    fleet, stations = _setup([0], [1, 2, 3])
    stations.occupancy[:2] = 1
    rule = ChargerAssignmentRule("power_of_d", 2)
    assert assign_chargers([0], fleet, stations, rule, ChargerAvailabilityRule(1.0), geo.DistanceModel()) == []
    rule3 = ChargerAssignmentRule("power_of_d", 3)
    assert [p.station for p in assign_chargers([0], fleet, stations, rule3, ChargerAvailabilityRule(1.0),
                                               geo.DistanceModel())] == [2]


def test_no_selected_vehicles():
    fleet, stations = _setup([0], [1])
    assert assign_chargers([], fleet, stations, ChargerAssignmentRule(), ChargerAvailabilityRule(), geo.DistanceModel()) == []


def test_within_sweep_inbound_updates():
    # two posts, alpha=1: first two vehicles fill station 0 (2 > 0, 1 > ... ) then overflow to station 1
    fleet, stations = _setup([0, 0.1, 0.2], [1, 5], posts=2)
    pairs = assign_chargers([0, 1, 2], fleet, stations, ChargerAssignmentRule(), ChargerAvailabilityRule(1.0),
                            geo.DistanceModel())
    assert [(p.vehicle, p.station) for p in pairs] == [(0, 0), (1, 0), (2, 1)]


def test_out_of_range_station_not_used():
    fleet, stations = _setup([0], [100], soc=0.1)  # range about 22 miles
    assert assign_chargers([0], fleet, stations, ChargerAssignmentRule(), ChargerAvailabilityRule(),
                           geo.DistanceModel()) == []


@settings(max_examples=100)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12), st.lists(st.floats(-20, 20), min_size=1, max_size=5),
       st.sampled_from([0.0, 0.5, 1.0]), st.integers(1, 3))
def test_pairing_respects_availability_at_pairing_time(vxs, sxs, alpha, posts):
    fleet, stations = _setup(vxs, sxs, posts=posts, soc=1.0)
    rule = ChargerAvailabilityRule(alpha)
    pairs = assign_chargers(range(len(vxs)), fleet, stations, ChargerAssignmentRule(), rule, geo.DistanceModel())
    inbound = np.zeros(len(sxs))
    for p in pairs:
        assert (posts - 0) > alpha * inbound[p.station]
        inbound[p.station] += 1
    if alpha == 1.0:
        assert (inbound <= posts).all()
