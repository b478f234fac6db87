import datetime as dt
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from evfleetsim import geo
from evfleetsim.domain import TripState
from evfleetsim.errors import ConfigError, SchemaError
from evfleetsim.ingest import (
    CleaningFilter, TripTable, arrival_stream, clean_frame, fit_correction_factor, generate_poisson_trips,
    load_trip_records, read_trip_frame, write_trip_csv,
)

HEADER = "tpep_pickup_datetime,plat,plon,dlat,dlon,dist\n"
MAPPING = {"pickup_datetime": "tpep_pickup_datetime", "pickup_lat": "plat", "pickup_lon": "plon",
           "dropoff_lat": "dlat", "dropoff_lon": "dlon", "trip_distance": "dist"}


def _write(tmp_path, rows, header=HEADER):
    p = tmp_path / "trips.csv"
    p.write_text(header + "".join(rows))
    return p


def test_percentile_fixture_keeps_eight(tmp_path):
    # 8 ordinary latitudes, one far south, one far north; other coordinates constant
    lats = [40.70, 40.71, 40.72, 40.73, 40.74, 40.75, 40.76, 40.77, 10.0, 80.0]
    rows = [f"2024-05-01T00:{i:02d}:00,{la},-74.0,40.75,-73.9,1.5\n" for i, la in enumerate(lats)]
    table, report = load_trip_records(_write(tmp_path, rows), MAPPING, CleaningFilter(0.5, 99.5))
    assert (report.rows_in, report.rows_kept) == (10, 8)
    assert sorted(table.origin_lat) == sorted(lats[:8])


def test_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    table, report = load_trip_records(p)
    assert len(table) == 0 and report.rows_in == 0


def test_all_valid_sorted(tmp_path):
    rows = [f"2024-05-01T00:{m:02d}:00,40.7,-74.0,40.75,-73.9,1.5\n" for m in (30, 10, 20)]
    filt = CleaningFilter(0, 100)
    table, report = load_trip_records(_write(tmp_path, rows), MAPPING, filt)
    assert report.rows_kept == report.rows_in == 3
    assert list(table.arrival) == [10.0, 20.0, 30.0]


def test_missing_column_names_it(tmp_path):
    p = _write(tmp_path, ["2024-05-01T00:00:00,40.7,-74.0,40.75,-73.9\n"],
               header="tpep_pickup_datetime,plat,plon,dlat,dlon\n")
    with pytest.raises(SchemaError, match="dist"):
        load_trip_records(p, MAPPING)


def test_unparseable_rows_skipped(tmp_path):
    rows = ["2024-05-01T00:00:00,40.7,-74.0,40.75,-73.9,1.5\n",
            "garbage,40.7,-74.0,40.75,-73.9,1.5\n",
            "2024-05-01T00:01:00,abc,-74.0,40.75,-73.9,1.5\n",
            "2024-05-01T00:02:00,40.7,-74.0,40.75,-73.9,1.5\n"]
    table, report = load_trip_records(_write(tmp_path, rows), MAPPING, CleaningFilter(0, 100))
    assert report.rows_in == 4 and report.rows_unparseable == 2 and len(table) == 2


def test_window_and_distance_filters(tmp_path):
    rows = ["2024-05-01T00:00:00,40.7,-74.0,40.75,-73.9,1.5\n",
            "2024-05-02T00:00:00,40.7,-74.0,40.75,-73.9,1.5\n",
            "2024-05-01T01:00:00,40.7,-74.0,40.75,-73.9,0\n",
            "2024-05-01T02:00:00,40.7,-74.0,40.75,-73.9,500\n"]
    filt = CleaningFilter(0, 100, dt.datetime(2024, 5, 1), dt.datetime(2024, 5, 2), max_distance=100)
    table, report = load_trip_records(_write(tmp_path, rows), MAPPING, filt)
    assert report.rows_kept == 1
    assert table.arrival[0] == 0.0


def _random_frame(seed, n=200):
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        "pickup_datetime": pd.Timestamp("2024-05-01") + pd.to_timedelta(rng.uniform(0, 1440, n), unit="min"),
        "pickup_lat": rng.normal(40.75, 0.05, n), "pickup_lon": rng.normal(-73.95, 0.05, n),
        "dropoff_lat": rng.normal(40.75, 0.05, n), "dropoff_lon": rng.normal(-73.95, 0.05, n),
        "trip_distance": rng.exponential(3, n),
    })


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_cleaning_idempotent(seed):
    filt = CleaningFilter(2, 98)
    once, bounds = clean_frame(_random_frame(seed), filt)
    twice, _ = clean_frame(once, filt, bounds)
    pd.testing.assert_frame_equal(once, twice)


def _linear_table(n, factor, noise_sd=0.0, seed=0):
    rng = np.random.default_rng(seed)
    region = geo.Region(40.58, 40.88, -74.05, -73.75)
    olat, olon = geo.uniform_sphere_points(rng, n, region)
    dlat, dlon = geo.uniform_sphere_points(rng, n, region)
    h = geo.haversine_many(olat, olon, dlat, dlon)
    y = factor * h + rng.normal(0, noise_sd, n) if noise_sd else factor * h
    return TripTable(np.arange(n, dtype=float), olat, olon, dlat, dlon, y, np.full(n, np.nan))


def test_regression_exact_slope():
    r = fit_correction_factor(_linear_table(500, 1.3), 0.8, np.random.default_rng(0))
    assert r.slope == pytest.approx(1.3, rel=1e-9)
    assert r.r_squared == pytest.approx(1.0, abs=1e-12)
    assert r.test_mse == pytest.approx(0.0, abs=1e-18)
    assert (r.n_train, r.n_test) == (400, 100)
    assert fit_correction_factor(_linear_table(100, 1.0)).slope == pytest.approx(1.0, rel=1e-9)


def test_regression_degenerate():
    t = TripTable(np.zeros(5), np.zeros(5), np.zeros(5), np.zeros(5), np.zeros(5), np.ones(5), np.full(5, np.nan))
    with pytest.raises(ConfigError):
        fit_correction_factor(t)


def test_regression_matches_numpy_polyfit():
    t = _linear_table(1000, 1.25, noise_sd=0.7, seed=4)
    r = fit_correction_factor(t, 1.0)
    x = geo.haversine_many(t.origin_lat, t.origin_lon, t.dest_lat, t.dest_lon)
    slope, intercept = np.polyfit(x, t.distance, 1)
    assert r.slope == pytest.approx(slope, rel=1e-9)
    assert r.intercept == pytest.approx(intercept, rel=1e-6, abs=1e-9)


def test_poisson_count():
    t = generate_poisson_trips(2.0, 1000, None, np.random.default_rng(0))
    assert abs(len(t) - 2000) <= 3 * math.sqrt(2000)
    assert (np.diff(t.arrival) >= 0).all() and t.arrival.max() < 1000


def test_poisson_horizon_zero():
    assert len(generate_poisson_trips(2.0, 0, None, np.random.default_rng(0))) == 0


def test_poisson_deterministic():
    a = generate_poisson_trips(1.0, 500, None, np.random.default_rng(9))
    b = generate_poisson_trips(1.0, 500, None, np.random.default_rng(9))
    assert a.fingerprint() == b.fingerprint()


def test_poisson_gaps_exponential_ks():
    t = generate_poisson_trips(2.0, 5200, None, np.random.default_rng(11))
    gaps = np.diff(np.concatenate([[0.0], t.arrival]))[:10_000]
    assert len(gaps) == 10_000
    assert stats.kstest(gaps, "expon", args=(0, 0.5)).pvalue > 0.01


def test_hourly_profile_thinning():
    profile = [0.0] * 12 + [2.0] * 12
    t = generate_poisson_trips(1.0, 1440, None, np.random.default_rng(3), hourly_profile=profile)
    assert (t.arrival >= 720).all()
    assert abs(len(t) - 1440) <= 4 * math.sqrt(1440)


def test_arrival_stream_order_and_state():
    t = TripTable.from_rows([(9, 0, 0, 0, 0.01, 1.0), (1, 0, 0, 0, 0.01, 1.0), (5, 0, 0, 0, 0.01, 1.0),
                             (5, 1, 1, 1, 1.01, 2.0)])
    reqs = list(arrival_stream(t))
    assert [r.arrival_time for r in reqs] == [1, 5, 5, 9]
    assert reqs[1].origin.lat == 0 and reqs[2].origin.lat == 1  # stable for ties
    assert all(r.state is TripState.WAITING for r in reqs)
    assert list(arrival_stream(TripTable.empty())) == []


def test_csv_round_trip(tmp_path):
    t = generate_poisson_trips(0.5, 200, geo.Region(40.6, 40.8, -74.0, -73.8), np.random.default_rng(5))
    p = write_trip_csv(t, tmp_path / "gen.csv", dt.datetime(2024, 5, 1))
    back, report = load_trip_records(p, filt=CleaningFilter(0, 100), origin=dt.datetime(2024, 5, 1))
    assert report.rows_kept == len(t)
    np.testing.assert_allclose(back.arrival, t.arrival, atol=1e-5)
    np.testing.assert_allclose(back.distance, t.distance, atol=1e-8)
