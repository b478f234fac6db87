import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from evfleetsim import geo
from evfleetsim.cli import main
from evfleetsim.config import parse_config
from evfleetsim.errors import ConfigError
from evfleetsim.ingest import TripTable
from evfleetsim.runner import place_chargers, place_initial_vehicles, simulate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TINY = CONFIGS / "tiny.yaml"
ARTIFACTS = {"summary.json", "events.csv", "timeseries.csv", "pickup_hist.csv", "chargers.csv", "manifest.json"}


def test_run_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    assert main(["run", str(TINY), "--out", str(tmp_path / "a"), "--assert"]) == 0
    assert main(["run", str(TINY), "--out", str(tmp_path / "b")]) == 0
    assert {p.name for p in (tmp_path / "a").iterdir()} == ARTIFACTS
    for name in ("summary.json", "events.csv", "timeseries.csv", "pickup_hist.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["invariant_violations"] == 0
    assert len(manifest["dataset_hash"]) == 16 and manifest["dataset_rows"] > 0


def test_seed_override_changes_output(tmp_path):
    main(["run", str(TINY), "--out", str(tmp_path / "a")])
    main(["run", str(TINY), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "events.csv").read_bytes() != (tmp_path / "b" / "events.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 2


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EVFLEETSIM_OUT", str(tmp_path / "env"))
    assert main(["run", str(TINY), "--horizon-days", "0.25"]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_validate_prints_filled_config(capsys):
    assert main(["validate", str(TINY)]) == 0
    out = capsys.readouterr().out
    assert "battery_kwh: 51.25" in out and "alpha: 1.0" in out


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("charging:\n  alpha: 1.5\n")
    assert main(["validate", str(bad)]) == 2
    assert "alpha" in capsys.readouterr().err
    bad.write_text("fleet:\n  sise: 3\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_gen_then_fit(tmp_path, capsys):
    spec = tmp_path / "gen.yaml"
    spec.write_text(TINY.read_text().replace("rate_per_minute: 0.07", "rate_per_minute: 1.0")
                    + "distance:\n  correction_factor: 1.3\n")
    csv = tmp_path / "trips.csv"
    assert main(["gen", str(spec), "--out", str(csv)]) == 0
    capsys.readouterr()
    assert main(["fit", str(csv), "--lower-percentile", "0", "--upper-percentile", "100"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["slope"] == pytest.approx(1.3, rel=1e-6)
    assert report["rows_in"] == report["rows_kept"]


def test_csv_config_with_fitted_factor(tmp_path):
    spec = tmp_path / "gen.yaml"
    spec.write_text(TINY.read_text().replace("rate_per_minute: 0.07", "rate_per_minute: 0.5")
                    + "distance:\n  correction_factor: 1.3\n")
    main(["gen", str(spec), "--out", str(tmp_path / "trips.csv")])
    (tmp_path / "trips.csv").write_text((tmp_path / "trips.csv").read_text()
                                        .replace("pickup_datetime", "tpep_pickup_datetime", 1))
    cfg = tmp_path / "from_csv.yaml"
    cfg.write_text((CONFIGS / "from_csv.yaml").read_text())
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["regression"]["slope"] == pytest.approx(1.3, rel=1e-6)


def test_sweep(tmp_path, capsys):
    assert main(["sweep", str(TINY), "--seeds", "1", "2", "--workers", "2", "--out", str(tmp_path)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["seed"] for r in rows] == [1, 2]
    assert (tmp_path / "run_000_seed1" / "events.csv").read_bytes() == _single_run_events(tmp_path / "single", 1)


def _single_run_events(out, seed):
    main(["run", str(TINY), "--out", str(out), "--seed", str(seed)])
    return (out / "events.csv").read_bytes()


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "evfleetsim.cli", "validate", str(TINY)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr


def test_tiny_runs_under_a_second():
    sim = simulate(parse_config({"seed": 0, "fleet": {"size": 5}, "chargers": {"count": 2},
                                 "dataset": {"rate_per_minute": 100 / 1440}}))
    assert 70 <= sim.summary.arrivals <= 130
    assert sim.runtime_seconds < 1.0


def test_place_initial_vehicles():
    one = TripTable.from_rows([(0, 40.7, -74.0, 40.8, -73.9, 3.0)])
    lat, lon = place_initial_vehicles(one, 4, np.random.default_rng(0))
    assert (lat == 40.7).all() and (lon == -74.0).all()
    with pytest.raises(ConfigError):
        place_initial_vehicles(TripTable.empty(), 3, np.random.default_rng(0))
    rng_rows = np.random.default_rng(1)
    table = TripTable.from_rows([(i, *rng_rows.uniform(40, 41, 2), 40.5, -74.0, 1.0) for i in range(50)])
    a = place_initial_vehicles(table, 30, np.random.default_rng(5))
    b = place_initial_vehicles(table, 30, np.random.default_rng(5))
    assert np.array_equal(a[0], b[0])
    origins = set(zip(table.origin_lat, table.origin_lon))
    assert set(zip(*a)) <= origins


def test_place_chargers():
    rng = np.random.default_rng(0)
    lat = rng.normal(40.75, 0.05, 500)
    lon = rng.normal(-73.95, 0.05, 500)
    table = TripTable(np.arange(500.0), lat, lon, lat, lon, np.ones(500), np.full(500, np.nan))
    slat, slon = place_chargers(40, "sample_from_origins", np.random.default_rng(1), table)
    lo_lat, hi_lat = np.percentile(lat, [5, 95])
    lo_lon, hi_lon = np.percentile(lon, [5, 95])
    assert ((slat >= lo_lat) & (slat <= hi_lat) & (slon >= lo_lon) & (slon <= hi_lon)).all()
    box = geo.Region(40.6, 40.9, -74.1, -73.8)
    ulat, ulon = place_chargers(40, "uniform_in_bounding_box", np.random.default_rng(1), region=box)
    assert all(box.contains(p) for p in zip(ulat, ulon))
    with pytest.raises(ConfigError):
        place_chargers(0, "uniform_in_bounding_box", np.random.default_rng(1), region=box)
