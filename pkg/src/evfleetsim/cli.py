"""Command-line entry point.

    evfleetsim run scenario.yaml --out results/ [--seed N] [--horizon-days D] [--assert]
    evfleetsim validate scenario.yaml
    evfleetsim fit trips.csv [--columns map.yaml] [--train-fraction 0.8]
    evfleetsim gen scenario.yaml --out trips.csv
    evfleetsim sweep scenario.yaml --seeds 1 2 3 --workers 3 --out sweep/
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .config import SyntheticDataset, dump_config, load_config
from .errors import ConfigError, SimulationError
from .ingest import CleaningFilter, fit_correction_factor, generate_poisson_trips, load_trip_records, write_trip_csv
from .runner import run_scenario, run_sweep
from . import geo

OUT_ENV = "EVFLEETSIM_OUT"

log = logging.getLogger("evfleetsim")


def _overrides(args) -> dict:
    o = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "horizon_days", None) is not None:
        o["horizon_minutes"] = args.horizon_days * 1440.0
    return o


def _out_dir(args, default="results") -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or default)


def cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    out = _out_dir(args)
    manifest = run_scenario(config, out, check_invariants=args.assert_invariants)
    summary = json.loads(Path(manifest.artifacts["summary"]).read_text())
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"artifacts written to {out} ({manifest.runtime_seconds:.2f}s)", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config, _overrides(args))
    print(yaml.safe_dump(dump_config(config), sort_keys=False), end="")
    return 0


def cmd_fit(args) -> int:
    columns = yaml.safe_load(Path(args.columns).read_text()) if args.columns else {}
    filt = CleaningFilter(args.lower_percentile, args.upper_percentile)
    table, report = load_trip_records(args.csv, columns, filt)
    fit = fit_correction_factor(table, args.train_fraction, np.random.default_rng(args.seed))
    out = {"rows_in": report.rows_in, "rows_kept": report.rows_kept, **asdict(fit)}
    print(json.dumps(out, indent=2))
    return 0


def cmd_gen(args) -> int:
    config = load_config(args.spec, _overrides(args))
    ds = config.dataset
    if not isinstance(ds, SyntheticDataset):
        raise ConfigError("gen needs a synthetic dataset section")
    model = geo.DistanceModel(config.distance.mode,
                              1.0 if config.distance.correction_factor == "fit" else config.distance.correction_factor)
    table = generate_poisson_trips(ds.rate_per_minute, config.horizon_minutes, ds.region.to_region(),
                                   np.random.default_rng(config.seed), model, ds.hourly_profile,
                                   config.start_minute_of_day)
    path = Path(args.out or "trips.csv")
    write_trip_csv(table, path, config.start_datetime)
    print(f"wrote {len(table)} trips to {path}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    base = load_config(args.config, _overrides(args))
    configs = [base.model_copy(update={"seed": s}) for s in args.seeds]
    results = run_sweep(configs, _out_dir(args, "sweep"), args.workers, args.assert_invariants)
    rows = [{"seed": r["seed"], **json.loads(Path(r["artifacts"]["summary"]).read_text())} for r in results]
    print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evfleetsim", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--out", help=f"{out_help} (default: ${OUT_ENV} or ./results)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--horizon-days", type=float, help="override the horizon, in days")

    r = sub.add_parser("run", help="run one scenario and write artifacts")
    r.add_argument("config")
    common(r, "output directory")
    r.add_argument("--assert", dest="assert_invariants", action="store_true",
                   help="check fleet invariants after every event")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse a config and print it with defaults filled in")
    v.add_argument("config")
    v.add_argument("--seed", type=int)
    v.add_argument("--horizon-days", type=float)
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("fit", help="fit the distance correction factor on a trip CSV")
    f.add_argument("csv")
    f.add_argument("--columns", help="YAML mapping canonical column -> CSV column")
    f.add_argument("--train-fraction", type=float, default=0.8)
    f.add_argument("--lower-percentile", type=float, default=0.5)
    f.add_argument("--upper-percentile", type=float, default=99.5)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gen", help="write a synthetic trip CSV from a scenario's dataset section")
    g.add_argument("spec")
    common(g, "CSV path")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sweep", help="run one config over several seeds")
    s.add_argument("config")
    s.add_argument("--seeds", type=int, nargs="+", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--horizon-days", type=float)
    s.add_argument("--assert", dest="assert_invariants", action="store_true")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        event_log = getattr(exc, "event_log", None)
        if event_log is not None and args.command == "run":
            dump = _out_dir(args) / "events_failed.csv"
            dump.parent.mkdir(parents=True, exist_ok=True)
            event_log.to_csv(dump)
            print(f"event log up to the failure written to {dump}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
