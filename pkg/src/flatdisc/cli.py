"""Command-line front end: ``flatdisc simulate|compare|validate|sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import yaml

from .sim import (SCHEMES, SimConfig, compare_schemes, export_csv, maneuver_amplitude,
                  metrics, run_closed_loop, sweep)

log = logging.getLogger("flatdisc")


class CliError(Exception):
    pass


def load_config(path=None, **overrides) -> SimConfig:
    """Read a YAML config (if given) and apply command-line overrides."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise CliError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise CliError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise CliError(f"{p}: top level must be a mapping of SimConfig keys")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def _summary(mt):
    settle = mt["settling_index"]
    return (f"rms {mt['rms_flat']:.4g} m, max {mt['max_flat']:.4g} m, "
            f"settles at k={settle}, faults {mt['faults']}, {mt['status']}")


def _ok(mt):
    return mt["faults"] == 0 and mt["status"] == "completed"


def cmd_simulate(args):
    cfg = load_config(args.config, Ts=args.ts, scheme=args.scheme, out=args.out)
    rec = run_closed_loop(cfg)
    mt = metrics(rec, maneuver_amplitude(cfg))
    out = Path(cfg.out or f"simulation_{cfg.scheme}.csv")
    export_csv(rec, out, {"metrics": mt})
    print(f"{cfg.scheme}: {_summary(mt)}")
    print(f"wrote {out} ({rec.n_rows} rows)")
    if not _ok(mt):
        print("run finished with controller faults or a plant failure", file=sys.stderr)
        return 1
    return 0


def cmd_compare(args):
    cfg = load_config(args.config, Ts=args.ts, out=args.out)
    cmp_ = compare_schemes(cfg)
    stem = Path(cfg.out or "comparison")
    stem.parent.mkdir(parents=True, exist_ok=True)
    for scheme, rec in cmp_.records.items():
        path = stem.with_name(f"{stem.name}_{scheme}.csv")
        export_csv(rec, path, {"metrics": cmp_.metrics[scheme]})
    summary = stem.with_name(f"{stem.name}_summary.json")
    summary.write_text(json.dumps({"config": cfg.to_dict(), "metrics": cmp_.metrics}, indent=2))
    print(cmp_.table())
    print(f"wrote {stem}_<scheme>.csv and {summary}")
    return 0 if all(_ok(m) for m in cmp_.metrics.values()) else 1


def cmd_sweep(args):
    cfg = load_config(args.config, scheme=args.scheme, out=args.out)
    grid = [float(v) for v in args.ts_grid.split(",")]
    schemes = (args.scheme,) if args.scheme else SCHEMES
    try:
        rows = sweep(cfg, grid, schemes)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    keys = ("Ts", "scheme", "rms_flat", "max_flat", "settling_index", "faults")
    print("".join(f"{k:>16}" for k in keys))
    for r in rows:
        print("".join(f"{r[k]:>16.6g}" if isinstance(r[k], float) else f"{str(r[k]):>16}"
                      for k in keys))
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {cfg.out}")
    return 0


def cmd_validate(args):
    from .validation import run_all
    results = run_all()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="flatdisc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log controller faults")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scheme=True):
        sp.add_argument("--config", help="YAML file with SimConfig keys")
        if scheme:
            sp.add_argument("--scheme", choices=SCHEMES)
        sp.add_argument("--out", help="output path (CSV file or file stem)")

    sp = sub.add_parser("simulate", help="run one closed-loop simulation")
    common(sp)
    sp.add_argument("--ts", type=float, help="sampling time [s]")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="implicit- vs explicit-based controller")
    common(sp, scheme=False)
    sp.add_argument("--ts", type=float, help="sampling time [s]")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="metrics over a grid of sampling times")
    common(sp)
    sp.add_argument("--ts-grid", default="0.1,0.05,0.02", help="comma-separated Ts values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="run the identity and property suites")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
