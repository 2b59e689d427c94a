"""Command line driver: ``python -m dgtransport {mono-sweep,poly-bench,single-run}``."""
import argparse
from dataclasses import fields, replace
import os
import sys

from .bench import (BenchConfig, load_config, run_mono_sweep, run_poly_benchmark, single_run,
                    write_rows)
from .errors import InvalidArgument


def _add_config_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    for f in fields(BenchConfig):
        parser.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                            help=f"override {f.name} (default {f.default!r})")


def _resolve(args):
    if args.config:
        cfg, sweep = load_config(args.config)
    elif args.command == "poly-bench":
        cfg, sweep = BenchConfig.poly_default(), {}
    else:
        cfg, sweep = BenchConfig(), {}
    overrides = {}
    for f in fields(BenchConfig):
        raw = getattr(args, f.name)
        if raw is None:
            continue
        items = [f.type(float(v)) if f.type is int else f.type(v) for v in raw.split(",")]
        if len(items) > 1:
            sweep[f.name] = items
        overrides[f.name] = items[0]
    return replace(cfg, **overrides).validate(), sweep


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dgtransport",
                                     description="DG transport solver benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("mono-sweep", "mono-energetic parameter sweep"),
                       ("poly-bench", "Compton group-sequential benchmark"),
                       ("single-run", "one solve with reference errors")]:
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        if name == "mono-sweep":
            p.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg, sweep = _resolve(args)
    except (InvalidArgument, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    os.makedirs(cfg.output, exist_ok=True)
    if args.command == "mono-sweep":
        if cfg.problem != "mono":
            print("mono-sweep needs problem = mono", file=sys.stderr)
            return 2
        summaries, failures = run_mono_sweep(cfg, sweep, jobs=args.jobs)
        for row in summaries:
            print(f"{row['tag']}: {row['iterations']} its, rate {row['rate']:.3f}, "
                  f"effectivity {row['min_effectivity']:.3f}..{row['max_effectivity']:.3f}")
        for line in failures:
            print("FAILED", line, file=sys.stderr)
        return 1 if failures else 0
    if sweep:
        print("lists are only allowed for mono-sweep", file=sys.stderr)
        return 2
    try:
        if args.command == "poly-bench":
            out = run_poly_benchmark(cfg)
            for row in out["groups"]:
                print(f"{row['solver']:6s} group {row['group']:2d}: {row['iterations']:3d} its, "
                      f"estimate {row['estimate']:.3e}")
        else:
            row = single_run(cfg)
            write_rows(os.path.join(cfg.output, "single_run.csv"), [row])
            print(f"{row['tag']}: {row['iterations']} its, final estimate "
                  f"{row['final_estimate']:.3e}, error {row['final_error']:.3e}")
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
