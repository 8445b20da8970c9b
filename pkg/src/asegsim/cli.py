"""Command line front end.

Subcommands: estimate, run, sweep, compare, export-libsvm. Configuration is
a flat key-value file; any `--set key=value` flag overrides a file key, and
the ASEG_SEED environment variable overrides the seed list. Exit codes:
0 success, 2 configuration or input problem, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, DivergenceError, ParseError
from .session import SWEEP_AXES, compare_command, estimate_command, \
    export_command, run_command, sweep_command


def _common(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asegsim",
        description="Accelerated stochastic extragradient simulator for "
                    "distributed ERM under Hessian similarity.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="print problem constants")
    _common(p)

    p = sub.add_parser("run", help="run the configured experiment")
    _common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--timing", action="store_true",
                   help="write measured wall times (breaks byte reproducibility)")

    p = sub.add_parser("sweep", help="run one config across an axis of values")
    _common(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True,
                   help="comma-separated values for the axis")
    p.add_argument("--jobs", type=int, help="parallel sweep cells")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("compare",
                       help="sampled run vs full-participation baseline")
    _common(p)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("export-libsvm", help="write the dataset as libsvm text")
    _common(p)
    p.add_argument("--out-file", required=True, help="destination file")

    return parser


def _resolve(args) -> "RunConfig":
    overrides = list(args.overrides)
    if getattr(args, "out", None):
        overrides.append(f"out={args.out}")
    if getattr(args, "seeds", None):
        overrides.append(f"seeds={args.seeds}")
    if getattr(args, "jobs", None):
        overrides.append(f"jobs={args.jobs}")
    if getattr(args, "timing", False):
        overrides.append("timing=true")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "estimate":
            for key, value in estimate_command(cfg).items():
                print(f"{key} = {value!r}" if isinstance(value, float)
                      else f"{key} = {value}")
        elif args.command == "run":
            report = run_command(cfg)
            last = report.aggregate()[-1]
            print(f"wrote {cfg.out} (final phi_mean {last['phi_mean']:.6e}, "
                  f"contacts {last['contacts']})")
        elif args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("empty sweep value list")
            summary = sweep_command(cfg, args.axis, values)
            print(f"wrote {summary}")
        elif args.command == "compare":
            path = compare_command(cfg)
            print(f"wrote {path}")
        elif args.command == "export-libsvm":
            path = export_command(cfg, args.out_file)
            print(f"wrote {path}")
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
