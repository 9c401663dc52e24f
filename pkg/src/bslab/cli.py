"""Command-line driver: ``bslab <subcommand> --config <path> [--out DIR] [--seed N]``.

Subcommands map one-to-one onto the experiment drivers: forward,
convergence, carleman, reconstruct, stability.  ``--out`` (or the
``BSLAB_OUT`` environment variable) overrides the configured output
directory; ``--seed`` overrides ``run.seed``.  Failures exit nonzero and
print a machine-readable JSON error report to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, ExperimentConfig, describe_defaults
from .experiments import (
    run_carleman,
    run_convergence,
    run_forward,
    run_reconstruct,
    run_stability,
)

_RUNNERS = {
    "forward": run_forward,
    "convergence": run_convergence,
    "carleman": run_carleman,
    "reconstruct": run_reconstruct,
    "stability": run_stability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bslab",
        description="Coupled bulk-surface parabolic experiments on a disk",
        epilog="Configuration keys (key = value, one per line):\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, runner in _RUNNERS.items():
        p = sub.add_parser(name, help=runner.__doc__.splitlines()[0] if runner.__doc__ else None)
        p.add_argument("--config", default=None, help="config file (defaults apply if omitted)")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="run.seed override")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg = cfg.override(**{"run.seed": args.seed})
        out_dir = cfg.output_dir(args.out)
        _RUNNERS[args.subcommand](cfg, out_dir)
    except ConfigError as exc:
        json.dump({"error": "config", "key": exc.key, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # solver failures, filesystem errors
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
