"""Command-line entry point.

Example::

    ramanchd noise-sweep --config configs/noise_sweep.toml --out results/noise --threads 4

Exit codes: 0 success, 2 configuration error, 3 truncation did not
converge, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import __version__
from .config import FORMATS, SCENARIOS, load_config
from .errors import ConfigError, ConvergenceError, DimensionError, NumericalError

OUT_DIR_ENV = "RAMANCHD_OUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_NUMERICAL = 4

logger = logging.getLogger("ramanchd")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramanchd",
        description="Conditional homodyne detection of Raman emission from a "
                    "molecular optomechanical cavity.",
    )
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", required=True,
                        help="TOML file with dotted section keys (a .json mirror is also accepted)")
    parser.add_argument("--out", default=None,
                        help=f"output directory (overrides ${OUT_DIR_ENV} and output.dir)")
    parser.add_argument("--format", choices=FORMATS, default=None,
                        help="table format (default: output.format or csv)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweep points (default: 1)")
    parser.add_argument("--tolerance", type=float, default=None,
                        help="relative truncation-convergence tolerance (default 1e-3)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def resolve(args):
    """Config from the file with command-line overrides applied."""
    config = load_config(args.config, scenario=args.scenario)
    changes = {}
    out = args.out or os.environ.get(OUT_DIR_ENV)
    if out:
        changes["output_dir"] = out
    if args.format:
        changes["output_format"] = args.format
    if args.tolerance is not None:
        if not args.tolerance > 0:
            raise ConfigError("must be positive", field="--tolerance")
        changes["truncation"] = dataclasses.replace(config.truncation, tolerance=args.tolerance)
    if args.threads < 1:
        raise ConfigError("must be at least 1", field="--threads")
    return dataclasses.replace(config, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .runner import run_scenario

    try:
        config = resolve(args)
        manifest = run_scenario(config, threads=args.threads)
    except (ConfigError, DimensionError) as exc:
        print(f"ramanchd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"ramanchd: truncation did not converge: {exc}", file=sys.stderr)
        for entry in exc.history:
            print(f"  ({entry['n_cavity']}, {entry['n_vib']}): {entry['observables']}",
                  file=sys.stderr)
        return EXIT_CONVERGENCE
    except NumericalError as exc:
        print(f"ramanchd: numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"ramanchd: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    trunc = manifest["truncation"]
    print(f"{config.scenario}: wrote {len(manifest['outputs'])} table(s) to {config.output_dir} "
          f"(truncation {trunc['n_cavity']}x{trunc['n_vib']}, {manifest['wall_time_s']:.1f} s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
