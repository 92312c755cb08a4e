"""``mfcov`` command line: pilot, plan, estimate, bench and metric.

Exit codes: 0 success, 2 configuration error, 3 numerical or definiteness
error, 4 I/O error.
"""

import argparse
import sys
from pathlib import Path

from . import bench
from .exceptions import (
    BudgetError,
    ConfigError,
    DataFormatError,
    HierarchyError,
    NumericalError,
    OrderingError,
)
from .io import (
    write_json,
    write_metric_csv,
    write_metric_summary_csv,
    write_results_csv,
    write_summary_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

COMMANDS = ("pilot", "plan", "estimate", "bench", "metric")


def _summary_path(cfg, out):
    if cfg.summary is not None:
        return cfg.summary
    return out.with_name(out.stem + ".summary.csv")


def _emit_json(payload, out):
    text = write_json(payload, out)
    if out is None:
        sys.stdout.write(text)


def _emit_table(writer, rows, out):
    writer(sys.stdout if out is None else out, rows)


def run(command, cfg):
    """Execute one subcommand and write its output."""
    out = cfg.output
    if command == "pilot":
        _emit_json(bench.cmd_pilot(cfg), out)
    elif command == "plan":
        _emit_json(bench.cmd_plan(cfg), out)
    elif command == "estimate":
        _emit_json(bench.cmd_estimate(cfg), out)
    elif command == "bench":
        result = bench.cmd_bench(cfg)
        rows = [r.as_row() for r in result.rows]
        _emit_table(write_results_csv, rows, out)
        if out is not None:
            write_summary_csv(_summary_path(cfg, out), result.summary)
    else:
        result = bench.cmd_metric(cfg)
        if isinstance(result, dict):
            _emit_json(result, out)
        else:
            _emit_table(write_metric_csv, [r.as_row() for r in result.rows], out)
            if out is not None:
                write_metric_summary_csv(_summary_path(cfg, out), result.summary)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfcov",
        description="Multi-fidelity covariance estimation in the log-Euclidean geometry.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path, help="experiment config (JSON)")
    parser.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    parser.add_argument("--seed", type=int, default=None, help="root seed (unsigned 64-bit); overrides the config")
    parser.add_argument(
        "--verify-frechet",
        action="store_true",
        help="estimate: cross-check LEMF against its Fréchet-mean form",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = bench.load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed, output=args.out, verify_frechet=args.verify_frechet)
        return run(args.command, cfg)
    except (ConfigError, HierarchyError, BudgetError, OrderingError) as exc:
        print(f"mfcov: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"mfcov: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, DataFormatError) as exc:
        print(f"mfcov: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"mfcov: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
