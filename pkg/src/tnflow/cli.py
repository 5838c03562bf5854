"""Command-line entry point.

``tnflow <scenario> --config FILE --out DIR [--seed N] [--workers K]``
``tnflow compare RUN_A RUN_B [--metric relative|max]``

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import SCENARIOS, ConfigError, parse_config

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _numerical_errors() -> tuple:
    from .core.solvers import SolverStagnation
    from .flow import PoissonFailure
    from .grids import GridConvergenceError, GridFoldError
    from .harness import NotConverged
    from .vqa import VanishingSuccessError
    return (PoissonFailure, SolverStagnation, GridFoldError, GridConvergenceError, VanishingSuccessError,
            NotConverged, FloatingPointError, ArithmeticError)


def _config_errors() -> tuple:
    from .flow import CFLViolation
    return (ConfigError, CFLViolation)


def exit_code(exc: BaseException) -> int:
    cause = getattr(exc, "cause", exc)
    if isinstance(cause, _numerical_errors()):
        return EXIT_NUMERICAL
    if isinstance(cause, _config_errors()):
        return EXIT_CONFIG
    return EXIT_ERROR


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tnflow", description="Tensor-network wave and flow solvers.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        s = sub.add_parser(name, help=f"run the {name} scenario")
        s.add_argument("--config", type=Path, help="INI file; omitted keys take their defaults")
        s.add_argument("--out", type=Path, required=True, help="output directory")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--workers", type=int, default=1, help="worker processes (bench only)")
    c = sub.add_parser("compare", help="difference norms between two run directories")
    c.add_argument("run_a", type=Path)
    c.add_argument("run_b", type=Path)
    c.add_argument("--metric", choices=("relative", "max"), default="relative")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    from . import harness
    if args.command == "compare":
        report = harness.compare(args.run_a, args.run_b, args.metric)
        print("\n".join(report.lines()))
        return EXIT_OK
    if not 0 <= args.seed < 1 << 64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, args.command, args.seed)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = harness.run(cfg, args.out, args.workers)
    except harness.RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    for k, v in manifest.metrics.items():
        print(f"{k}: {harness._fmt(v)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
