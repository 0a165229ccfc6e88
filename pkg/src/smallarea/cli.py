"""Command-line interface.

Subcommands: fit (sampler only), cv (selection curve only), estimate
(point estimates), bootstrap (estimates plus MSE), run (everything),
plot-data (tidy CSVs from a finished run).  Exit codes: 0 success,
2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .exceptions import NumericalError, ValidationError
from .pipeline import (
    PLOT_KINDS,
    RunConfig,
    cv_only,
    emit_plot_data,
    fit_only,
    read_report,
    run_pipeline,
)
from .selection import default_gamma_grid


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, type=Path, help="flat key/value config file")
    sub.add_argument("--seed", type=int, default=None, help="override the master seed")
    sub.add_argument("--out", type=Path, default=None, help="override the output directory")
    gamma = sub.add_mutually_exclusive_group()
    gamma.add_argument("--gamma", type=float, default=None, help="fixed smoothing factor")
    gamma.add_argument(
        "--gamma-grid",
        default=None,
        metavar="LO,HI,N",
        help="log grid of candidate smoothing factors",
    )
    sub.add_argument(
        "--benchmark-target", type=float, default=None, help="override the benchmark target"
    )
    sub.add_argument(
        "--bootstrap-reps", type=int, default=None, help="override the bootstrap replicate count"
    )


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
        updates["gibbs"] = replace(config.gibbs, seed=args.seed)
        updates["bootstrap_gibbs"] = replace(config.bootstrap_gibbs, seed=args.seed)
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.gamma is not None:
        updates["gamma"] = args.gamma
        updates["gamma_grid"] = None
    elif args.gamma_grid is not None:
        parts = args.gamma_grid.split(",")
        if len(parts) != 3:
            raise ValidationError(f"--gamma-grid must be LO,HI,N, got {args.gamma_grid!r}")
        try:
            grid = default_gamma_grid(float(parts[0]), float(parts[1]), int(parts[2]))
        except ValueError:
            raise ValidationError(f"--gamma-grid must be LO,HI,N, got {args.gamma_grid!r}") from None
        updates["gamma"] = None
        updates["gamma_grid"] = grid
    if args.benchmark_target is not None:
        updates["benchmark_target"] = args.benchmark_target
    if args.bootstrap_reps is not None:
        updates["bootstrap_replicates"] = args.bootstrap_reps
    return replace(config, **updates) if updates else config


def _cmd_fit(args) -> int:
    path = fit_only(_load_config(args))
    print(path)
    return 0


def _cmd_cv(args) -> int:
    path = cv_only(_load_config(args))
    print(path)
    return 0


def _cmd_estimate(args) -> int:
    config = replace(_load_config(args), bootstrap_replicates=0)
    report = run_pipeline(config)
    print(Path(config.output_dir) / "estimates.csv")
    return 0


def _cmd_bootstrap(args) -> int:
    config = _load_config(args)
    if config.bootstrap_replicates < 1:
        raise ValidationError("bootstrap requires bootstrap_replicates >= 1 (or --bootstrap-reps)")
    run_pipeline(config)
    print(Path(config.output_dir) / "bootstrap_mse.csv")
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    run_pipeline(config)
    print(config.output_dir)
    return 0


def _cmd_plot_data(args) -> int:
    config = _load_config(args)
    report = read_report(config.output_dir)
    path = emit_plot_data(report, args.kind, config.output_dir)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smallarea",
        description="Constrained Bayes small-area estimation pipeline",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, func, text in (
        ("fit", _cmd_fit, "run the Gibbs sampler only"),
        ("cv", _cmd_cv, "compute the cross-validation curve only"),
        ("estimate", _cmd_estimate, "full point estimates, no bootstrap"),
        ("bootstrap", _cmd_bootstrap, "estimates plus bootstrap MSE"),
        ("run", _cmd_run, "everything the config asks for"),
        ("plot-data", _cmd_plot_data, "emit plot-ready CSVs from a finished run"),
    ):
        sub = subs.add_parser(name, help=text)
        _add_common(sub)
        if name == "plot-data":
            sub.add_argument("--kind", required=True, choices=PLOT_KINDS)
        sub.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
