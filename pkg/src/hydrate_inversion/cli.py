"""Command-line entry point: ``hydrate-inversion <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .pipeline import STAGES, Pipeline, StageError, load_params, simulate_to_csv

COMMANDS = STAGES + ("simulate", "all")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file (defaults apply when omitted)")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--workers", type=int, help="worker processes; 0 means all available cores")
    common.add_argument("--seed", type=int, help="base random seed (overrides seed)")
    common.add_argument("--subspace-dim", type=int, dest="subspace_dim", help="active subspace dimension k")
    common.add_argument("--force", action="store_true", help="rerun the stage even if it is up to date")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="hydrate-inversion",
        description="Active-subspace Bayesian calibration of a hydrate-bearing sand plasticity model.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "synth-data": "generate a synthetic dataset from the true parameters",
        "gradients": "sample misfit values and finite-difference gradients over the prior",
        "subspace": "estimate the gradient covariance spectrum and bootstrap errors",
        "surrogate": "fit the quadratic surface in the active variable",
        "mcmc": "run the active-variable Metropolis-Hastings chain",
        "reconstruct": "sample inactive variables and assemble full posterior samples",
        "report": "summarise posterior statistics and diagnostics",
        "simulate": "run one triaxial test and write its trajectory",
        "all": "run every stage in order, skipping those already up to date",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "simulate":
            p.add_argument("--params", type=Path,
                           help="YAML/JSON file with the plastic parameters by name, or x_norm: [...]")
            p.add_argument("--output", type=Path, help="trajectory CSV path (default OUT/trajectory.csv)")
    return parser


def _configure_logging(verbosity: int):
    level = logging.WARNING - 10 * min(verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        cfg = PipelineConfig.load(args.config, {
            "workers": args.workers,
            "seed": args.seed,
            "subspace.k": args.subspace_dim,
        })
    except (ConfigError, OSError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.data["output_dir"])

    try:
        if args.command == "simulate":
            if args.params is not None:
                pp = load_params(args.params, cfg)
            else:
                pp = cfg.box.to_physical([0.0] * cfg.box.dim)
            path = args.output or Path(out) / "trajectory.csv"
            traj = simulate_to_csv(cfg, pp, path)
            print(f"wrote {len(traj)} rows to {path}")
            return 0
        pipe = Pipeline(cfg, out, force=args.force)
        stages = STAGES if args.command == "all" else (args.command,)
        for stage in stages:
            ran = pipe.run(stage)
            print(f"{stage}: {'done' if ran else 'up to date'}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: stage '{args.command}': {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
