"""Command line entry point: `usaav <command> [options]`.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
run aborts on a numerical or geometric failure.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from usaav import __version__
from usaav.config import (
    DEFAULT_LOG_LEVEL,
    DEFAULT_MAXIMIZER_TRIALS,
)
from usaav.errors import ConfigError, USAAVError
from usaav.experiment.scenarios import (
    MAXIMIZER_KINDS,
    RUNNERS,
    run_maximizer,
)
from usaav.experiment.settings import (
    MODELS,
    ExperimentConfig,
    apply_overrides,
    default_config,
    load_config,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3

# subcommand -> scenario
COMMANDS = {
    "simulate": "single",
    "exp1": "exp1",
    "exp2": "exp2",
    "dobrushin": "dobrushin",
    "metastab": "metastab",
    "maximizer": "single",
}


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=str, help="JSON config file. Flags override it."
    )
    common.add_argument(
        "--log-level",
        type=str,
        default=DEFAULT_LOG_LEVEL,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity.",
    )
    common.add_argument(
        "--n", type=int, nargs="+", help="Particle count(s)."
    )
    common.add_argument("--beta", type=float, help="Inverse temperature.")
    common.add_argument("--seed", type=int, help="Master seed.")
    common.add_argument("--seeds", type=int, help="Seeds per cell.")
    common.add_argument("--dt", type=float, help="Heun step size.")
    common.add_argument(
        "--t-final", dest="t_final", type=float, help="Final time."
    )
    common.add_argument(
        "--out", type=str, help="Output directory for all files."
    )
    common.add_argument(
        "--workers", type=int, help="Worker processes for independent runs."
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="usaav",
        description="Unnormalized self-attention dynamics with auxiliary "
        "variables on the sphere",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser(
        "simulate", parents=[common], help="Run one model once."
    )
    simulate.add_argument(
        "--model", nargs="+", choices=sorted(MODELS), help="Model name(s)."
    )

    exp1 = sub.add_parser(
        "exp1", parents=[common], help="Anti-collapse comparison."
    )
    exp1.add_argument(
        "--model", nargs="+", choices=sorted(MODELS), help="Model name(s)."
    )

    exp2 = sub.add_parser(
        "exp2", parents=[common], help="Limiting-shape scenarios."
    )
    exp2.add_argument(
        "--scenario", nargs="+", help="Subset of the exp2 scenarios."
    )

    sub.add_parser(
        "dobrushin", parents=[common], help="Finite-n convergence trend."
    )
    sub.add_parser(
        "metastab", parents=[common], help="Metastability beta sweep."
    )

    maximizer = sub.add_parser(
        "maximizer", parents=[common], help="Constructed energy maximizer."
    )
    maximizer.add_argument(
        "--kind", required=True, choices=list(MAXIMIZER_KINDS),
        help="Which maximizer to build.",
    )
    maximizer.add_argument(
        "--trials",
        type=int,
        default=DEFAULT_MAXIMIZER_TRIALS,
        help="Random tangent perturbations to evaluate.",
    )

    validate = sub.add_parser(
        "validate-config", help="Check a config file and print its hash."
    )
    validate.add_argument("--config", type=str, required=True)
    validate.add_argument(
        "--log-level", type=str, default=DEFAULT_LOG_LEVEL,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """File config (or the command's defaults) with flags applied."""
    scenario = COMMANDS[args.command]
    if args.config:
        cfg = load_config(args.config)
        if cfg.scenario != scenario and args.command != "maximizer":
            raise ConfigError(
                f"Error: config scenario '{cfg.scenario}' does not match "
                f"command '{args.command}'."
            )
    else:
        cfg = default_config(scenario)
    return apply_overrides(
        cfg,
        n=args.n,
        beta=args.beta,
        seed=args.seed,
        out=args.out,
        dt=args.dt,
        t_final=args.t_final,
        model=getattr(args, "model", None),
        scenario=getattr(args, "scenario", None),
        workers=args.workers,
        seeds=args.seeds,
    )


def run(args: argparse.Namespace) -> dict:
    if args.command == "validate-config":
        cfg = load_config(args.config)
        return {"scenario": cfg.scenario, "config_hash": cfg.config_hash}
    cfg = resolve_config(args)
    logger.info("Config hash %s", cfg.config_hash)
    if args.command == "maximizer":
        return run_maximizer(cfg, args.kind, trials=args.trials)
    return RUNNERS[cfg.scenario](cfg)


def cli(argv: Optional[List[str]] = None) -> int:
    """Parses `argv`, runs the command and returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = run(args)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    except USAAVError as e:
        print(e, file=sys.stderr)
        return EXIT_RUN
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
