"""
Argument parsing and dispatch for the blockg command line.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from core.config import ConfigManager
from core.errors import BlockGError

from .commands import cmd_fit, cmd_predict
from .simulate import cmd_simulate_clp, cmd_simulate_consistency, cmd_simulate_grid

logger = logging.getLogger(__name__)

# argparse dest -> RunSettings field
SETTING_FLAGS = {
    "seed": "seed",
    "chains": "chains",
    "iters": "iterations",
    "burnin": "burn_in",
    "thin": "thin",
    "variant": "variant",
    "partition_file": "partition_file",
    "a": "a",
    "b": "b",
    "tau2": "tau2",
    "bb_c": "bb_c",
    "bb_d": "bb_d",
    "standardize": "standardize",
    "out_dir": "out_dir",
    "threads": "threads",
    "alpha_proposal_sd": "alpha_proposal_sd",
    "neal_aux_d": "neal_aux_d",
    "model_moves": "model_moves_per_iter",
    "size_cap": "enforce_size_cap",
    "write_draws": "write_draws",
    "log_level": "log_level",
}


def add_common_args(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every subcommand. Defaults are None so config files can fill them."""
    parser.add_argument("--config", type=str, default=None, help="key=value settings file.")
    parser.add_argument("--seed", type=int, default=None, help="Master seed.")
    parser.add_argument("--chains", type=int, default=None, help="Independent chains per fit.")
    parser.add_argument("--iters", type=int, default=None, help="Sweeps per chain, burn-in included.")
    parser.add_argument("--burnin", type=int, default=None, help="Discarded initial sweeps.")
    parser.add_argument("--thin", type=int, default=None, help="Keep every thin-th sweep.")
    parser.add_argument(
        "--variant",
        type=str,
        default=None,
        choices=["dp", "single-block", "all-singletons", "fixed-partition",
                 "single_block", "all_singletons", "fixed_partition"],
        help="Shrinkage structure.",
    )
    parser.add_argument("--partition-file", type=str, default=None,
                        help="CSV of block labels for fixed-partition.")
    parser.add_argument("--a", type=float, default=None, help="Beta-prime a (> -1).")
    parser.add_argument("--b", type=float, default=None, help="Beta-prime b (> -1).")
    parser.add_argument("--tau2", type=str, default=None, help="Beta-prime scale, or 'n'.")
    parser.add_argument("--bb-c", type=float, default=None, help="Beta-Binomial model prior c.")
    parser.add_argument("--bb-d", type=float, default=None, help="Beta-Binomial model prior d.")
    parser.add_argument("--standardize", action="store_const", const=True, default=None,
                        help="Scale covariates to unit standard deviation.")
    parser.add_argument("--out-dir", type=str, default=None, help="Output directory.")
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker processes (overrides BLOCKG_THREADS).")
    parser.add_argument("--alpha-proposal-sd", type=float, default=None,
                        help="Initial random-walk sd of log alpha.")
    parser.add_argument("--neal-aux-d", type=int, default=None,
                        help="Auxiliary blocks in the label scan.")
    parser.add_argument("--model-moves", type=int, default=None,
                        help="Model-jump proposals per sweep.")
    parser.add_argument("--no-size-cap", dest="size_cap", action="store_const", const=False,
                        default=None, help="Allow models with more than p-2 columns.")
    parser.add_argument("--log-level", type=str, default=None,
                        help="DEBUG, INFO, WARNING or ERROR.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockg",
        description="Bayesian variable selection with Dirichlet process mixtures of block g priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit a regression from a CSV file.")
    fit.add_argument("data", type=str, help="Input CSV with a header row.")
    fit.add_argument("--response", type=str, required=True, help="Response column.")
    fit.add_argument("--columns", type=str, default=None,
                     help="Comma-separated covariates (default: every other column).")
    fit.add_argument("--expand-interactions", action="store_true",
                     help="Add squares and pairwise products of the covariates.")
    fit.add_argument("--write-draws", action="store_const", const=True, default=None,
                     help="Also write every kept draw.")
    add_common_args(fit)
    fit.set_defaults(func=cmd_fit)

    predict = sub.add_parser("predict", help="Predictive intervals for new rows.")
    predict.add_argument("data", type=str, help="CSV of new rows (or the full data with --splits).")
    predict.add_argument("--artifact", type=str, default=None, help="fit_artifact.json from fit.")
    predict.add_argument("--response", type=str, default=None,
                         help="Response column; scored when present.")
    predict.add_argument("--columns", type=str, default=None, help="Covariates for --splits.")
    predict.add_argument("--expand-interactions", action="store_true",
                         help="Interaction design for --splits.")
    predict.add_argument("--level", type=float, default=0.95, help="Interval coverage.")
    predict.add_argument("--splits", type=int, default=None,
                         help="Random train/test splits fitted end to end.")
    predict.add_argument("--test-fraction", type=float, default=0.2, help="Held-out share per split.")
    add_common_args(predict)
    predict.set_defaults(func=cmd_predict)

    clp = sub.add_parser("simulate-clp", help="Bayes factors as one coefficient grows.")
    clp.add_argument("--n", type=int, default=100, help="Observations.")
    clp.add_argument("--beta0", type=float, default=0.5, help="Intercept.")
    clp.add_argument("--beta1", type=float, default=1.0, help="Fixed small coefficient.")
    clp.add_argument("--eta", type=str, default="0,0.5", help="Comma-separated covariate correlations.")
    clp.add_argument("--beta2-grid", type=str, default="0,30,60,90,120,150,180,210,240",
                     help="Comma-separated values of the growing coefficient.")
    clp.add_argument("--replicates", type=int, default=20, help="Datasets per correlation.")
    clp.add_argument("--method", choices=["exact", "mcmc"], default="exact",
                     help="How the shrinkage-difference probability is computed.")
    add_common_args(clp)
    clp.set_defaults(func=cmd_simulate_clp)

    grid = sub.add_parser("simulate-grid", help="Selection power across variants.")
    grid.add_argument("--n", type=int, default=150, help="Observations.")
    grid.add_argument("--p", type=int, default=60, help="Covariates.")
    grid.add_argument("--blocks", type=str, default="10,10,40",
                      help="Sizes of the large, small and null coefficient groups.")
    grid.add_argument("--large-sd", type=float, default=10.0, help="Sd of the large coefficients.")
    grid.add_argument("--noise-sd", type=float, default=1.0, help="Residual sd.")
    grid.add_argument("--eta", type=str, default="0,0.5", help="Comma-separated equicorrelations.")
    grid.add_argument("--replicates", type=int, default=20, help="Datasets per correlation.")
    grid.add_argument("--variants", type=str, default="dp,single_block,all_singletons,fixed_partition",
                      help="Comma-separated variants to compare.")
    grid.add_argument("--fixed-scheme", choices=["k3", "k2"], default="k3",
                      help="Blocks used by fixed_partition.")
    add_common_args(grid)
    grid.set_defaults(func=cmd_simulate_grid)

    consistency = sub.add_parser("simulate-consistency",
                                 help="Posterior probability of the true model as n grows.")
    consistency.add_argument("--n-grid", type=str, default="100,400,1600", help="Comma-separated n.")
    consistency.add_argument("--p", type=int, default=6, help="Covariates.")
    consistency.add_argument("--coefficients", type=str, default="1,-1",
                             help="Nonzero coefficients of the first columns.")
    consistency.add_argument("--noise-sd", type=float, default=1.0, help="Residual sd.")
    consistency.add_argument("--replicates", type=int, default=20, help="Datasets per n.")
    add_common_args(consistency)
    consistency.set_defaults(func=cmd_simulate_consistency)

    return parser


def resolve_config(args: argparse.Namespace) -> ConfigManager:
    """Defaults < environment < config file < flags."""
    config = ConfigManager(args.config)
    overrides = {field: getattr(args, dest, None) for dest, field in SETTING_FLAGS.items()}
    config.update_settings(**overrides)
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 on a runtime failure, 2 on invalid settings
    """
    args = build_parser().parse_args(sys.argv[1:] if argv is None else argv)

    level = (args.log_level or os.getenv("BLOCKG_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = resolve_config(args)
    except (FileNotFoundError, ValueError, KeyError) as e:
        logger.error("Invalid configuration: %s", e)
        return 2

    errors = config.validate_config()
    if errors:
        for error in errors:
            logger.error(error)
        return 2
    logger.debug(config.get_summary())

    try:
        return args.func(args, config)
    except BlockGError as e:
        logger.error("%s", e)
        return 1
    except ValueError as e:
        logger.error("Invalid arguments: %s", e)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
