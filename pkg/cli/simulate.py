"""
Simulation harnesses: the conditional Lindley paradox sweep, the
power/type I grid across shrinkage variants and the model-selection
consistency trend. Replicates run as independent tasks on the worker pool.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config import ConfigManager
from core.dispatcher import ChainDispatcher
from core.inference import (
    aggregate_selection_metrics,
    different_shrinkage_probability,
    merge_chains,
    mse_relative,
    selection_metrics,
)
from core.likelihood import log_bf_standard_mixture, log_marginal_dp_exact, r_squared
from core.model import (
    ModelIndicator,
    Variant,
    canonicalize_partition,
    center_dataset,
)
from core.numerics import RandomStream
from core.parser import write_json
from core.project import SCHEMA_VERSION
from core.sampler import run_chain, run_chains

from .commands import emit_table, log_progress, parse_list

logger = logging.getLogger(__name__)

SEED_HIGH = 2 ** 31


def equicorrelated_design(n: int, p: int, eta: float, rng: RandomStream) -> np.ndarray:
    """Standard normal columns with pairwise correlation eta."""
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    shared = rng.normal(size=(n, 1))
    return np.sqrt(1.0 - eta) * rng.normal(size=(n, p)) + np.sqrt(eta) * shared


def with_updates(model, **updates):
    """Re-validated copy of a pydantic settings model."""
    return type(model)(**{**model.model_dump(), **updates})


def dispatch(config: ConfigManager, fn, tasks: Sequence[Any]) -> List[Any]:
    dispatcher = ChainDispatcher(max_workers=config.settings.threads, progress_callback=log_progress)
    results = dispatcher.map(fn, tasks)
    logger.info(dispatcher.get_stats().get_summary())
    return results


# conditional Lindley paradox

def clp_replicate(task: Tuple) -> List[Dict[str, Any]]:
    """One dataset per (replicate, eta), swept over the growing coefficient."""
    replicate, eta, stream, opts = task
    rng = RandomStream(opts["seed"], stream)
    n, spec = opts["n"], opts["spec"]
    X = equicorrelated_design(n, 2, eta, rng)
    noise = rng.normal(size=n)
    chain_seed = rng.integers(SEED_HIGH)

    full = ModelIndicator.from_indices(2, [0, 1])
    nested = ModelIndicator.from_indices(2, [1])
    rows = []
    for beta2 in opts["grid"]:
        y = opts["beta0"] + opts["beta1"] * X[:, 0] + beta2 * X[:, 1] + noise
        ds = center_dataset(X, y, ("x1", "x2"))

        lm_full, partition_probs = log_marginal_dp_exact(ds, full, spec)
        lm_nested, _ = log_marginal_dp_exact(ds, nested, spec)
        hypergn = (log_bf_standard_mixture(r_squared(ds, full), n, 2, spec)
                   - log_bf_standard_mixture(r_squared(ds, nested), n, 1, spec))
        prob_diff = partition_probs.get((1, 2), 0.0)

        if opts["method"] == "mcmc":
            cfg = with_updates(opts["chain"], fixed_model=(0, 1), seed=chain_seed, n_chains=1)
            chain = run_chain(ds, spec, cfg)
            prob_diff = different_shrinkage_probability(chain, 0, 1)

        rows.append({
            "replicate": replicate,
            "eta": eta,
            "beta2": beta2,
            "log_bf_dp": lm_full - lm_nested,
            "log_bf_hypergn_quadrature": hypergn,
            "prob_diff_shrinkage": prob_diff,
        })
    return rows


def cmd_simulate_clp(args: argparse.Namespace, config: ConfigManager) -> int:
    """Log Bayes factor of the small effect as the other coefficient grows."""
    etas = parse_list(args.eta, float)
    grid = parse_list(args.beta2_grid, float)
    if args.replicates < 1:
        raise ValueError("replicates must be >= 1")
    spec = config.prior_spec(variant=Variant.DP, enforce_size_cap=False)
    opts = {
        "seed": config.settings.seed, "n": args.n, "beta0": args.beta0, "beta1": args.beta1,
        "grid": grid, "spec": spec, "method": args.method, "chain": config.chain_config(),
    }
    tasks = [(r, eta, e * args.replicates + r, opts)
             for e, eta in enumerate(etas) for r in range(args.replicates)]
    rows = [row for rows in dispatch(config, clp_replicate, tasks) for row in rows]

    table = pd.DataFrame(rows)
    out_dir = Path(config.settings.out_dir)
    emit_table(table, out_dir, "clp.csv", "clp")
    summary = (table.groupby(["eta", "beta2"], as_index=False)
               [["log_bf_dp", "log_bf_hypergn_quadrature", "prob_diff_shrinkage"]].mean())
    emit_table(summary, out_dir, "clp_summary.csv")
    return 0


# variant comparison grid

def fixed_scheme_labels(scheme: str, sizes: Tuple[int, int, int], rng: RandomStream) -> Tuple[int, ...]:
    """
    Fixed blocks over (large, small, null) columns.

    k3 puts each group in its own block. k2 joins the large group with a
    random half of the nulls and the small group with the other half.
    """
    n_large, n_small, n_null = sizes
    if scheme == "k3":
        raw = [1] * n_large + [2] * n_small + [3] * n_null
    elif scheme == "k2":
        null_labels = np.full(n_null, 2)
        null_labels[rng.generator.permutation(n_null)[: n_null // 2]] = 1
        raw = [1] * n_large + [2] * n_small + null_labels.tolist()
    else:
        raise ValueError(f"unknown fixed scheme: {scheme}")
    return canonicalize_partition(raw).labels


def grid_replicate(task: Tuple) -> List[Dict[str, Any]]:
    """All variants fitted to one simulated dataset."""
    replicate, eta, stream, opts = task
    rng = RandomStream(opts["seed"], stream)
    n, sizes = opts["n"], opts["sizes"]
    p = sum(sizes)
    n_large, n_small, _ = sizes
    large = np.arange(n_large)
    small = np.arange(n_large, n_large + n_small)

    X = equicorrelated_design(n, p, eta, rng)
    beta = np.zeros(p)
    beta[large] = rng.normal(0.0, opts["large_sd"], size=n_large)
    beta[small] = rng.normal(0.0, 1.0, size=n_small)
    y = X @ beta + opts["noise_sd"] * rng.normal(size=n)
    ds = center_dataset(X, y, [f"x{j + 1}" for j in range(p)])
    truth_mean = ds.X @ beta
    fixed = fixed_scheme_labels(opts["scheme"], sizes, rng)
    chain_seed = rng.integers(SEED_HIGH)

    rows, fitted = [], {}
    for variant in opts["variants"]:
        spec = with_updates(opts["spec"], variant=variant,
                            fixed_labels=fixed if variant == Variant.FIXED_PARTITION else None)
        cfg = with_updates(opts["chain"], seed=chain_seed)
        chain = merge_chains(run_chains(ds, spec, cfg))
        fitted[variant] = ds.X @ chain.beta.mean(axis=0)
        metrics = selection_metrics(chain.pips, beta != 0, small=small, large=large)
        rows.append({"replicate": replicate, "eta": eta, "variant": variant.value, **metrics,
                     "mse": float(np.mean((fitted[variant] - truth_mean) ** 2))})

    baseline = fitted.get(Variant.SINGLE_BLOCK)
    for row, variant in zip(rows, opts["variants"]):
        row["relative_mse"] = (mse_relative(fitted[variant], truth_mean, baseline)
                               if baseline is not None else None)
    return rows


def cmd_simulate_grid(args: argparse.Namespace, config: ConfigManager) -> int:
    """Power, type I error, F1 and relative MSE per variant."""
    sizes = tuple(parse_list(args.blocks, int))
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise ValueError("blocks must be three non-negative sizes (large, small, null)")
    if sum(sizes) != args.p:
        raise ValueError(f"block sizes sum to {sum(sizes)}, expected p={args.p}")
    if args.replicates < 1:
        raise ValueError("replicates must be >= 1")
    variants = [Variant.parse(v) for v in parse_list(args.variants)]
    etas = parse_list(args.eta, float)

    opts = {
        "seed": config.settings.seed, "n": args.n, "sizes": sizes, "large_sd": args.large_sd,
        "noise_sd": args.noise_sd, "scheme": args.fixed_scheme, "variants": variants,
        "spec": config.prior_spec(variant=Variant.DP),
        "chain": config.chain_config(),
    }
    tasks = [(r, eta, e * args.replicates + r, opts)
             for e, eta in enumerate(etas) for r in range(args.replicates)]
    rows = [row for rows in dispatch(config, grid_replicate, tasks) for row in rows]

    table = pd.DataFrame(rows)
    out_dir = Path(config.settings.out_dir)
    emit_table(table, out_dir, "grid_replicates.csv", "grid_replicates")

    summary = []
    metric_keys = ["power_small", "power_large", "power", "type1", "precision", "recall", "f1",
                   "mse", "relative_mse"]
    for (eta, variant), group in table.groupby(["eta", "variant"], sort=True):
        records = [{k: (None if pd.isna(v) else float(v)) for k, v in rec.items()}
                   for rec in group[metric_keys].to_dict("records")]
        summary.append({"eta": eta, "variant": variant, "replicates": len(group),
                        **aggregate_selection_metrics(records)})
    emit_table(pd.DataFrame(summary), out_dir, "grid_summary.csv")
    return 0


# model selection consistency

def consistency_replicate(task: Tuple) -> Dict[str, Any]:
    replicate, n, stream, opts = task
    rng = RandomStream(opts["seed"], stream)
    p, coefficients = opts["p"], opts["coefficients"]
    X = rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[: len(coefficients)] = coefficients
    y = X @ beta + opts["noise_sd"] * rng.normal(size=n)
    ds = center_dataset(X, y, [f"x{j + 1}" for j in range(p)])

    cfg = with_updates(opts["chain"], seed=rng.integers(SEED_HIGH))
    chain = merge_chains(run_chains(ds, opts["spec"], cfg))
    probs = chain.model_probabilities()
    true_key = tuple(range(len(coefficients)))
    return {"replicate": replicate, "n": n, "prob_true_model": float(probs.get(true_key, 0.0)),
            "posterior_mean_p_gamma": float(chain.p_gamma.mean())}


def cmd_simulate_consistency(args: argparse.Namespace, config: ConfigManager) -> int:
    """Posterior probability of a fixed true model over a grid of n."""
    n_grid = parse_list(args.n_grid, int)
    coefficients = parse_list(args.coefficients, float)
    if len(coefficients) > args.p - 2:
        raise ValueError("the true model must respect the p-2 size cap")
    if args.replicates < 1:
        raise ValueError("replicates must be >= 1")
    if Variant.parse(config.settings.variant) == Variant.FIXED_PARTITION:
        raise ValueError("simulate-consistency does not support fixed_partition")
    spec = config.prior_spec()

    opts = {"seed": config.settings.seed, "p": args.p, "coefficients": coefficients,
            "noise_sd": args.noise_sd, "spec": spec, "chain": config.chain_config()}
    tasks = [(r, n, i * args.replicates + r, opts)
             for i, n in enumerate(n_grid) for r in range(args.replicates)]
    table = pd.DataFrame(dispatch(config, consistency_replicate, tasks))

    out_dir = Path(config.settings.out_dir)
    emit_table(table, out_dir, "consistency.csv", "consistency")
    summary = table.groupby("n")["prob_true_model"].agg(["median", "mean"]).reset_index()
    emit_table(summary, out_dir, "consistency_summary.csv")
    write_json({"schema_version": SCHEMA_VERSION, "settings": config.as_dict(),
                "median_prob_true_model": {str(int(n)): float(m) for n, m in
                                           zip(summary["n"], summary["median"])}},
               str(out_dir / "consistency_summary.json"))
    return 0
