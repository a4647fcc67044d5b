"""
fit and predict subcommands.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.config import ConfigManager
from core.errors import SchemaError
from core.inference import (
    ChainOutput,
    interval_score,
    interval_score_summary,
    merge_chains,
    predict,
)
from core.model import Dataset, PriorSpec, Variant, center_dataset
from core.numerics import RandomStream
from core.parser import (
    DataParser,
    Splitter,
    design_rows,
    expand_interactions,
    load_dataset,
    read_partition_file,
    write_json,
    write_table,
)
from core.project import SCHEMA_VERSION, FitArtifact, FitProjectManager
from core.sampler import run_chains
from core.validator import OutputValidator

logger = logging.getLogger(__name__)

# Stream index reserved for train/test splitting, away from chain indices.
SPLIT_STREAM = 1_000_003


def log_progress(current: int, total: int, message: str):
    logger.info("[%d/%d] %s", current, total, message)


def parse_list(text: Optional[str], cast=str) -> Optional[List[Any]]:
    """Comma-separated values, or None."""
    if text is None:
        return None
    return [cast(part.strip()) for part in text.split(",") if part.strip()]


def emit_table(df: pd.DataFrame, out_dir: Path, name: str, schema: Optional[str] = None) -> Path:
    """Validate (when a schema is known) and write one CSV."""
    if schema is not None:
        ok, errors = OutputValidator.validate_table(df, schema)
        if not ok:
            raise SchemaError(f"{name}: {'; '.join(errors)}")
    path = out_dir / name
    write_table(df, str(path))
    logger.info("Wrote %s (%d rows)", path, len(df))
    return path


def check_feasible(ds: Dataset, spec: PriorSpec):
    """At least one single-column model must be admissible."""
    largest = min(ds.p - 2 if spec.enforce_size_cap else ds.p, ds.n - 2)
    if largest < 1:
        raise SchemaError(
            f"no admissible model for n={ds.n}, p={ds.p}"
            + (" with the p-2 size cap" if spec.enforce_size_cap else "")
        )


def build_spec(config: ConfigManager, column_names: Sequence[str]) -> PriorSpec:
    """PriorSpec of the settings, reading the partition file for fixed_partition."""
    settings = config.settings
    fixed = None
    if Variant.parse(settings.variant) == Variant.FIXED_PARTITION:
        fixed = read_partition_file(settings.partition_file, column_names)
    return config.prior_spec(fixed)


def fit_dataset(ds: Dataset, config: ConfigManager, spec: PriorSpec, **chain_overrides) -> ChainOutput:
    """Run the configured chains and merge their draws."""
    check_feasible(ds, spec)
    cfg = config.chain_config(**chain_overrides)
    chains = run_chains(ds, spec, cfg, max_workers=config.settings.threads, progress=log_progress)
    return merge_chains(chains)


def coefficient_table(chain: ChainOutput, ds: Dataset, level: float = 0.95) -> pd.DataFrame:
    """Model-averaged coefficients on the design and original scales."""
    tail = 0.5 * (1.0 - level)
    scales = np.asarray(ds.column_scales, dtype=float)
    mean = chain.beta.mean(axis=0)
    return pd.DataFrame({
        "column": list(chain.column_names),
        "posterior_mean": mean,
        "posterior_mean_original_scale": mean / scales,
        "lower": np.quantile(chain.beta, tail, axis=0),
        "upper": np.quantile(chain.beta, 1.0 - tail, axis=0),
        "pip": chain.pips,
    })


def draws_table(chain: ChainOutput) -> pd.DataFrame:
    """One row per kept draw."""
    table = {
        "draw": np.arange(chain.n_draws),
        "beta0": chain.beta0,
        "sigma2": chain.sigma2,
        "alpha": chain.alpha,
        "p_gamma": chain.p_gamma,
        "K": chain.K,
        "log_marginal": chain.log_marginal,
    }
    for j, name in enumerate(chain.column_names):
        table[f"beta[{name}]"] = chain.beta[:, j]
    for j, name in enumerate(chain.column_names):
        table[f"label[{name}]"] = chain.labels[:, j]
    return pd.DataFrame(table)


def cmd_fit(args: argparse.Namespace, config: ConfigManager) -> int:
    """Fit the configured chains and write the posterior summaries."""
    settings = config.settings
    out_dir = Path(settings.out_dir)
    columns = parse_list(args.columns)

    ds, base_columns = load_dataset(
        args.data, args.response, columns,
        standardize=settings.standardize, interactions=args.expand_interactions,
    )
    logger.info("Loaded %s: n=%d, p=%d", args.data, ds.n, ds.p)
    spec = build_spec(config, ds.column_names)
    chain = fit_dataset(ds, config, spec)

    emit_table(pd.DataFrame({"column": list(ds.column_names), "pip": chain.pips}),
               out_dir, "pips.csv", "pips")
    emit_table(coefficient_table(chain, ds), out_dir, "coefficients.csv", "coefficients")
    emit_table(chain.model_size_hist().rename_axis("p_gamma").reset_index(),
               out_dir, "model_size_hist.csv", "model_size_hist")
    emit_table(chain.cluster_hist().rename_axis("K").reset_index(),
               out_dir, "cluster_hist.csv", "cluster_hist")
    emit_table(chain.joint_pk_hist(), out_dir, "joint_pk_hist.csv", "joint_pk_hist")
    if settings.write_draws:
        emit_table(draws_table(chain), out_dir, "draws.csv")

    summary = {
        "schema_version": SCHEMA_VERSION,
        "data": {"file": Path(args.data).name, "response": args.response, "n": ds.n, "p": ds.p,
                 "expand_interactions": bool(args.expand_interactions)},
        "settings": config.as_dict(),
        "prior": spec.model_dump(mode="json"),
        "posterior": chain.summary(),
    }
    write_json(summary, str(out_dir / "chain_summary.json"))

    artifact = FitArtifact.from_chain(
        chain, ds, args.response, config.as_dict(),
        standardize=settings.standardize,
        expand_interactions=bool(args.expand_interactions),
        base_columns=list(base_columns),
    )
    FitProjectManager().save_artifact(artifact, str(out_dir / "fit_artifact.json"))
    return 0


def score_predictions(predictions: pd.DataFrame, y: np.ndarray, level: float) -> pd.DataFrame:
    """Add the observed response and its interval score."""
    scored = predictions.copy()
    scored["y"] = y
    scored["interval_score"] = interval_score(scored["lower"].to_numpy(), scored["upper"].to_numpy(),
                                              y, level)
    return scored


def _predict_from_artifact(args: argparse.Namespace, config: ConfigManager) -> int:
    settings = config.settings
    out_dir = Path(settings.out_dir)
    manager = FitProjectManager()
    artifact = manager.load_artifact(args.artifact)
    logger.info(manager.get_summary())

    df = DataParser.read_table(args.data)
    X = design_rows(df, artifact.base_columns, artifact.column_names, artifact.expand_interactions)
    chain = artifact.to_chain()
    rng = RandomStream(settings.seed, SPLIT_STREAM)
    predictions = predict(chain, artifact, X, level=args.level, rng=rng)

    response = args.response or artifact.response
    if response in df.columns:
        y = df[response].to_numpy(dtype=float)
        predictions = score_predictions(predictions, y, args.level)
        summary = interval_score_summary(predictions["lower"], predictions["upper"], y, args.level)
        write_json({
            "schema_version": SCHEMA_VERSION,
            "mse": float(np.mean((predictions["mean"] - y) ** 2)),
            "interval_score_mean": summary["mean"],
            "interval_score_median": summary["median"],
            "level": args.level,
        }, str(out_dir / "prediction_summary.json"))

    emit_table(predictions, out_dir, "predictions.csv", "predictions")
    return 0


def evaluate_split(X: np.ndarray, y: np.ndarray, names: List[str], split, spec: PriorSpec,
                   config: ConfigManager, level: float, stream_seed: int) -> Dict[str, Any]:
    """Fit on the training rows and score the held-out rows."""
    train = center_dataset(X[split.train], y[split.train], names, config.settings.standardize)
    chain = fit_dataset(train, config, spec, seed=stream_seed)
    rng = RandomStream(stream_seed, SPLIT_STREAM)
    out = predict(chain, train, X[split.test], level=level, rng=rng)
    y_test = y[split.test]
    scores = interval_score_summary(out["lower"], out["upper"], y_test, level)
    return {
        "split": split.index,
        "n_train": int(split.train.size),
        "n_test": int(split.test.size),
        "mse": float(np.mean((out["mean"].to_numpy() - y_test) ** 2)),
        "mse_null": float(np.mean((train.y_mean - y_test) ** 2)),
        "interval_score_mean": scores["mean"],
        "interval_score_median": scores["median"],
    }


def _predict_splits(args: argparse.Namespace, config: ConfigManager) -> int:
    settings = config.settings
    if not args.response:
        raise ValueError("--splits needs --response")
    df = DataParser.read_table(args.data)
    X, y, names = DataParser.parse(df, args.response, parse_list(args.columns))
    if args.expand_interactions:
        expanded = expand_interactions(pd.DataFrame(X, columns=names), names)
        X, names = expanded.to_numpy(), list(expanded.columns)

    rng = RandomStream(settings.seed, SPLIT_STREAM)
    splits = Splitter.random_splits(len(y), args.splits, args.test_fraction, rng)
    spec = build_spec(config, names)
    # splits run one after another; chains inside a split use the worker pool
    rows = []
    for split in splits:
        rows.append(evaluate_split(X, y, names, split, spec, config, args.level, rng.integers(2 ** 31)))
        logger.info("split %d: mse %.4g, mean IS %.4g", split.index, rows[-1]["mse"],
                    rows[-1]["interval_score_mean"])

    table = pd.DataFrame(rows)
    out_dir = Path(settings.out_dir)
    emit_table(table, out_dir, "splits.csv")
    write_json({
        "schema_version": SCHEMA_VERSION,
        "splits": args.splits,
        "test_fraction": args.test_fraction,
        "mse_mean": float(table["mse"].mean()),
        "mse_null_mean": float(table["mse_null"].mean()),
        "interval_score_mean": float(table["interval_score_mean"].mean()),
        "interval_score_median": float(table["interval_score_median"].median()),
        "settings": config.as_dict(),
    }, str(out_dir / "splits_summary.json"))
    return 0


def cmd_predict(args: argparse.Namespace, config: ConfigManager) -> int:
    """Predict from a fit artifact, or evaluate random train/test splits end to end."""
    if args.splits is not None:
        return _predict_splits(args, config)
    if not args.artifact:
        raise ValueError("predict needs --artifact or --splits")
    return _predict_from_artifact(args, config)
