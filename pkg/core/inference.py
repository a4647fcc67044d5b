"""
Posterior Summaries
Stored draws, inclusion probabilities, model-averaged estimates, predictive
intervals and the selection/prediction scores used by the experiments.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .numerics import RandomStream, effective_sample_size

logger = logging.getLogger(__name__)

ColumnRef = Union[int, str]


@dataclass
class ChainOutput:
    """Kept draws of one or more chains, one row per draw."""
    column_names: List[str]
    gamma: np.ndarray          # (D, p) bool
    beta: np.ndarray           # (D, p), 0 where excluded
    beta0: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    p_gamma: np.ndarray
    K: np.ndarray
    labels: np.ndarray         # (D, p), 0 where excluded
    g_effective: np.ndarray    # (D, p) tau^2 g_tilde of the coefficient's block, 0 where excluded
    log_marginal: np.ndarray
    g_tilde: List[np.ndarray] = field(default_factory=list)
    move_stats: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return int(self.gamma.shape[0])

    @property
    def p(self) -> int:
        return int(self.gamma.shape[1])

    def column_index(self, j: ColumnRef) -> int:
        if isinstance(j, str):
            if j not in self.column_names:
                raise KeyError(f"unknown column '{j}'")
            return self.column_names.index(j)
        if not 0 <= j < self.p:
            raise KeyError(f"column index {j} outside 0..{self.p - 1}")
        return int(j)

    @property
    def pips(self) -> np.ndarray:
        return self.gamma.mean(axis=0)

    def model_size_hist(self) -> pd.Series:
        return pd.Series(self.p_gamma).value_counts(normalize=True).sort_index().rename("probability")

    def cluster_hist(self) -> pd.Series:
        return pd.Series(self.K).value_counts(normalize=True).sort_index().rename("probability")

    def joint_pk_hist(self) -> pd.DataFrame:
        frame = pd.DataFrame({"p_gamma": self.p_gamma, "K": self.K})
        out = frame.value_counts(normalize=True).rename("probability").reset_index()
        return out.sort_values(["p_gamma", "K"]).reset_index(drop=True)

    def model_probabilities(self) -> pd.Series:
        """Visit frequency of each model, keyed by included column indices."""
        counts = Counter(tuple(np.flatnonzero(row).tolist()) for row in self.gamma)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        # tupleize_cols=False keeps one flat index of tuples instead of a MultiIndex
        index = pd.Index([key for key, _ in ranked], dtype=object, tupleize_cols=False)
        return pd.Series([c / self.n_draws for _, c in ranked], index=index, name="probability")

    def summary(self) -> Dict[str, Any]:
        """JSON-ready digest of the chain."""
        ess = {
            "sigma2": effective_sample_size(self.sigma2),
            "p_gamma": effective_sample_size(self.p_gamma),
            "K": effective_sample_size(self.K),
        }
        return {
            "n_draws": self.n_draws,
            "columns": list(self.column_names),
            "pip": {name: float(v) for name, v in zip(self.column_names, self.pips)},
            "posterior_mean_sigma2": float(self.sigma2.mean()),
            "posterior_mean_p_gamma": float(self.p_gamma.mean()),
            "posterior_mean_K": float(self.K.mean()),
            "effective_sample_size": {k: float(v) for k, v in ess.items()},
            "move_stats": self.move_stats,
        }


class DrawRecorder:
    """Accumulates kept states and packs them into a ChainOutput."""

    def __init__(self, p: int, tau2: float):
        self.p = p
        self.tau2 = tau2
        self._rows: Dict[str, list] = {k: [] for k in (
            "gamma", "beta", "beta0", "sigma2", "alpha", "p_gamma", "K", "labels",
            "g_effective", "log_marginal", "g_tilde")}

    def record(self, state, log_marginal: float):
        idx = state.indicator.indices
        beta = np.zeros(self.p)
        labels = np.zeros(self.p, dtype=int)
        g_eff = np.zeros(self.p)
        if idx.size:
            beta[idx] = state.beta
            labels[idx] = state.partition.labels
            g_eff[idx] = self.tau2 * state.shrinkage.g_tilde[state.partition.label_array() - 1]
        rows = self._rows
        rows["gamma"].append(state.indicator.gamma.copy())
        rows["beta"].append(beta)
        rows["beta0"].append(state.beta0)
        rows["sigma2"].append(state.sigma2)
        rows["alpha"].append(state.alpha)
        rows["p_gamma"].append(state.p_gamma)
        rows["K"].append(state.K)
        rows["labels"].append(labels)
        rows["g_effective"].append(g_eff)
        rows["log_marginal"].append(log_marginal)
        rows["g_tilde"].append(state.shrinkage.g_tilde.copy())

    def finish(self, column_names: Sequence[str], move_stats: Dict[str, Any],
               config: Dict[str, Any]) -> ChainOutput:
        rows = self._rows
        p = self.p

        def stack(key, dtype=float):
            return np.asarray(rows[key], dtype=dtype).reshape(-1, p)

        return ChainOutput(
            column_names=list(column_names),
            gamma=stack("gamma", bool),
            beta=stack("beta"),
            beta0=np.asarray(rows["beta0"], dtype=float),
            sigma2=np.asarray(rows["sigma2"], dtype=float),
            alpha=np.asarray(rows["alpha"], dtype=float),
            p_gamma=np.asarray(rows["p_gamma"], dtype=int),
            K=np.asarray(rows["K"], dtype=int),
            labels=stack("labels", int),
            g_effective=stack("g_effective"),
            log_marginal=np.asarray(rows["log_marginal"], dtype=float),
            g_tilde=rows["g_tilde"],
            move_stats=move_stats,
            config=config,
        )


def merge_chains(chains: Sequence[ChainOutput]) -> ChainOutput:
    """Concatenate draws of several chains over the same columns."""
    if not chains:
        raise ValueError("no chains to merge")
    first = chains[0]
    if any(c.column_names != first.column_names for c in chains):
        raise ValueError("chains disagree on column names")

    def cat(name):
        return np.concatenate([getattr(c, name) for c in chains], axis=0)

    return ChainOutput(
        column_names=list(first.column_names),
        gamma=cat("gamma"), beta=cat("beta"), beta0=cat("beta0"), sigma2=cat("sigma2"),
        alpha=cat("alpha"), p_gamma=cat("p_gamma"), K=cat("K"), labels=cat("labels"),
        g_effective=cat("g_effective"), log_marginal=cat("log_marginal"),
        g_tilde=[g for c in chains for g in c.g_tilde],
        move_stats={f"chain_{i}": c.move_stats for i, c in enumerate(chains)},
        config=first.config,
    )


def _require_draws(chain: ChainOutput):
    if chain.n_draws == 0:
        raise ValueError("chain has no kept draws")


def pip(chain: ChainOutput, j: ColumnRef) -> float:
    """Fraction of kept draws that include column j."""
    _require_draws(chain)
    return float(chain.gamma[:, chain.column_index(j)].mean())


def coefficient_posterior_mean(chain: ChainOutput, j: ColumnRef) -> float:
    """Model-averaged mean of beta_j, counting excluded draws as 0."""
    _require_draws(chain)
    return float(chain.beta[:, chain.column_index(j)].mean())


def different_shrinkage_probability(chain: ChainOutput, i: ColumnRef, j: ColumnRef) -> float:
    """Fraction of draws where columns i and j are both included and in different blocks."""
    _require_draws(chain)
    li = chain.labels[:, chain.column_index(i)]
    lj = chain.labels[:, chain.column_index(j)]
    return float(np.mean((li > 0) & (lj > 0) & (li != lj)))


def posterior_log_bf_estimate(chain: ChainOutput, null_log_marginal: float) -> float:
    """
    Bayes factor of a pinned model against the null from posterior draws,
    by the reciprocal identity 1/BF = E_post[f(y | null) / f(y | g)].

    The estimate has finite variance only when a > p_gamma / 2 - 1.
    """
    _require_draws(chain)
    diffs = null_log_marginal - chain.log_marginal
    return float(-(logsumexp(diffs) - math.log(diffs.size)))


def predict(
    chain: ChainOutput,
    ds,
    X_new: np.ndarray,
    level: float = 0.95,
    rng: Optional[RandomStream] = None,
    noise: bool = True,
    return_draws: bool = False,
):
    """
    Posterior predictive mean and equal-tailed interval per new row.

    Args:
        chain: Kept draws
        ds: Anything exposing column_means and column_scales of the training design
        X_new: Rows on the original column scale
        level: Interval coverage, e.g. 0.95
        rng: Random stream for the noise draws
        noise: Add N(0, sigma2) to every predictive draw
        return_draws: Also return the (draws x rows) predictive matrix

    Returns:
        DataFrame with columns mean, lower, upper (and the draws if requested)
    """
    _require_draws(chain)
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != chain.p:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, expected {chain.p}")
    rng = rng or RandomStream(0)

    Z = (X_new - np.asarray(ds.column_means)) / np.asarray(ds.column_scales)
    draws = chain.beta0[:, None] + chain.beta @ Z.T
    if noise:
        draws = draws + rng.normal(size=draws.shape) * np.sqrt(chain.sigma2)[:, None]

    tail = 0.5 * (1.0 - level)
    out = pd.DataFrame({
        "mean": draws.mean(axis=0),
        "lower": np.quantile(draws, tail, axis=0),
        "upper": np.quantile(draws, 1.0 - tail, axis=0),
    })
    return (out, draws) if return_draws else out


def interval_score(l, u, z, alpha_lvl: float):
    """
    Interval score (u - l) + (2/(1-level)) (l - z) 1{z < l} + (2/(1-level)) (z - u) 1{z > u}.

    alpha_lvl is the nominal coverage (0.95 gives a penalty factor of 40).
    """
    if not 0.0 < alpha_lvl < 1.0:
        raise ValueError("alpha_lvl must lie in (0, 1)")
    l, u, z = (np.asarray(v, dtype=float) for v in (l, u, z))
    if np.any(l > u):
        raise ValueError("interval lower bound exceeds upper bound")
    factor = 2.0 / (1.0 - alpha_lvl)
    score = (u - l) + factor * np.maximum(l - z, 0.0) + factor * np.maximum(z - u, 0.0)
    return float(score) if score.ndim == 0 else score


def interval_score_summary(l, u, z, alpha_lvl: float) -> Dict[str, float]:
    """Mean and median interval score over rows."""
    scores = np.atleast_1d(interval_score(l, u, z, alpha_lvl))
    return {"mean": float(scores.mean()), "median": float(np.median(scores))}


def _rate(selected: np.ndarray, mask: np.ndarray) -> Optional[float]:
    return float(selected[mask].mean()) if mask.any() else None


def selection_metrics(
    pips: Sequence[float],
    truth: Sequence[bool],
    small: Optional[Sequence[int]] = None,
    large: Optional[Sequence[int]] = None,
    threshold: float = 0.5,
) -> Dict[str, Optional[float]]:
    """
    Power, type I error and F1 of the rule PIP > threshold.

    Undefined rates (empty classes, no predicted positives) are None.
    """
    pips = np.asarray(pips, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if pips.shape != truth.shape:
        raise ValueError("pips and truth must have the same length")
    selected = pips > threshold

    def mask_of(indices):
        mask = np.zeros(truth.size, dtype=bool)
        if indices is not None:
            mask[list(indices)] = True
        return mask

    tp = int(np.sum(selected & truth))
    fp = int(np.sum(selected & ~truth))
    fn = int(np.sum(~selected & truth))
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)

    return {
        "power_small": _rate(selected, mask_of(small)),
        "power_large": _rate(selected, mask_of(large)),
        "power": _rate(selected, truth),
        "type1": _rate(selected, ~truth),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def aggregate_selection_metrics(rows: Sequence[Dict[str, Optional[float]]]) -> Dict[str, Optional[float]]:
    """Mean of every metric over the defined entries, plus '<name>_undefined' counts."""
    keys: List[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    out: Dict[str, Optional[float]] = {}
    for key in keys:
        values = [row.get(key) for row in rows]
        defined = [v for v in values if v is not None]
        out[key] = float(np.mean(defined)) if defined else None
        out[f"{key}_undefined"] = len(values) - len(defined)
    return out


def mse_relative(est, truth, baseline) -> float:
    """MSE of est divided by the MSE of baseline, both against truth."""
    est, truth, baseline = (np.asarray(v, dtype=float) for v in (est, truth, baseline))
    if not (est.shape == truth.shape == baseline.shape):
        raise ValueError("est, truth and baseline must have equal lengths")
    base = float(np.mean((baseline - truth) ** 2))
    if base == 0:
        raise ValueError("baseline MSE is zero")
    return float(np.mean((est - truth) ** 2)) / base
