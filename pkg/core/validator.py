"""
State & Output Validation
Checks chain states against the model invariants and emitted tables against
their schemas.
"""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .model import ModelState, PriorSpec, Variant


# Required columns of every table the cli writes, and which of them are probabilities.
TABLE_SCHEMAS: Dict[str, Dict[str, Tuple[str, ...]]] = {
    "pips": {"required": ("column", "pip"), "probability": ("pip",)},
    "coefficients": {"required": ("column", "posterior_mean", "pip"), "probability": ("pip",)},
    "model_size_hist": {"required": ("p_gamma", "probability"), "probability": ("probability",)},
    "cluster_hist": {"required": ("K", "probability"), "probability": ("probability",)},
    "joint_pk_hist": {"required": ("p_gamma", "K", "probability"), "probability": ("probability",)},
    "predictions": {"required": ("mean", "lower", "upper"), "probability": ()},
    "clp": {
        "required": ("replicate", "eta", "beta2", "log_bf_dp", "log_bf_hypergn_quadrature",
                     "prob_diff_shrinkage"),
        "probability": ("prob_diff_shrinkage",),
    },
    "grid_replicates": {
        "required": ("replicate", "eta", "variant", "power_small", "power_large", "type1", "f1"),
        "probability": ("power_small", "power_large", "type1"),
    },
    "consistency": {"required": ("replicate", "n", "prob_true_model"), "probability": ("prob_true_model",)},
}

HISTOGRAM_TABLES = ("model_size_hist", "cluster_hist", "joint_pk_hist")


class StateValidator:
    """Validates one MCMC state."""

    @staticmethod
    def validate_state(
        state: ModelState,
        p: int,
        spec: PriorSpec,
    ) -> Tuple[bool, Optional[str]]:
        """
        Check every cross-field invariant of a chain state.

        Args:
            state: State to check
            p: Number of candidate columns
            spec: Prior settings (variant and size cap)

        Returns:
            Tuple of (is_valid, error_message)
        """
        gamma = state.indicator.gamma
        if gamma.size != p:
            return False, f"indicator has length {gamma.size}, expected {p}"

        p_gamma = int(gamma.sum())
        if spec.enforce_size_cap and p_gamma > p - 2:
            return False, f"model size {p_gamma} exceeds p - 2"

        labels = state.partition.labels
        if len(labels) != p_gamma:
            return False, f"{len(labels)} labels for {p_gamma} included columns"
        seen = 0
        for label in labels:
            if label > seen + 1 or label < 1:
                return False, f"labels {labels} are not canonical"
            seen = max(seen, label)
        if state.shrinkage.K != state.partition.K:
            return False, f"{state.shrinkage.K} shrinkage values for {state.partition.K} blocks"
        g = state.shrinkage.g_tilde
        if g.size and not (np.all(np.isfinite(g)) and np.all(g > 0)):
            return False, "shrinkage values must be positive and finite"

        if np.asarray(state.beta).shape != (p_gamma,):
            return False, f"beta has shape {np.asarray(state.beta).shape}, expected ({p_gamma},)"
        if not np.all(np.isfinite(state.beta)) or not math.isfinite(state.beta0):
            return False, "coefficients must be finite"
        if not (math.isfinite(state.sigma2) and state.sigma2 > 0):
            return False, f"sigma2 must be positive, got {state.sigma2}"
        if not (math.isfinite(state.alpha) and state.alpha > 0):
            return False, f"alpha must be positive, got {state.alpha}"

        if state.partition.K > p_gamma:
            return False, "more blocks than included columns"
        if spec.variant == Variant.SINGLE_BLOCK and state.partition.K > 1:
            return False, "single_block state has more than one block"
        if spec.variant == Variant.ALL_SINGLETONS and state.partition.K != p_gamma:
            return False, "all_singletons state shares a block"
        if spec.variant == Variant.FIXED_PARTITION:
            fixed = [spec.fixed_labels[j] for j in state.indicator.indices]
            for i in range(p_gamma):
                for j in range(i + 1, p_gamma):
                    if (fixed[i] == fixed[j]) != (labels[i] == labels[j]):
                        return False, "labels disagree with the fixed partition"

        return True, None


class OutputValidator:
    """Schema checks for emitted tables."""

    @staticmethod
    def validate_table(df: pd.DataFrame, schema: str) -> Tuple[bool, List[str]]:
        """
        Check required columns, probability ranges and histogram masses.

        Args:
            df: Table to check
            schema: Key of TABLE_SCHEMAS

        Returns:
            Tuple of (is_valid, error_messages)
        """
        if schema not in TABLE_SCHEMAS:
            raise ValueError(f"Unknown table schema: {schema}")
        spec = TABLE_SCHEMAS[schema]
        errors = []

        missing = [c for c in spec["required"] if c not in df.columns]
        if missing:
            errors.append(f"missing columns: {', '.join(missing)}")

        for column in spec["probability"]:
            if column not in df.columns:
                continue
            values = pd.to_numeric(df[column], errors="coerce").dropna()
            if ((values < 0) | (values > 1)).any():
                errors.append(f"column '{column}' has values outside [0, 1]")

        if schema in HISTOGRAM_TABLES and "probability" in df.columns:
            total = float(df["probability"].sum())
            if abs(total - 1.0) > 1e-9:
                errors.append(f"histogram mass is {total}, expected 1")

        if schema == "predictions" and not missing:
            if (df["lower"] > df["upper"]).any():
                errors.append("some intervals have lower > upper")

        return len(errors) == 0, errors
