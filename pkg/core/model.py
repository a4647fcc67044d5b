"""
Model Types
Dataset, inclusion indicators, partitions, shrinkage values, chain state and
the validated prior/chain settings shared by every other module.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import SchemaError

logger = logging.getLogger(__name__)

CENTERING_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-centered design matrix and response, with cached Gram blocks."""
    X: np.ndarray
    y: np.ndarray
    column_names: Tuple[str, ...]
    column_means: np.ndarray
    column_scales: np.ndarray
    xtx: np.ndarray = field(init=False, repr=False)
    xty: np.ndarray = field(init=False, repr=False)
    syy: float = field(init=False)
    y_mean: float = field(init=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise SchemaError(f"X has shape {X.shape} but y has shape {y.shape}")
        if X.shape[0] < 3:
            raise SchemaError(f"need at least 3 observations, got {X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise SchemaError("design matrix and response must be finite")
        if len(self.column_names) != X.shape[1]:
            raise SchemaError("column_names must have one entry per column")
        if X.shape[1] and float(np.abs(X.mean(axis=0)).max()) > CENTERING_TOL * max(1.0, float(np.abs(X).max())):
            raise SchemaError("design matrix columns must be centered")

        y_mean = float(y.mean())
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "xtx", X.T @ X)
        object.__setattr__(self, "xty", X.T @ y)
        object.__setattr__(self, "syy", float(np.sum((y - y_mean) ** 2)))
        object.__setattr__(self, "y_mean", y_mean)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, y: np.ndarray) -> "Dataset":
        """Same design, new response."""
        return Dataset(self.X, np.asarray(y, dtype=float), self.column_names,
                       self.column_means, self.column_scales)

    def gram(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """X_S'X_S and X_S'y for the given column indices."""
        return self.xtx[np.ix_(indices, indices)], self.xty[indices]


def center_dataset(
    raw_X: np.ndarray,
    y: np.ndarray,
    column_names: Optional[Sequence[str]] = None,
    standardize: bool = False,
) -> Dataset:
    """
    Center (and optionally scale) the design matrix.

    Args:
        raw_X: n x p matrix on the original scale
        y: Response vector
        column_names: Labels for the columns (default x1..xp)
        standardize: Also scale every column to unit standard deviation

    Returns:
        Dataset with the original column means and scales retained

    Raises:
        SchemaError: On too few rows, non-finite entries or a constant column
    """
    raw_X = np.asarray(raw_X, dtype=float)
    y = np.asarray(y, dtype=float)
    if raw_X.ndim != 2:
        raise SchemaError(f"design matrix must be 2-D, got shape {raw_X.shape}")
    n, p = raw_X.shape
    if column_names is None:
        column_names = [f"x{j + 1}" for j in range(p)]
    if len(column_names) != p:
        raise SchemaError(f"expected {p} column names, got {len(column_names)}")
    if n < 3:
        raise SchemaError(f"need at least 3 observations, got {n}")
    if not (np.all(np.isfinite(raw_X)) and np.all(np.isfinite(y))):
        raise SchemaError("design matrix and response must be finite")

    means = raw_X.mean(axis=0)
    X = raw_X - means
    sd = X.std(axis=0)
    for j, name in enumerate(column_names):
        if sd[j] <= 1e-12 * max(1.0, abs(means[j])):
            raise SchemaError(f"column '{name}' is constant")

    scales = sd if standardize else np.ones(p)
    X = X / scales
    # second pass removes the rounding residue of the first subtraction
    X = X - X.mean(axis=0)
    return Dataset(X, y, tuple(column_names), means, scales)


@dataclass(frozen=True, eq=False)
class ModelIndicator:
    """Inclusion vector over the p columns."""
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=bool))

    @classmethod
    def empty(cls, p: int) -> "ModelIndicator":
        return cls(np.zeros(p, dtype=bool))

    @classmethod
    def from_indices(cls, p: int, indices: Sequence[int]) -> "ModelIndicator":
        gamma = np.zeros(p, dtype=bool)
        gamma[list(indices)] = True
        return cls(gamma)

    @property
    def p(self) -> int:
        return self.gamma.size

    @property
    def p_gamma(self) -> int:
        return int(self.gamma.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.gamma)

    def key(self) -> Tuple[int, ...]:
        return tuple(int(j) for j in self.indices)

    def __eq__(self, other) -> bool:
        return isinstance(other, ModelIndicator) and np.array_equal(self.gamma, other.gamma)

    def __hash__(self) -> int:
        return hash(self.key())


@dataclass(frozen=True)
class Partition:
    """Canonical block labels (1..K, by first appearance) for the included coefficients."""
    labels: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def K(self) -> int:
        return max(self.labels) if self.labels else 0

    @property
    def block_sizes(self) -> Tuple[int, ...]:
        counts = [0] * self.K
        for label in self.labels:
            counts[label - 1] += 1
        return tuple(counts)

    def members(self, k: int) -> np.ndarray:
        """Positions (within the included set) carrying label k."""
        return np.flatnonzero(np.asarray(self.labels) == k)

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=int)


def first_appearance_order(labels: Sequence[int]) -> List[int]:
    """Distinct raw labels in order of first appearance."""
    seen: Dict[int, None] = {}
    for label in labels:
        seen.setdefault(label, None)
    return list(seen)


def canonicalize_partition(labels: Sequence[int]) -> Partition:
    """
    Relabel blocks by order of first appearance.

    Args:
        labels: Raw positive integer labels, one per included coefficient

    Returns:
        Canonical Partition
    """
    labels = [int(label) for label in labels]
    if any(label < 1 for label in labels):
        raise ValueError("partition labels must be positive")
    mapping = {raw: k + 1 for k, raw in enumerate(first_appearance_order(labels))}
    return Partition(tuple(mapping[label] for label in labels))


@dataclass(frozen=True, eq=False)
class ShrinkageState:
    """Per-block shrinkage on the tau^2-relative scale; effective g_j = tau^2 g_tilde[xi_j]."""
    g_tilde: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g_tilde, dtype=float).reshape(-1)
        if g.size and not (np.all(np.isfinite(g)) and np.all(g > 0)):
            raise ValueError("shrinkage values must be positive and finite")
        object.__setattr__(self, "g_tilde", g)

    @property
    def K(self) -> int:
        return self.g_tilde.size


@dataclass(eq=False)
class ModelState:
    """One MCMC state. Owned by a single chain."""
    indicator: ModelIndicator
    partition: Partition
    shrinkage: ShrinkageState
    beta0: float
    beta: np.ndarray
    sigma2: float
    alpha: float
    log_marginal: Optional[float] = field(default=None, repr=False)

    @property
    def p_gamma(self) -> int:
        return self.indicator.p_gamma

    @property
    def K(self) -> int:
        return self.partition.K

    def effective_scales(self, tau2: float) -> np.ndarray:
        """d_j = sqrt(tau^2 g_tilde[xi_j]) for the included coefficients."""
        if self.partition.size == 0:
            return np.zeros(0)
        return np.sqrt(tau2 * self.shrinkage.g_tilde[self.partition.label_array() - 1])

    def copy(self) -> "ModelState":
        return replace(self, beta=self.beta.copy())

    def fingerprint(self) -> str:
        """Digest of every field, for before/after comparisons."""
        h = hashlib.sha1()
        h.update(self.indicator.gamma.tobytes())
        h.update(np.asarray(self.partition.labels, dtype=np.int64).tobytes())
        h.update(self.shrinkage.g_tilde.tobytes())
        h.update(np.asarray([self.beta0, self.sigma2, self.alpha]).tobytes())
        h.update(np.asarray(self.beta, dtype=float).tobytes())
        return h.hexdigest()


class Variant(str, Enum):
    """Which shrinkage structure the sampler explores."""
    DP = "dp"
    SINGLE_BLOCK = "single_block"
    ALL_SINGLETONS = "all_singletons"
    FIXED_PARTITION = "fixed_partition"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        return cls(text.strip().lower().replace("-", "_"))


class PriorSpec(BaseModel):
    """Hyperparameters of the Beta-prime base measure, model prior and variant."""
    model_config = ConfigDict(frozen=True)

    a: float = Field(-0.5, gt=-1.0)
    b: float = Field(0.0, gt=-1.0)
    tau2: Optional[float] = Field(None, gt=0.0)  # None means n
    bb_c: float = Field(1.0, gt=0.0)
    bb_d: float = Field(1.0, gt=0.0)
    variant: Variant = Variant.DP
    fixed_labels: Optional[Tuple[int, ...]] = None
    sigma2_shape: float = Field(0.0, ge=0.0)
    sigma2_scale: float = Field(0.0, ge=0.0)
    enforce_size_cap: bool = True

    @model_validator(mode="after")
    def _check_variant(self) -> "PriorSpec":
        if self.variant == Variant.FIXED_PARTITION:
            if not self.fixed_labels:
                raise ValueError("fixed_partition needs fixed_labels")
            if canonicalize_partition(self.fixed_labels).labels != tuple(self.fixed_labels):
                raise ValueError("fixed_labels must be canonical (first-appearance order)")
        if (self.sigma2_shape > 0) != (self.sigma2_scale > 0):
            raise ValueError("sigma2_shape and sigma2_scale must both be 0 or both be > 0")
        return self

    def resolved_tau2(self, n: int) -> float:
        return float(n) if self.tau2 is None else float(self.tau2)

    @property
    def proper_sigma2(self) -> bool:
        return self.sigma2_shape > 0


class ChainConfig(BaseModel):
    """Run length, thinning, seeding and sampler tuning."""
    model_config = ConfigDict(frozen=True)

    iterations: int = Field(302_000, ge=1)
    burn_in: int = Field(2_000, ge=0)
    thin: int = Field(15, ge=1)
    n_chains: int = Field(1, ge=1)
    seed: Optional[int] = None
    alpha_proposal_sd: float = Field(0.05 ** 0.5, gt=0.0)
    neal_aux_d: int = Field(20, ge=1)
    model_moves_per_iter: int = Field(1, ge=1)
    fixed_model: Optional[Tuple[int, ...]] = None
    adapt_alpha: bool = True
    debug: bool = False

    @model_validator(mode="after")
    def _check_lengths(self) -> "ChainConfig":
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        return self

    @property
    def kept_draws(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))
