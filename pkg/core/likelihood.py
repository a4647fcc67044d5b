"""
Marginal Likelihoods
Conditional marginal likelihoods under block g priors, Bayes factors for the
standard mixture of g priors, exact small-model DP marginals and the
orthogonal-design Kummer forms.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .errors import NotPositiveDefiniteError
from .model import Dataset, ModelIndicator, Partition, PriorSpec, ShrinkageState
from .numerics import (
    CholeskyFactor,
    cholesky,
    kummer_log_M,
    log_integrate_unit_interval,
    logdet_from_cholesky,
    set_partitions,
    solve_spd,
    unit_interval_rule,
)
from .priors import dp_partition_log_prior

logger = logging.getLogger(__name__)

DP_EXACT_MAX_SIZE = 3
DP_EXACT_PANELS = 24


@dataclass(frozen=True)
class ConditionalFit:
    """
    Pieces of the fast marginal for one (gamma, xi, g_tilde).

    With A = X_g'X_g, b = X_g'y, D = diag(d) and M = A + D A D:
    log|Omega| = log|M| - log|A| and the quadratic form is
    syy - (d*b)' M^-1 (d*b).
    """
    d: np.ndarray
    factor_m: CholeskyFactor
    scaled_mean: np.ndarray  # M^-1 (d * b)
    log_det_omega: float
    quad_form: float


def conditional_fit(A: np.ndarray, b: np.ndarray, syy: float, d: np.ndarray) -> ConditionalFit:
    """Build the fast-path quantities; raises NotPositiveDefiniteError if A is singular."""
    factor_a = cholesky(A)
    M = A + d[:, None] * A * d[None, :]
    factor_m = cholesky(M)
    db = d * b
    scaled_mean = solve_spd(factor_m, db)
    quad = syy - float(db @ scaled_mean)
    log_det_omega = logdet_from_cholesky(factor_m) - logdet_from_cholesky(factor_a)
    return ConditionalFit(d, factor_m, scaled_mean, log_det_omega, quad)


def _log_marginal_from(n: int, log_det_omega, quad_form, spec: PriorSpec):
    """log f(y | ...) given log|Omega| and y'Omega^-1 y - n ybar^2 (vectorised)."""
    half = 0.5 * (n - 1)
    if spec.proper_sigma2:
        sa, sb = spec.sigma2_shape, spec.sigma2_scale
        return (-half * math.log(2.0 * math.pi) - 0.5 * math.log(n) - 0.5 * log_det_omega
                + sa * math.log(sb) - gammaln(sa) + gammaln(sa + half)
                - (sa + half) * np.log(sb + 0.5 * quad_form))
    return (gammaln(half) - half * math.log(math.pi) - 0.5 * math.log(n)
            - 0.5 * log_det_omega - half * np.log(quad_form))


def null_log_marginal(ds: Dataset, spec: PriorSpec) -> float:
    """Log marginal likelihood of the intercept-only model."""
    return float(_log_marginal_from(ds.n, 0.0, ds.syy, spec))


def _admissible(ds: Dataset, p_gamma: int) -> bool:
    return p_gamma < ds.n - 1


def log_marginal_conditional(
    ds: Dataset,
    ind: ModelIndicator,
    part: Partition,
    shr: ShrinkageState,
    spec: PriorSpec,
) -> float:
    """
    log f(y | gamma, xi, g_tilde) without forming any n x n matrix.

    Returns -inf for rank-deficient designs and for p_gamma >= n - 1.
    """
    idx = ind.indices
    if idx.size == 0:
        return null_log_marginal(ds, spec)
    if part.size != idx.size or part.K != shr.K:
        raise ValueError("indicator, partition and shrinkage lengths disagree")
    if not _admissible(ds, idx.size):
        return -math.inf
    tau2 = spec.resolved_tau2(ds.n)
    d = np.sqrt(tau2 * shr.g_tilde[part.label_array() - 1])
    A, b = ds.gram(idx)
    try:
        fit = conditional_fit(A, b, ds.syy, d)
    except NotPositiveDefiniteError:
        logger.debug("rank-deficient design for columns %s", idx.tolist())
        return -math.inf
    return float(_log_marginal_from(ds.n, fit.log_det_omega, fit.quad_form, spec))


def log_bf_vs_null_conditional(
    ds: Dataset,
    ind: ModelIndicator,
    part: Partition,
    shr: ShrinkageState,
    spec: PriorSpec,
) -> float:
    """log f(y | gamma, xi, g_tilde) - log f(y | null)."""
    if ind.p_gamma == 0:
        return 0.0
    return log_marginal_conditional(ds, ind, part, shr, spec) - null_log_marginal(ds, spec)


def log_marginal_conditional_batch(
    A: np.ndarray,
    b: np.ndarray,
    syy: float,
    n: int,
    d: np.ndarray,
    spec: PriorSpec,
) -> np.ndarray:
    """
    Conditional log marginals for a batch of scale vectors.

    Args:
        A: p_g x p_g Gram block (positive definite)
        b: X_g'y
        syy: Centered response sum of squares
        n: Number of observations
        d: (B, p_g) array of effective scales sqrt(tau2 g)
        spec: Prior settings (only the sigma2 prior is read)

    Returns:
        Length-B array of log marginals
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    log_det_a = logdet_from_cholesky(cholesky(A))
    M = A[None, :, :] + d[:, :, None] * A[None, :, :] * d[:, None, :]
    L = np.linalg.cholesky(M)
    log_det_m = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    db = d * b[None, :]
    sol = np.linalg.solve(M, db[:, :, None])[:, :, 0]
    quad = syy - np.sum(db * sol, axis=1)
    return _log_marginal_from(n, log_det_m - log_det_a, quad, spec)


def log_bf_g_prior(r2: float, n: int, p_gamma: int, g: float) -> float:
    """Bayes factor against the null under a fixed g (Zellner) prior."""
    if not 0.0 <= r2 < 1.0:
        raise ValueError("r2 must lie in [0, 1)")
    if g <= 0:
        raise ValueError("g must be > 0")
    return float(0.5 * (n - 1 - p_gamma) * math.log1p(g) - 0.5 * (n - 1) * math.log1p(g * (1.0 - r2)))


def log_bf_standard_mixture(r2: float, n: int, p_gamma: int, spec: PriorSpec) -> float:
    """
    log of the fixed-g Bayes factor integrated over g ~ BetaPrime(a, b, tau2).

    With u = g / (tau2 + g) and w = 1 - u, log(1 + g) = log(w + tau2 u) - log w.
    """
    if not 0.0 <= r2 < 1.0:
        raise ValueError("r2 must lie in [0, 1)")
    if p_gamma == 0:
        return 0.0
    tau2 = spec.resolved_tau2(n)
    a, b = spec.a, spec.b
    norm = betaln(b + 1.0, a + 1.0)

    def log_f(u, w):
        log_w = np.log(w)
        log1p_g = np.log(w + tau2 * u) - log_w
        log1p_g_resid = np.log(w + tau2 * u * (1.0 - r2)) - log_w
        return (0.5 * (n - 1 - p_gamma) * log1p_g - 0.5 * (n - 1) * log1p_g_resid
                + b * np.log(u) + a * log_w - norm)

    return log_integrate_unit_interval(log_f)


def r_squared(ds: Dataset, ind: ModelIndicator) -> float:
    """OLS coefficient of determination of the included columns."""
    idx = ind.indices
    if idx.size == 0:
        return 0.0
    A, b = ds.gram(idx)
    explained = float(b @ solve_spd(cholesky(A), b))
    return explained / ds.syy


def log_marginal_standard_mixture(ds: Dataset, ind: ModelIndicator, spec: PriorSpec) -> float:
    """
    log f(y | gamma) with one g shared by every included coefficient.

    Under a single g, |Omega| = (1+g)^p_g and the quadratic form is
    syy (1 + g (1 - R^2)) / (1 + g); the g integral is done in u.
    """
    p_gamma = ind.p_gamma
    if p_gamma == 0:
        return null_log_marginal(ds, spec)
    if not _admissible(ds, p_gamma):
        return -math.inf
    try:
        r2 = r_squared(ds, ind)
    except NotPositiveDefiniteError:
        return -math.inf
    tau2 = spec.resolved_tau2(ds.n)
    a, b = spec.a, spec.b
    norm = betaln(b + 1.0, a + 1.0)

    def log_f(u, w):
        log_w = np.log(w)
        log1p_g = np.log(w + tau2 * u) - log_w
        log1p_g_resid = np.log(w + tau2 * u * (1.0 - r2)) - log_w
        quad = ds.syy * np.exp(log1p_g_resid - log1p_g)
        return (_log_marginal_from(ds.n, p_gamma * log1p_g, quad, spec)
                + b * np.log(u) + a * log_w - norm)

    return log_integrate_unit_interval(log_f)


def log_marginal_dp_exact(
    ds: Dataset,
    ind: ModelIndicator,
    spec: PriorSpec,
    n_panels: int = DP_EXACT_PANELS,
) -> Tuple[float, Dict[Tuple[int, ...], float]]:
    """
    Exact DP-mixture marginal log f(y | gamma) for small models.

    Sums over every set partition of the included coefficients, weighting
    each by the CRP probability averaged over the alpha prior, and integrates
    the block shrinkage values on a fixed product rule in u.

    Returns:
        (log marginal, posterior probability of each canonical partition)
    """
    idx = ind.indices
    k = idx.size
    if k == 0:
        return null_log_marginal(ds, spec), {(): 1.0}
    if k > DP_EXACT_MAX_SIZE:
        raise ValueError(f"exact DP marginal supports at most {DP_EXACT_MAX_SIZE} coefficients")
    if not _admissible(ds, k):
        return -math.inf, {}

    A, b = ds.gram(idx)
    try:
        cholesky(A)
    except NotPositiveDefiniteError:
        return -math.inf, {}

    tau2 = spec.resolved_tau2(ds.n)
    rule = unit_interval_rule(n_panels)
    g_nodes = rule.nodes / rule.complements
    # log weight of each node under u ~ Beta(b+1, a+1)
    log_w = (np.log(rule.weights) + spec.b * np.log(rule.nodes)
             + spec.a * np.log(rule.complements) - betaln(spec.b + 1.0, spec.a + 1.0))

    log_terms: Dict[Tuple[int, ...], float] = {}
    for labels in set_partitions(k):
        part = Partition(labels)
        log_terms[labels] = dp_partition_log_prior(part) + _log_partition_integral(
            A, b, ds.syy, ds.n, part, g_nodes, log_w, tau2, spec)

    values = np.array(list(log_terms.values()))
    total = float(logsumexp(values))
    probs = {labels: float(math.exp(v - total)) for labels, v in log_terms.items()}
    return total, probs


def _log_partition_integral(A, b, syy, n, part: Partition, g_nodes, log_w, tau2, spec) -> float:
    K = part.K
    label_idx = part.label_array() - 1
    inner = min(K, 2)
    outer = K - inner
    grids = np.meshgrid(*([np.arange(g_nodes.size)] * inner), indexing="ij")
    inner_idx = np.stack([gr.ravel() for gr in grids], axis=1)
    inner_logw = log_w[inner_idx].sum(axis=1)

    chunks = []
    for outer_idx in itertools.product(range(g_nodes.size), repeat=outer):
        block_idx = np.concatenate(
            (np.broadcast_to(np.asarray(outer_idx, dtype=int), (inner_idx.shape[0], outer)), inner_idx),
            axis=1,
        )
        g_blocks = g_nodes[block_idx]
        d = np.sqrt(tau2 * g_blocks[:, label_idx])
        lm = log_marginal_conditional_batch(A, b, syy, n, d, spec)
        chunks.append(float(logsumexp(lm + inner_logw + log_w[list(outer_idx)].sum())))
    return float(logsumexp(chunks))


def log_marginal_orthogonal_blocks(
    beta_hat_norms: Sequence[float],
    sigma2: float,
    part: Partition,
    spec: PriorSpec,
    n: int = 0,
) -> float:
    """
    Block marginal for an orthonormal design under unit tau^2, up to a
    partition-free constant.

    Each block contributes log B(b+1, a+m/2+1) - log B(b+1, a+1)
    + log M(b+1, a+b+m/2+2, ||beta_hat_S||^2 / (2 sigma2)).
    """
    norms = np.asarray(beta_hat_norms, dtype=float)
    if norms.size != part.K:
        raise ValueError(f"expected {part.K} block norms, got {norms.size}")
    if np.any(norms < 0):
        raise ValueError("block norms must be >= 0")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    a, b = spec.a, spec.b
    total = -0.5 * n * math.log(sigma2)
    for m, z in zip(part.block_sizes, norms):
        if m < 1:
            raise ValueError("block sizes must be >= 1")
        total += (betaln(b + 1.0, a + 0.5 * m + 1.0) - betaln(b + 1.0, a + 1.0)
                  + kummer_log_M(b + 1.0, a + b + 0.5 * m + 2.0, z / (2.0 * sigma2)))
    return float(total)


def block_norms(beta_hat: np.ndarray, part: Partition) -> np.ndarray:
    """Per-block squared norms of a coefficient vector."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    return np.array([float(np.sum(beta_hat[part.members(k)] ** 2)) for k in range(1, part.K + 1)])
