"""
Prior Densities
Beta-prime shrinkage prior, Chinese restaurant process, the Jeffreys-type
concentration prior, the Beta-Binomial model prior and prior-forward draws.
"""

import logging
import math
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln, gammaln

from .model import (
    Dataset,
    ModelIndicator,
    ModelState,
    Partition,
    PriorSpec,
    ShrinkageState,
    Variant,
    canonicalize_partition,
)
from .numerics import RandomStream, cholesky, log_integrate_unit_interval, unit_interval_rule

logger = logging.getLogger(__name__)

ALPHA_CDF_PANELS = 256


def _check_beta_prime_params(a: float, b: float, tau2: float):
    if a <= -1 or b <= -1:
        raise ValueError("a and b must be > -1")
    if tau2 <= 0:
        raise ValueError("tau2 must be > 0")


def beta_prime_logpdf(g, a: float, b: float, tau2: float):
    """
    log f(g | tau2, a, b) for f = Gamma(a+b+2) / (tau2 Gamma(a+1) Gamma(b+1))
    (g/tau2)^b (1 + g/tau2)^(-a-b-2).

    Accepts scalars or arrays; g must be > 0.
    """
    _check_beta_prime_params(a, b, tau2)
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise ValueError("g must be > 0")
    v = g / tau2
    out = -betaln(b + 1.0, a + 1.0) - math.log(tau2) + b * np.log(v) - (a + b + 2.0) * np.log1p(v)
    return float(out) if out.ndim == 0 else out


def beta_prime_sample(a: float, b: float, tau2: float, rng: RandomStream, size=None):
    """
    Draw g = tau2 u / (1 - u) with u ~ Beta(b+1, a+1).

    u / (1 - u) is formed as a ratio of independent Gamma(b+1) and Gamma(a+1)
    variates, which keeps draws with u near 1 accurate.
    """
    _check_beta_prime_params(a, b, tau2)
    num = rng.gamma(b + 1.0, 1.0, size)
    den = rng.gamma(a + 1.0, 1.0, size)
    if size is None:
        while num <= 0 or den <= 0:
            num = rng.gamma(b + 1.0, 1.0)
            den = rng.gamma(a + 1.0, 1.0)
        return float(tau2 * num / den)
    bad = (num <= 0) | (den <= 0)
    while np.any(bad):
        k = int(bad.sum())
        num[bad] = rng.gamma(b + 1.0, 1.0, k)
        den[bad] = rng.gamma(a + 1.0, 1.0, k)
        bad = (num <= 0) | (den <= 0)
    return tau2 * num / den


def crp_log_prob(partition: Partition, alpha):
    """log f(rho | alpha) = log Gamma(alpha) - log Gamma(alpha + c) + K log alpha + sum log Gamma(m_k)."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be > 0")
    c = partition.size
    if c == 0:
        out = np.zeros_like(alpha)
    else:
        sizes = np.asarray(partition.block_sizes, dtype=float)
        out = (gammaln(alpha) - gammaln(alpha + c) + partition.K * np.log(alpha)
               + float(np.sum(gammaln(sizes))))
    return float(out) if out.ndim == 0 else out


def dp_predictive_label_weights(partition: Partition, alpha: float) -> np.ndarray:
    """Normalized (m_1, ..., m_K, alpha) / (c + alpha); the last entry opens a new block."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    weights = np.asarray(partition.block_sizes + (alpha,), dtype=float)
    return weights / weights.sum()


def jeffreys_alpha_logpdf(alpha, p_gamma: int):
    """Unnormalized log f(alpha | p_gamma) = 0.5 log((1/alpha) sum_{j<p_gamma} j / (alpha + j)^2)."""
    if p_gamma < 2:
        raise ValueError("p_gamma must be >= 2 for the Jeffreys-type alpha prior")
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be > 0")
    j = np.arange(1, p_gamma, dtype=float)
    total = np.sum(j / (alpha[..., None] + j) ** 2, axis=-1)
    out = 0.5 * (np.log(total) - np.log(alpha))
    return float(out) if out.ndim == 0 else out


def _alpha_log_density_unit(u: np.ndarray, w: np.ndarray, p_gamma: int) -> np.ndarray:
    # alpha = u / w, d alpha = du / w^2
    return jeffreys_alpha_logpdf(u / w, p_gamma) - 2.0 * np.log(w)


@lru_cache(maxsize=None)
def jeffreys_alpha_log_normaliser(p_gamma: int) -> float:
    """log of the integral of the Jeffreys-type density over alpha > 0."""
    if p_gamma < 2:
        raise ValueError("p_gamma must be >= 2")
    return log_integrate_unit_interval(lambda u, w: _alpha_log_density_unit(u, w, p_gamma), tol=1e-12)


def alpha_prior_logpdf(alpha, p_gamma: int):
    """
    Normalised log prior of alpha given the model size.

    Jeffreys-type for p_gamma >= 2, the Gamma(1, 1) surrogate otherwise.
    """
    if p_gamma < 2:
        alpha = np.asarray(alpha, dtype=float)
        if np.any(alpha <= 0):
            raise ValueError("alpha must be > 0")
        out = -alpha
        return float(out) if out.ndim == 0 else out
    return jeffreys_alpha_logpdf(alpha, p_gamma) - jeffreys_alpha_log_normaliser(p_gamma)


@lru_cache(maxsize=None)
def _alpha_cdf_table(p_gamma: int) -> Tuple[np.ndarray, np.ndarray]:
    rule = unit_interval_rule(ALPHA_CDF_PANELS)
    log_dens = _alpha_log_density_unit(rule.nodes, rule.complements, p_gamma)
    mass = rule.weights * np.exp(log_dens - log_dens.max())
    cdf = np.concatenate(([0.0], np.cumsum(mass)))
    cdf /= cdf[-1]
    nodes = np.concatenate(([0.0], rule.nodes))
    return nodes, cdf


def sample_alpha_prior(p_gamma: int, rng: RandomStream) -> float:
    """Draw alpha from its normalised prior by tabulated inverse CDF."""
    if p_gamma < 2:
        return float(rng.gamma(1.0, 1.0))
    nodes, cdf = _alpha_cdf_table(p_gamma)
    u = float(np.interp(rng.uniform(), cdf, nodes))
    u = min(max(u, 1e-300), 1.0 - 1e-16)
    return u / (1.0 - u)


@lru_cache(maxsize=4096)
def _dp_partition_log_prior_sizes(sizes: Tuple[int, ...]) -> float:
    c = sum(sizes)
    if c <= 1:
        return 0.0
    partition = canonicalize_partition([k + 1 for k, m in enumerate(sizes) for _ in range(m)])

    def log_f(u, w):
        alpha = u / w
        return crp_log_prob(partition, alpha) + alpha_prior_logpdf(alpha, c) - 2.0 * np.log(w)

    return log_integrate_unit_interval(log_f, tol=1e-12)


def dp_partition_log_prior(partition: Partition) -> float:
    """log of the CRP probability averaged over the alpha prior."""
    return _dp_partition_log_prior_sizes(tuple(sorted(partition.block_sizes)))


def _model_size(indicator: Union[ModelIndicator, int]) -> int:
    return indicator.p_gamma if isinstance(indicator, ModelIndicator) else int(indicator)


def beta_binomial_log_prior(
    indicator: Union[ModelIndicator, int],
    c: float,
    d: float,
    p: int,
    n: Optional[int] = None,
    enforce_size_cap: bool = True,
) -> float:
    """
    log f(gamma) under the Beta-Binomial(c, d) prior.

    Models with p_gamma > p - 2 (when the cap is on) or p_gamma >= n - 1
    (when n is given) get -inf.
    """
    if c <= 0 or d <= 0:
        raise ValueError("c and d must be > 0")
    k = _model_size(indicator)
    if k < 0 or k > p:
        raise ValueError(f"model size {k} outside 0..{p}")
    if enforce_size_cap and k > p - 2:
        return -math.inf
    if n is not None and k >= n - 1:
        return -math.inf
    return float(gammaln(c + d) - gammaln(c) - gammaln(d)
                 + gammaln(c + k) + gammaln(d + p - k) - gammaln(c + d + p))


def log_marginal_coefficient_prior(beta: float, kappa: float, sigma2: float,
                                   a: float, b: float, tau2: float) -> float:
    """
    log of the implied marginal prior of one coefficient, the mixture of
    N(0, g kappa sigma2) over g ~ BetaPrime(a, b, tau2).
    """
    _check_beta_prime_params(a, b, tau2)
    if kappa <= 0 or sigma2 <= 0:
        raise ValueError("kappa and sigma2 must be > 0")
    scale = kappa * sigma2 * tau2
    norm = betaln(b + 1.0, a + 1.0)

    def log_f(u, w):
        var = scale * u / w
        return (-0.5 * np.log(2.0 * math.pi * var) - beta * beta / (2.0 * var)
                + b * np.log(u) + a * np.log(w) - norm)

    return log_integrate_unit_interval(log_f, tol=1e-12)


def _forward_labels(spec: PriorSpec, indices: np.ndarray, alpha: float,
                    rng: RandomStream) -> Partition:
    k = indices.size
    if k == 0:
        return Partition(())
    if spec.variant == Variant.SINGLE_BLOCK:
        return Partition((1,) * k)
    if spec.variant == Variant.ALL_SINGLETONS:
        return Partition(tuple(range(1, k + 1)))
    if spec.variant == Variant.FIXED_PARTITION:
        return canonicalize_partition([spec.fixed_labels[j] for j in indices])
    labels = []
    for _ in range(k):
        partition = Partition(tuple(labels))
        choice = rng.categorical(dp_predictive_label_weights(partition, alpha))
        labels.append(choice + 1)
    return Partition(tuple(labels))


def sample_prior_forward(ds: Dataset, spec: PriorSpec, rng: RandomStream) -> ModelState:
    """
    Draw (gamma, alpha, xi, g_tilde, sigma2, beta) from the prior; beta0 is 0.

    Requires the proper inverse-gamma sigma2 prior.
    """
    if not spec.proper_sigma2:
        raise ValueError("prior-forward simulation needs sigma2_shape > 0 and sigma2_scale > 0")
    tau2 = spec.resolved_tau2(ds.n)

    for _ in range(10_000):
        theta = rng.beta(spec.bb_c, spec.bb_d)
        gamma = rng.uniform(size=ds.p) < theta
        lp = beta_binomial_log_prior(int(gamma.sum()), spec.bb_c, spec.bb_d, ds.p,
                                     n=ds.n, enforce_size_cap=spec.enforce_size_cap)
        if lp > -math.inf:
            break
    else:
        raise ValueError("model prior has no admissible model size")
    indicator = ModelIndicator(gamma)
    indices = indicator.indices

    alpha = sample_alpha_prior(indices.size, rng) if spec.variant == Variant.DP else 1.0
    partition = _forward_labels(spec, indices, alpha, rng)
    g_tilde = np.asarray(beta_prime_sample(spec.a, spec.b, 1.0, rng, size=partition.K), dtype=float)
    sigma2 = float(rng.inverse_gamma(spec.sigma2_shape, spec.sigma2_scale))

    beta = np.zeros(indices.size)
    if indices.size:
        A, _ = ds.gram(indices)
        factor = cholesky(A)
        d = np.sqrt(tau2 * g_tilde[partition.label_array() - 1])
        # cov sigma2 D A^-1 D
        beta = d * solve_triangular(factor.L.T, rng.normal(size=indices.size), lower=False) * math.sqrt(sigma2)

    return ModelState(indicator, partition, ShrinkageState(g_tilde), 0.0, beta, sigma2, alpha)


def simulate_response(ds: Dataset, state: ModelState, rng: RandomStream) -> np.ndarray:
    """y = beta0 + X_gamma beta + N(0, sigma2) noise."""
    mean = np.full(ds.n, state.beta0)
    if state.p_gamma:
        mean = mean + ds.X[:, state.indicator.indices] @ state.beta
    return mean + rng.normal(0.0, math.sqrt(state.sigma2), ds.n)
