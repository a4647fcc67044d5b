"""
MCMC Sampler
Reversible-jump model moves, conjugate coefficient and variance draws, the
auxiliary-variable label scan, the concentration update and the slice
sampler for block shrinkage values.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .dispatcher import ChainDispatcher
from .errors import BlockGError, NumericalError, SamplerAbort
from .inference import ChainOutput, DrawRecorder
from .likelihood import conditional_fit, log_marginal_conditional
from .model import (
    ChainConfig,
    Dataset,
    ModelIndicator,
    ModelState,
    Partition,
    PriorSpec,
    ShrinkageState,
    Variant,
    canonicalize_partition,
    first_appearance_order,
)
from .numerics import RandomStream, sample_truncated_extended_gamma
from .priors import (
    alpha_prior_logpdf,
    beta_binomial_log_prior,
    beta_prime_sample,
    crp_log_prob,
    dp_predictive_label_weights,
    jeffreys_alpha_logpdf,
)
from .validator import StateValidator

logger = logging.getLogger(__name__)

FLIP_PROB = 0.7
ALPHA_TARGET_ACCEPT = 0.45
TRUNC_CAP = 1e300

ProgressCallback = Callable[[int, int, str], None]


@dataclass
class MoveStats:
    """Proposal and acceptance counts per move type."""
    proposed: Dict[str, int] = field(default_factory=lambda: {"flip": 0, "swap": 0, "alpha": 0})
    accepted: Dict[str, int] = field(default_factory=lambda: {"flip": 0, "swap": 0, "alpha": 0})

    def record(self, move: str, accepted: bool):
        self.proposed[move] = self.proposed.get(move, 0) + 1
        if accepted:
            self.accepted[move] = self.accepted.get(move, 0) + 1

    def acceptance_rate(self, move: str) -> Optional[float]:
        n = self.proposed.get(move, 0)
        return self.accepted.get(move, 0) / n if n else None

    def as_dict(self) -> Dict[str, Dict[str, Optional[float]]]:
        return {
            move: {
                "proposed": self.proposed[move],
                "accepted": self.accepted.get(move, 0),
                "rate": self.acceptance_rate(move),
            }
            for move in self.proposed
        }


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def state_log_marginal(state: ModelState, ds: Dataset, spec: PriorSpec) -> float:
    """Cached log f(y | gamma, xi, g_tilde)."""
    if state.log_marginal is None:
        state.log_marginal = log_marginal_conditional(
            ds, state.indicator, state.partition, state.shrinkage, spec)
    return state.log_marginal


def assemble_structure(
    p: int,
    column_labels: Dict[int, int],
    label_values: Dict[int, float],
) -> Tuple[ModelIndicator, Partition, ShrinkageState]:
    """
    Build canonical (gamma, xi, g_tilde) from raw column -> label and label -> value maps.

    Labels that no included column uses are dropped.
    """
    columns = sorted(column_labels)
    raw = [column_labels[j] for j in columns]
    order = first_appearance_order(raw)
    relabel = {r: k + 1 for k, r in enumerate(order)}
    partition = Partition(tuple(relabel[r] for r in raw))
    shrinkage = ShrinkageState(np.array([label_values[r] for r in order], dtype=float))
    return ModelIndicator.from_indices(p, columns), partition, shrinkage


def _structure_maps(state: ModelState) -> Tuple[Dict[int, int], Dict[int, float]]:
    columns = state.indicator.indices
    column_labels = {int(j): int(k) for j, k in zip(columns, state.partition.labels)}
    label_values = {k + 1: float(v) for k, v in enumerate(state.shrinkage.g_tilde)}
    return column_labels, label_values


def _prior_g_tilde(spec: PriorSpec, rng: RandomStream) -> float:
    return beta_prime_sample(spec.a, spec.b, 1.0, rng)


def _place_column(
    j: int,
    column_labels: Dict[int, int],
    label_values: Dict[int, float],
    state: ModelState,
    spec: PriorSpec,
    rng: RandomStream,
):
    """Give an incoming column a label from its prior predictive; new blocks draw g_tilde from the base measure."""
    used = sorted(set(column_labels.values()))
    new_label = max(label_values, default=0) + 1

    if spec.variant == Variant.SINGLE_BLOCK:
        label = used[0] if used else new_label
    elif spec.variant == Variant.ALL_SINGLETONS:
        label = new_label
    elif spec.variant == Variant.FIXED_PARTITION:
        fixed = spec.fixed_labels
        label = next((column_labels[c] for c in column_labels if fixed[c] == fixed[j]), new_label)
    else:
        raw = [column_labels[c] for c in sorted(column_labels)]
        order = first_appearance_order(raw)
        choice = rng.categorical(dp_predictive_label_weights(canonicalize_partition(raw), state.alpha))
        label = order[choice] if choice < len(order) else new_label

    if label == new_label:
        label_values[new_label] = _prior_g_tilde(spec, rng)
    column_labels[j] = label


def _flip_probability(p_gamma: int, p: int) -> float:
    return 1.0 if p_gamma == 0 or p_gamma == p else FLIP_PROB


def _log_model_prior(p_gamma: int, alpha: float, ds: Dataset, spec: PriorSpec) -> float:
    lp = beta_binomial_log_prior(p_gamma, spec.bb_c, spec.bb_d, ds.p, n=ds.n,
                                 enforce_size_cap=spec.enforce_size_cap)
    if lp == -math.inf:
        return lp
    if spec.variant == Variant.DP:
        lp += alpha_prior_logpdf(alpha, p_gamma)
    return lp


# ---------------------------------------------------------------------------
# Step 1: model jumps
# ---------------------------------------------------------------------------


def step_model_jump(
    state: ModelState,
    ds: Dataset,
    spec: PriorSpec,
    rng: RandomStream,
    stats: Optional[MoveStats] = None,
) -> Tuple[ModelState, bool]:
    """
    One flip-or-swap reversible-jump proposal on the collapsed space.

    The incoming column's label and any new block value come from their
    prior predictive, so those terms cancel in the ratio. The move-type
    probability differs at the boundaries (empty or full model) and enters
    the ratio explicitly.

    Returns:
        (state after the step, accepted)
    """
    p = ds.p
    p_gamma = state.p_gamma
    included = state.indicator.indices
    excluded = np.flatnonzero(~state.indicator.gamma)
    column_labels, label_values = _structure_maps(state)

    flip_prob = _flip_probability(p_gamma, p)
    if rng.uniform() < flip_prob:
        move, log_move_fwd = "flip", math.log(flip_prob)
        j = rng.integers(p)
        if state.indicator.gamma[j]:
            del column_labels[j]
        else:
            _place_column(j, column_labels, label_values, state, spec, rng)
    else:
        move, log_move_fwd = "swap", math.log(1.0 - flip_prob)
        out = int(included[rng.integers(included.size)])
        into = int(excluded[rng.integers(excluded.size)])
        del column_labels[out]
        _place_column(into, column_labels, label_values, state, spec, rng)

    indicator, partition, shrinkage = assemble_structure(p, column_labels, label_values)
    new_size = indicator.p_gamma
    new_flip = _flip_probability(new_size, p)
    log_move_rev = math.log(new_flip if move == "flip" else 1.0 - new_flip)

    accepted = False
    log_prior_new = _log_model_prior(new_size, state.alpha, ds, spec)
    if log_prior_new > -math.inf:
        proposal = replace(state, indicator=indicator, partition=partition, shrinkage=shrinkage,
                           beta=np.zeros(new_size), log_marginal=None)
        lm_new = state_log_marginal(proposal, ds, spec)
        if lm_new > -math.inf:
            log_ratio = (lm_new - state_log_marginal(state, ds, spec)
                         + log_prior_new - _log_model_prior(p_gamma, state.alpha, ds, spec)
                         + log_move_rev - log_move_fwd)
            accepted = math.log(rng.uniform()) < log_ratio
            if accepted:
                state = proposal
    if stats is not None:
        stats.record(move, accepted)
    return state, accepted


# ---------------------------------------------------------------------------
# Steps 2 and 3: variance and coefficients
# ---------------------------------------------------------------------------


def _current_fit(state: ModelState, ds: Dataset, spec: PriorSpec):
    idx = state.indicator.indices
    A, b = ds.gram(idx)
    return conditional_fit(A, b, ds.syy, state.effective_scales(spec.resolved_tau2(ds.n)))


def step_sigma2(state: ModelState, ds: Dataset, spec: PriorSpec, rng: RandomStream) -> float:
    """sigma2 ~ InverseGamma((n-1)/2 + s_a, Q/2 + s_b) with Q from the fast path."""
    if state.p_gamma == 0:
        quad = ds.syy
    else:
        quad = _current_fit(state, ds, spec).quad_form
    if quad <= 0:
        raise NumericalError(f"non-positive residual quadratic form {quad!r}")
    shape = 0.5 * (ds.n - 1) + spec.sigma2_shape
    scale = 0.5 * quad + spec.sigma2_scale
    return float(rng.inverse_gamma(shape, scale))


def step_coefficients(state: ModelState, ds: Dataset, spec: PriorSpec,
                      rng: RandomStream) -> Tuple[float, np.ndarray]:
    """
    Conjugate draw of (beta0, beta) given sigma2.

    beta = d * (M^-1 (d*b) + sigma L_M^-T z), which has mean D M^-1 D b and
    covariance sigma2 D M^-1 D.
    """
    sigma = math.sqrt(state.sigma2)
    beta0 = float(rng.normal(ds.y_mean, sigma / math.sqrt(ds.n)))
    if state.p_gamma == 0:
        return beta0, np.zeros(0)
    fit = _current_fit(state, ds, spec)
    z = rng.normal(size=state.p_gamma)
    noise = solve_triangular(fit.factor_m.L.T, z, lower=False, check_finite=False)
    return beta0, fit.d * (fit.scaled_mean + sigma * noise)


# ---------------------------------------------------------------------------
# Step 4: labels
# ---------------------------------------------------------------------------


def step_labels_neal8(
    state: ModelState,
    ds: Dataset,
    spec: PriorSpec,
    rng: RandomStream,
    n_aux: int = 20,
) -> Tuple[Partition, ShrinkageState]:
    """
    Sequential auxiliary-variable scan over the included coefficients.

    With z = beta / d and r_i = sum_{j != i} A_ij z_j, moving coefficient i
    to a block with scale d changes the prior log density of beta by
    -log d - (z_i^2 A_ii + 2 z_i r_i) / (2 sigma2).
    """
    if state.p_gamma <= 1:
        return state.partition, state.shrinkage

    tau2 = spec.resolved_tau2(ds.n)
    idx = state.indicator.indices
    A, _ = ds.gram(idx)
    beta = state.beta
    sigma2 = state.sigma2
    labels = list(state.partition.label_array() - 1)
    values = list(state.shrinkage.g_tilde)
    counts = list(np.bincount(labels, minlength=len(values)))
    d = np.sqrt(tau2 * np.asarray(values)[labels])
    log_aux_prior = math.log(state.alpha / n_aux)

    for i in range(len(labels)):
        old = labels[i]
        counts[old] -= 1
        aux = [values[old]] if counts[old] == 0 else []
        while len(aux) < n_aux:
            aux.append(_prior_g_tilde(spec, rng))

        live = [k for k, m in enumerate(counts) if m > 0]
        candidates = np.asarray([values[k] for k in live] + aux)
        log_prior = np.asarray([math.log(counts[k]) for k in live] + [log_aux_prior] * n_aux)

        z = beta / d
        r_i = float(A[i] @ z - A[i, i] * z[i])
        d_cand = np.sqrt(tau2 * candidates)
        z_cand = beta[i] / d_cand
        log_w = log_prior - np.log(d_cand) - (z_cand ** 2 * A[i, i] + 2.0 * z_cand * r_i) / (2.0 * sigma2)

        choice = rng.categorical_log(log_w)
        if choice < len(live):
            new = live[choice]
        else:
            values.append(float(aux[choice - len(live)]))
            counts.append(0)
            new = len(values) - 1
        labels[i] = new
        counts[new] += 1
        d[i] = math.sqrt(tau2 * values[new])

    order = first_appearance_order(labels)
    relabel = {k: pos + 1 for pos, k in enumerate(order)}
    partition = Partition(tuple(relabel[k] for k in labels))
    shrinkage = ShrinkageState(np.asarray([values[k] for k in order]))
    return partition, shrinkage


# ---------------------------------------------------------------------------
# Step 5: concentration
# ---------------------------------------------------------------------------


def step_alpha(
    state: ModelState,
    spec: PriorSpec,
    rng: RandomStream,
    stats: Optional[MoveStats] = None,
    proposal_sd: float = math.sqrt(0.05),
) -> Tuple[float, Optional[bool]]:
    """
    Random-walk Metropolis on log alpha.

    For p_gamma <= 1 the partition carries no information and alpha is
    drawn from its Gamma(1, 1) surrogate prior instead.

    Returns:
        (alpha, accepted or None when no MH step was taken)
    """
    p_gamma = state.p_gamma
    if p_gamma <= 1:
        return float(rng.gamma(1.0, 1.0)), None

    def log_target(alpha: float) -> float:
        return (crp_log_prob(state.partition, alpha) + jeffreys_alpha_logpdf(alpha, p_gamma)
                + math.log(alpha))

    current = state.alpha
    proposed = current * math.exp(proposal_sd * rng.normal())
    accepted = False
    if proposed > 0 and math.isfinite(proposed):
        accepted = math.log(rng.uniform()) < log_target(proposed) - log_target(current)
    if stats is not None:
        stats.record("alpha", accepted)
    return (proposed if accepted else current), accepted


# ---------------------------------------------------------------------------
# Step 6: block shrinkage
# ---------------------------------------------------------------------------


def step_shrinkage(state: ModelState, ds: Dataset, spec: PriorSpec, rng: RandomStream) -> ShrinkageState:
    """
    Slice-within-rejection update of every block value.

    Per block, with t = v / g_tilde the conditional is
    t^(a+m/2) (t+v)^-(a+b+2) exp(-t - 2 (w / (2 sqrt v)) sqrt t); the
    (v/(v+t))^(a+b+2) factor is sliced and t drawn from the truncated
    extended gamma.
    """
    K = state.K
    if K == 0:
        return state.shrinkage
    tau2 = spec.resolved_tau2(ds.n)
    idx = state.indicator.indices
    A, _ = ds.gram(idx)
    labels = state.partition.label_array() - 1
    beta = state.beta
    scale = state.sigma2 * tau2
    c = spec.a + spec.b + 2.0
    g = state.shrinkage.g_tilde.copy()

    for k in range(K):
        inside = labels == k
        m = int(inside.sum())
        b_in = beta[inside]
        v = float(b_in @ A[np.ix_(inside, inside)] @ b_in) / (2.0 * scale)
        if not v > 0:
            g[k] = _prior_g_tilde(spec, rng)
            continue
        outside = ~inside
        w = 0.0
        if outside.any():
            b_out = beta[outside] / np.sqrt(g[labels[outside]])
            w = float(b_in @ A[np.ix_(inside, outside)] @ b_out) / scale

        t = v / g[k]
        log_u = c * (math.log(v) - math.log(v + t)) + math.log(rng.uniform())
        trunc = min(v * math.expm1(-log_u / c), TRUNC_CAP)
        shape = spec.a + 0.5 * m + 1.0
        tilt = w / (2.0 * math.sqrt(v))
        t_new = sample_truncated_extended_gamma(shape, tilt, trunc, rng)
        g[k] = v / max(t_new, np.finfo(float).tiny)
        if not math.isfinite(g[k]):
            g[k] = np.finfo(float).max

    return ShrinkageState(g)


# ---------------------------------------------------------------------------
# Sweeps and chains
# ---------------------------------------------------------------------------


@dataclass
class ChainContext:
    """Mutable per-chain bookkeeping."""
    ds: Dataset
    spec: PriorSpec
    cfg: ChainConfig
    rng: RandomStream
    stats: MoveStats = field(default_factory=MoveStats)
    log_alpha_sd: float = 0.0
    iteration: int = 0
    validator: Optional[StateValidator] = None

    def __post_init__(self):
        self.log_alpha_sd = math.log(self.cfg.alpha_proposal_sd)
        if self.cfg.debug:
            self.validator = StateValidator()

    def check(self, state: ModelState, step: str):
        if self.validator is None:
            return
        ok, message = self.validator.validate_state(state, self.ds.p, self.spec)
        if not ok:
            raise SamplerAbort(self.iteration, NumericalError(f"after {step}: {message}"))


def initial_state(ds: Dataset, spec: PriorSpec, cfg: ChainConfig) -> ModelState:
    """Starting point: the pinned model (or the empty one) with unit shrinkage."""
    columns = list(cfg.fixed_model or ())
    if spec.variant == Variant.ALL_SINGLETONS:
        raw = list(range(1, len(columns) + 1))
    elif spec.variant == Variant.FIXED_PARTITION:
        raw = [spec.fixed_labels[j] for j in columns]
    else:
        raw = [1] * len(columns)
    column_labels = dict(zip(columns, raw))
    label_values = {r: 1.0 for r in raw}
    indicator, partition, shrinkage = assemble_structure(ds.p, column_labels, label_values)
    return ModelState(indicator, partition, shrinkage, ds.y_mean, np.zeros(len(columns)),
                      ds.syy / (ds.n - 1), 1.0)


def sweep(state: ModelState, ctx: ChainContext, adapt: bool = False) -> ModelState:
    """One full scan: model moves, sigma2, (beta0, beta), labels, alpha, shrinkage."""
    ds, spec, cfg, rng = ctx.ds, ctx.spec, ctx.cfg, ctx.rng

    if cfg.fixed_model is None:
        for _ in range(cfg.model_moves_per_iter):
            state, _ = step_model_jump(state, ds, spec, rng, ctx.stats)
        ctx.check(state, "model jump")

    state = replace(state, sigma2=step_sigma2(state, ds, spec, rng))
    beta0, beta = step_coefficients(state, ds, spec, rng)
    state = replace(state, beta0=beta0, beta=beta)
    ctx.check(state, "coefficients")

    if spec.variant == Variant.DP:
        partition, shrinkage = step_labels_neal8(state, ds, spec, rng, cfg.neal_aux_d)
        if partition is not state.partition:
            state = replace(state, partition=partition, shrinkage=shrinkage, log_marginal=None)
        ctx.check(state, "labels")

        alpha, accepted = step_alpha(state, spec, rng, ctx.stats, math.exp(ctx.log_alpha_sd))
        state = replace(state, alpha=alpha)
        if adapt and accepted is not None:
            ctx.log_alpha_sd += (float(accepted) - ALPHA_TARGET_ACCEPT) / (ctx.iteration + 1) ** 0.6

    if state.K:
        state = replace(state, shrinkage=step_shrinkage(state, ds, spec, rng), log_marginal=None)
        ctx.check(state, "shrinkage")
    return state


def run_chain(
    ds: Dataset,
    spec: PriorSpec,
    cfg: ChainConfig,
    chain_index: int = 0,
    progress: Optional[ProgressCallback] = None,
) -> ChainOutput:
    """
    Run one chain and keep thinned post-burn-in draws.

    Raises:
        SamplerAbort: If any step fails, with the iteration index
    """
    if cfg.fixed_model is not None and spec.enforce_size_cap and len(cfg.fixed_model) > ds.p - 2:
        raise ValueError("fixed_model violates the model size cap")
    ctx = ChainContext(ds, spec, cfg, RandomStream(cfg.seed, chain_index))
    state = initial_state(ds, spec, cfg)
    recorder = DrawRecorder(ds.p, spec.resolved_tau2(ds.n))
    report_every = max(1, cfg.iterations // 20)
    started = time.perf_counter()

    logger.info("chain %d: %d iterations (burn-in %d, thin %d), variant %s",
                chain_index, cfg.iterations, cfg.burn_in, cfg.thin, spec.variant.value)

    for it in range(cfg.iterations):
        ctx.iteration = it
        try:
            state = sweep(state, ctx, adapt=cfg.adapt_alpha and it < cfg.burn_in)
        except SamplerAbort:
            raise
        except (BlockGError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise SamplerAbort(it, exc) from exc

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            recorder.record(state, state_log_marginal(state, ds, spec))
        if progress is not None and (it + 1) % report_every == 0:
            progress(it + 1, cfg.iterations, f"chain {chain_index}")

    elapsed = time.perf_counter() - started
    logger.info("chain %d finished in %.1fs; acceptance %s", chain_index, elapsed,
                {k: v["rate"] for k, v in ctx.stats.as_dict().items()})
    return recorder.finish(
        column_names=ds.column_names,
        move_stats=ctx.stats.as_dict(),
        config={"prior": spec.model_dump(mode="json"), "chain": cfg.model_dump(mode="json"),
                "chain_index": chain_index, "alpha_proposal_sd_final": math.exp(ctx.log_alpha_sd)},
    )


def _chain_task(args) -> ChainOutput:
    ds, spec, cfg, chain_index = args
    return run_chain(ds, spec, cfg, chain_index)


def run_chains(
    ds: Dataset,
    spec: PriorSpec,
    cfg: ChainConfig,
    max_workers: int = 1,
    progress: Optional[ProgressCallback] = None,
) -> List[ChainOutput]:
    """Run cfg.n_chains chains on independent sub-streams, in chain order."""
    tasks = [(ds, spec, cfg, i) for i in range(cfg.n_chains)]
    dispatcher = ChainDispatcher(max_workers=max_workers, progress_callback=progress)
    return dispatcher.map(_chain_task, tasks)
