"""
Unit tests for the MCMC steps and chain driver.
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats
from scipy.special import logsumexp

from core.errors import SamplerAbort
from core.likelihood import conditional_fit, log_marginal_standard_mixture
from core.model import (
    ChainConfig,
    ModelIndicator,
    ModelState,
    Partition,
    PriorSpec,
    ShrinkageState,
    Variant,
    center_dataset,
)
from core.numerics import RandomStream, batch_means_se, set_partitions
from core.priors import (
    beta_binomial_log_prior,
    beta_prime_logpdf,
    crp_log_prob,
    jeffreys_alpha_logpdf,
    sample_prior_forward,
    simulate_response,
)
from core.sampler import (
    ChainContext,
    MoveStats,
    assemble_structure,
    initial_state,
    run_chain,
    run_chains,
    step_alpha,
    step_coefficients,
    step_labels_neal8,
    step_model_jump,
    step_shrinkage,
    step_sigma2,
    sweep,
)
from core.validator import StateValidator


def make_ds(n=40, p=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[:2] = [2.0, -1.5]
    y = 0.5 + X @ beta + rng.normal(size=n)
    return center_dataset(X, y)


def make_state(ds, columns=(0, 1, 2), labels=(1, 2, 1), g=(1.0, 3.0)):
    ind = ModelIndicator.from_indices(ds.p, columns)
    return ModelState(ind, Partition(labels), ShrinkageState(np.array(g)), ds.y_mean,
                      np.array([1.5, -1.0, 0.2][:len(columns)]), 1.0, 1.0)


def grid_moments(u, log_density):
    """Mean and variance of u under a density known on a uniform grid up to a constant."""
    w = np.exp(log_density - log_density.max())
    w /= w.sum()
    mean = float((w * u).sum())
    return mean, float((w * (u - mean) ** 2).sum())


def assert_moments(draws, mean, var):
    """Chain mean and variance lie within 3 batch-means standard errors of the targets."""
    draws = np.asarray(draws, dtype=float)
    centered = (draws - draws.mean()) ** 2
    assert abs(draws.mean() - mean) < 3.0 * batch_means_se(draws)
    assert abs(draws.var() - var) < 3.0 * batch_means_se(centered)


class TestMoveStats:
    """Test acceptance bookkeeping."""

    def test_rates(self):
        """Rates are accepted over proposed, None when nothing was proposed."""
        stats = MoveStats()
        stats.record("flip", True)
        stats.record("flip", False)
        assert stats.acceptance_rate("flip") == 0.5
        assert stats.acceptance_rate("swap") is None
        summary = stats.as_dict()
        assert summary["flip"] == {"proposed": 2, "accepted": 1, "rate": 0.5}


class TestStructure:
    """Test assembling canonical states."""

    def test_assemble_drops_unused_labels(self):
        """Raw labels are canonicalized in column order; unused values are dropped."""
        ind, part, shr = assemble_structure(6, {4: 9, 1: 7, 3: 9}, {7: 0.5, 9: 2.0, 11: 8.0})
        assert ind.key() == (1, 3, 4)
        assert part.labels == (1, 2, 2)
        assert_allclose(shr.g_tilde, [0.5, 2.0])

    @pytest.mark.parametrize("variant,expected", [
        (Variant.DP, (1, 1, 1)),
        (Variant.SINGLE_BLOCK, (1, 1, 1)),
        (Variant.ALL_SINGLETONS, (1, 2, 3)),
    ])
    def test_initial_state(self, variant, expected):
        """A pinned model starts with the variant's partition and unit shrinkage."""
        ds = make_ds()
        cfg = ChainConfig(iterations=10, burn_in=0, fixed_model=(0, 2, 4))
        state = initial_state(ds, PriorSpec(variant=variant), cfg)
        assert state.partition.labels == expected
        assert_allclose(state.shrinkage.g_tilde, 1.0)
        assert state.sigma2 == pytest.approx(ds.syy / (ds.n - 1))

    def test_initial_state_fixed_partition(self):
        """fixed_partition reads the labels of the pinned columns."""
        ds = make_ds()
        spec = PriorSpec(variant=Variant.FIXED_PARTITION, fixed_labels=(1, 2, 1, 3, 2))
        cfg = ChainConfig(iterations=10, burn_in=0, fixed_model=(1, 3, 4))
        assert initial_state(ds, spec, cfg).partition.labels == (1, 2, 1)


class TestSteps:
    """Test the individual sweep steps."""

    def test_model_jump_keeps_state_valid(self):
        """Every jump yields a valid state and is counted."""
        ds = make_ds()
        spec = PriorSpec()
        rng = RandomStream(3)
        stats = MoveStats()
        state = make_state(ds)
        for _ in range(200):
            state, _ = step_model_jump(state, ds, spec, rng, stats)
            ok, message = StateValidator.validate_state(state, ds.p, spec)
            assert ok, message
        assert stats.proposed["flip"] + stats.proposed["swap"] == 200

    def test_model_jump_respects_size_cap(self):
        """Models above p - 2 are never reached with the cap on."""
        ds = make_ds(p=4)
        spec = PriorSpec()
        rng = RandomStream(4)
        state = make_state(ds, columns=(0, 1), labels=(1, 1), g=(1.0,))
        for _ in range(300):
            state, _ = step_model_jump(state, ds, spec, rng)
            assert state.p_gamma <= 2

    def test_rejected_jump_leaves_state_unchanged(self):
        """A rejected proposal hands back the incoming state untouched."""
        ds = make_ds()
        spec = PriorSpec()
        rng = RandomStream(13)
        state = make_state(ds)
        rejected = 0
        for _ in range(300):
            before = state.fingerprint()
            after, accepted = step_model_jump(state, ds, spec, rng)
            if not accepted:
                rejected += 1
                assert after is state
                assert after.fingerprint() == before
            state = after
        assert rejected > 0

    def test_sigma2_null_model(self):
        """For the empty model sigma2 is InverseGamma((n-1)/2, syy/2)."""
        ds = make_ds()
        spec = PriorSpec()
        state = make_state(ds, columns=(), labels=(), g=())
        rng = RandomStream(5)
        draws = np.array([step_sigma2(state, ds, spec, rng) for _ in range(20000)])
        assert draws.mean() == pytest.approx(ds.syy / (ds.n - 3), rel=0.02)

    def test_coefficient_mean(self):
        """beta draws average D M^-1 D b."""
        ds = make_ds()
        spec = PriorSpec()
        state = make_state(ds)
        A, b = ds.gram(state.indicator.indices)
        fit = conditional_fit(A, b, ds.syy, state.effective_scales(spec.resolved_tau2(ds.n)))
        rng = RandomStream(6)
        draws = np.array([step_coefficients(state, ds, spec, rng)[1] for _ in range(20000)])
        assert_allclose(draws.mean(axis=0), fit.d * fit.scaled_mean, atol=0.02)

    def test_coefficients_null_model(self):
        """The empty model only draws the intercept."""
        ds = make_ds()
        state = make_state(ds, columns=(), labels=(), g=())
        beta0, beta = step_coefficients(state, ds, PriorSpec(), RandomStream(7))
        assert beta.size == 0
        assert math.isfinite(beta0)

    def test_labels_canonical(self):
        """Neal's algorithm 8 returns canonical partitions with one value per block."""
        ds = make_ds()
        spec = PriorSpec()
        state = make_state(ds)
        rng = RandomStream(8)
        for _ in range(100):
            part, shr = step_labels_neal8(state, ds, spec, rng, n_aux=5)
            assert part.size == 3
            assert part.labels[0] == 1
            assert shr.K == part.K
            state = replace(state, partition=part, shrinkage=shr)

    def test_labels_single_coefficient(self):
        """With one coefficient the partition is left alone."""
        ds = make_ds()
        state = make_state(ds, columns=(0,), labels=(1,), g=(2.0,))
        part, shr = step_labels_neal8(state, ds, PriorSpec(), RandomStream(9))
        assert part is state.partition
        assert shr is state.shrinkage

    def test_alpha_small_models(self):
        """p_gamma <= 1 draws alpha from Gamma(1, 1) without an MH step."""
        ds = make_ds()
        state = make_state(ds, columns=(0,), labels=(1,), g=(2.0,))
        rng = RandomStream(10)
        draws = [step_alpha(state, PriorSpec(), rng) for _ in range(5000)]
        assert all(acc is None for _, acc in draws)
        assert np.mean([a for a, _ in draws]) == pytest.approx(1.0, rel=0.05)

    def test_alpha_metropolis(self):
        """Larger models take an MH step that is counted."""
        ds = make_ds()
        state = make_state(ds)
        stats = MoveStats()
        alpha, accepted = step_alpha(state, PriorSpec(), RandomStream(11), stats)
        assert alpha > 0
        assert accepted in (True, False)
        assert stats.proposed["alpha"] == 1

    def test_shrinkage_positive(self):
        """Updated block values stay positive and finite."""
        ds = make_ds()
        spec = PriorSpec()
        state = make_state(ds)
        rng = RandomStream(12)
        for _ in range(200):
            shr = step_shrinkage(state, ds, spec, rng)
            assert shr.K == 2
            assert np.all(np.isfinite(shr.g_tilde)) and np.all(shr.g_tilde > 0)
            state = replace(state, shrinkage=shr)


class TestChain:
    """Test sweeps and whole chains."""

    @pytest.mark.parametrize("variant", list(Variant))
    def test_debug_sweeps(self, variant):
        """State checks pass after every step of every variant."""
        ds = make_ds()
        labels = (1, 2, 1, 3, 2) if variant == Variant.FIXED_PARTITION else None
        spec = PriorSpec(variant=variant, fixed_labels=labels)
        cfg = ChainConfig(iterations=60, burn_in=10, thin=1, seed=1, debug=True)
        out = run_chain(ds, spec, cfg)
        assert out.n_draws == 50
        assert np.all(out.sigma2 > 0)
        if variant == Variant.SINGLE_BLOCK:
            assert np.all(out.K <= 1)
        if variant == Variant.ALL_SINGLETONS:
            assert_array_equal(out.K, out.p_gamma)

    def test_deterministic(self):
        """Same seed and chain index give identical draws; other indices differ."""
        ds = make_ds()
        cfg = ChainConfig(iterations=80, burn_in=20, thin=2, seed=42)
        a = run_chain(ds, PriorSpec(), cfg)
        b = run_chain(ds, PriorSpec(), cfg)
        c = run_chain(ds, PriorSpec(), cfg, chain_index=1)
        assert_array_equal(a.gamma, b.gamma)
        assert_array_equal(a.beta, b.beta)
        assert_array_equal(a.sigma2, b.sigma2)
        assert not np.array_equal(a.sigma2, c.sigma2)

    def test_run_chains_in_order(self):
        """run_chains gives one output per chain, each equal to its single run."""
        ds = make_ds()
        cfg = ChainConfig(iterations=40, burn_in=10, thin=1, seed=5, n_chains=2)
        outs = run_chains(ds, PriorSpec(), cfg)
        assert len(outs) == 2
        assert_array_equal(outs[1].sigma2, run_chain(ds, PriorSpec(), cfg, chain_index=1).sigma2)

    def test_fixed_model(self):
        """A pinned model is never left."""
        ds = make_ds()
        cfg = ChainConfig(iterations=50, burn_in=0, thin=1, seed=2, fixed_model=(0, 1))
        out = run_chain(ds, PriorSpec(), cfg)
        assert np.all(out.gamma[:, :2])
        assert not out.gamma[:, 2:].any()

    def test_fixed_model_size_cap(self):
        """Pinning a model above the cap is an error."""
        ds = make_ds(p=4)
        cfg = ChainConfig(iterations=10, burn_in=0, fixed_model=(0, 1, 2))
        with pytest.raises(ValueError):
            run_chain(ds, PriorSpec(), cfg)

    def test_progress_callback(self):
        """Progress is reported in twentieths of the run."""
        ds = make_ds()
        calls = []
        cfg = ChainConfig(iterations=40, burn_in=0, thin=1, seed=3)
        run_chain(ds, PriorSpec(), cfg, progress=lambda done, total, label: calls.append((done, total)))
        assert calls[-1] == (40, 40)
        assert len(calls) == 20

    def test_abort_carries_iteration(self):
        """A failing step aborts with the iteration index."""
        ds = make_ds()
        spec = PriorSpec()
        cfg = ChainConfig(iterations=10, burn_in=0, seed=0, debug=True)
        ctx = ChainContext(ds, spec, cfg, RandomStream(0))
        ctx.iteration = 7
        bad = replace(make_state(ds), sigma2=-1.0)
        with pytest.raises(SamplerAbort) as info:
            ctx.check(bad, "test")
        assert info.value.iteration == 7

    def test_summary(self):
        """The chain digest is JSON-ready."""
        ds = make_ds()
        out = run_chain(ds, PriorSpec(), ChainConfig(iterations=60, burn_in=10, thin=1, seed=4))
        summary = out.summary()
        assert summary["n_draws"] == 50
        assert set(summary["pip"]) == set(ds.column_names)
        assert out.model_size_hist().sum() == pytest.approx(1.0)
        assert out.joint_pk_hist()["probability"].sum() == pytest.approx(1.0)


@pytest.mark.slow
class TestPosteriorCorrectness:
    """Long-run checks of the stationary distribution."""

    def test_single_block_matches_enumeration(self):
        """Visit frequencies of single_block match exact model probabilities."""
        rng = np.random.default_rng(21)
        X = rng.normal(size=(15, 3))
        ds = center_dataset(X, X @ np.array([1.0, 0.0, 0.5]) + rng.normal(size=15))
        spec = PriorSpec(variant=Variant.SINGLE_BLOCK, enforce_size_cap=False)
        models = [tuple(j for j in range(3) if mask >> j & 1) for mask in range(8)]
        log_post = np.array([
            log_marginal_standard_mixture(ds, ModelIndicator.from_indices(3, m), spec)
            + beta_binomial_log_prior(len(m), spec.bb_c, spec.bb_d, 3, n=ds.n, enforce_size_cap=False)
            for m in models
        ])
        exact = np.exp(log_post - log_post.max())
        exact /= exact.sum()

        out = run_chain(ds, spec, ChainConfig(iterations=40000, burn_in=2000, thin=1, seed=9))
        visited = [tuple(int(j) for j in np.flatnonzero(row)) for row in out.gamma]
        for m, prob in zip(models, exact):
            hits = np.array([key == m for key in visited], dtype=float)
            # rarely visited models fall back to the independent-draw error
            se = max(batch_means_se(hits), math.sqrt(prob * (1.0 - prob) / hits.size))
            assert abs(hits.mean() - prob) < 3.0 * se, m

    def test_successive_conditional_matches_prior(self):
        """Alternating sweeps and fresh responses keep the prior marginals."""
        rng = np.random.default_rng(22)
        ds = center_dataset(rng.normal(size=(15, 4)), rng.normal(size=15))
        spec = PriorSpec(sigma2_shape=3.0, sigma2_scale=2.0)
        stream = RandomStream(23)

        forward = [sample_prior_forward(ds, spec, stream) for _ in range(20000)]
        fwd_size = np.array([s.p_gamma for s in forward], dtype=float)
        fwd_blocks = np.array([s.K for s in forward], dtype=float)
        fwd_log_s2 = np.log([s.sigma2 for s in forward])

        cfg = ChainConfig(iterations=10, burn_in=0, seed=24)
        ctx = ChainContext(ds, spec, cfg, RandomStream(24))
        state = sample_prior_forward(ds, spec, ctx.rng)
        sizes, blocks, log_s2 = [], [], []
        for it in range(20000):
            ctx.ds = ds.with_response(simulate_response(ds, state, ctx.rng))
            ctx.iteration = it
            state = sweep(replace(state, log_marginal=None), ctx)
            sizes.append(state.p_gamma)
            blocks.append(state.K)
            log_s2.append(math.log(state.sigma2))
        sizes = np.array(sizes, dtype=float)
        blocks = np.array(blocks, dtype=float)
        log_s2 = np.array(log_s2)

        for fwd, sc in ((fwd_size, sizes), (fwd_blocks, blocks), (fwd_log_s2, log_s2)):
            se = math.hypot(fwd.std() / math.sqrt(fwd.size), batch_means_se(sc))
            assert abs(fwd.mean() - sc.mean()) < 4.0 * se


@pytest.mark.slow
class TestStepStationarity:
    """Single steps iterated on a frozen state reproduce their exact conditionals."""

    def test_shrinkage_matches_conditional(self):
        """log g_tilde of both blocks matches a grid over the joint block conditional."""
        ds = make_ds()
        spec = PriorSpec()
        state = make_state(ds)
        tau2 = spec.resolved_tau2(ds.n)
        A, _ = ds.gram(state.indicator.indices)
        labels = state.partition.label_array() - 1
        weighted = A * np.outer(state.beta, state.beta)
        Q = np.array([[weighted[np.ix_(labels == k, labels == l)].sum() for l in range(2)] for k in range(2)])
        sizes = np.bincount(labels)

        u = np.linspace(-20.0, 20.0, 1201)
        U1, U2 = np.meshgrid(u, u, indexing="ij")
        g1, g2 = np.exp(U1), np.exp(U2)
        quad = Q[0, 0] / g1 + Q[1, 1] / g2 + 2.0 * Q[0, 1] / np.sqrt(g1 * g2)
        log_density = -quad / (2.0 * state.sigma2 * tau2)
        for U, g, m in ((U1, g1, sizes[0]), (U2, g2, sizes[1])):
            log_density = log_density + beta_prime_logpdf(g, spec.a, spec.b, 1.0) + (1.0 - 0.5 * m) * U

        rng = RandomStream(40)
        draws = []
        for _ in range(20000):
            state = replace(state, shrinkage=step_shrinkage(state, ds, spec, rng))
            draws.append(np.log(state.shrinkage.g_tilde))
        draws = np.array(draws)

        for k, U in enumerate((U1, U2)):
            assert_moments(draws[:, k], *grid_moments(U, log_density))

    def test_alpha_matches_conditional(self):
        """log alpha for a (3, 2, 1) partition of six coefficients matches quadrature."""
        ds = make_ds(p=8)
        spec = PriorSpec()
        part = Partition((1, 1, 1, 2, 2, 3))
        state = ModelState(ModelIndicator.from_indices(8, range(6)), part, ShrinkageState(np.ones(3)),
                           ds.y_mean, np.zeros(6), 1.0, 1.0)

        u = np.linspace(-25.0, 25.0, 4001)
        alpha = np.exp(u)
        log_density = crp_log_prob(part, alpha) + jeffreys_alpha_logpdf(alpha, 6) + u

        rng = RandomStream(41)
        draws = []
        for _ in range(40000):
            value, _ = step_alpha(state, spec, rng, proposal_sd=1.0)
            state = replace(state, alpha=value)
            draws.append(math.log(value))

        assert_moments(draws, *grid_moments(u, log_density))

    def test_labels_match_enumeration(self):
        """Partitions reached from a fixed start follow the enumerated label conditional."""
        n = 30
        rng_np = np.random.default_rng(42)
        Z = rng_np.normal(size=(n, 3))
        X, _ = np.linalg.qr(Z - Z.mean(axis=0))
        ds = center_dataset(X * math.sqrt(n), rng_np.normal(size=n))
        spec = PriorSpec()
        tau2 = spec.resolved_tau2(ds.n)
        beta = np.array([2.5, 0.1, -0.4])
        start = ModelState(ModelIndicator.from_indices(3, [0, 1, 2]), Partition((1, 1, 1)),
                           ShrinkageState(np.array([1.0])), ds.y_mean, beta, 1.0, 1.0)

        # orthogonal columns: the conditional factors over blocks
        A, _ = ds.gram(np.arange(3))
        norms = np.diag(A) * beta ** 2
        u = np.linspace(-30.0, 30.0, 6001)
        du = u[1] - u[0]

        def log_block(members):
            m = len(members)
            s = float(norms[members].sum())
            lp = (beta_prime_logpdf(np.exp(u), spec.a, spec.b, 1.0) + (1.0 - 0.5 * m) * u
                  - s / (2.0 * start.sigma2 * tau2) * np.exp(-u))
            return logsumexp(lp) + math.log(du)

        partitions = list(set_partitions(3))
        log_w = []
        for labels in partitions:
            part = Partition(labels)
            log_w.append(crp_log_prob(part, start.alpha)
                         + sum(log_block(part.members(k)) for k in range(1, part.K + 1)))
        log_w = np.array(log_w)
        exact = np.exp(log_w - logsumexp(log_w))

        rng = RandomStream(43)
        replicates = 1500
        counts = dict.fromkeys(partitions, 0)
        for _ in range(replicates):
            state = start
            for _ in range(40):
                part, shr = step_labels_neal8(state, ds, spec, rng, n_aux=5)
                state = replace(state, partition=part, shrinkage=shr)
                state = replace(state, shrinkage=step_shrinkage(state, ds, spec, rng))
            counts[state.partition.labels] += 1

        observed = np.array([counts[labels] for labels in partitions], dtype=float)
        result = stats.chisquare(observed, exact * replicates)
        assert result.pvalue > 1e-3, dict(zip(partitions, observed))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
