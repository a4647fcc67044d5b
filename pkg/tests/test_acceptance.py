"""
Long-running directional checks on simulated designs.

Run with: pytest -m slow tests/test_acceptance.py
"""

import numpy as np
import pandas as pd
import pytest

from cli.simulate import clp_replicate, consistency_replicate, grid_replicate
from core.inference import different_shrinkage_probability
from core.likelihood import log_marginal_dp_exact
from core.model import ChainConfig, ModelIndicator, PriorSpec, Variant, center_dataset
from core.sampler import run_chain

pytestmark = pytest.mark.slow

BETA2_GRID = [0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0, 210.0, 240.0]


@pytest.fixture(scope="module")
def clp_table():
    opts = {"seed": 101, "n": 100, "beta0": 0.5, "beta1": 1.0, "grid": BETA2_GRID,
            "spec": PriorSpec(variant=Variant.DP, enforce_size_cap=False), "method": "exact",
            "chain": ChainConfig(iterations=2, burn_in=1)}
    rows = [row for r in range(20) for row in clp_replicate((r, 0.0, r, opts))]
    return pd.DataFrame(rows).groupby("beta2").mean(numeric_only=True)


class TestConditionalLindleyParadox:
    """A shared g penalises the small effect; block shrinkage does not."""

    def test_shared_g_keeps_falling(self, clp_table):
        """The hyper-g/n log Bayes factor drops by more than 3 nats without levelling off."""
        bf = clp_table["log_bf_hypergn_quadrature"]
        assert bf[0.0] - bf[240.0] > 3.0
        first, last = bf[0.0] - bf[30.0], bf[210.0] - bf[240.0]
        assert first > 0.0
        assert last > 0.3 * first

    def test_dirichlet_mixture_flattens(self, clp_table):
        """The DP mixture log Bayes factor levels off as the large coefficient grows."""
        bf = clp_table["log_bf_dp"]
        first, last = bf[0.0] - bf[30.0], bf[210.0] - bf[240.0]
        assert abs(last) < 0.5 * abs(first)

    def test_different_shrinkage_wins(self, clp_table):
        """The two coefficients end up in different blocks."""
        assert clp_table.loc[240.0, "prob_diff_shrinkage"] > 0.8


class TestSeparatedCoefficients:
    """One huge and one tiny coefficient on orthogonal columns."""

    def test_chain_splits_blocks(self):
        """The sampler puts them in different blocks most of the time."""
        rng = np.random.default_rng(7)
        n = 100
        Z = rng.normal(size=(n, 2))
        Q, _ = np.linalg.qr(Z - Z.mean(axis=0))
        X = Q * np.sqrt(n)
        y = X @ np.array([100.0, 0.1]) + rng.normal(size=n)
        ds = center_dataset(X, y, ["big", "small"])
        spec = PriorSpec(variant=Variant.DP, enforce_size_cap=False)

        chain = run_chain(ds, spec, ChainConfig(iterations=8000, burn_in=1000, thin=2, seed=8,
                                                fixed_model=(0, 1)))
        empirical = different_shrinkage_probability(chain, "big", "small")
        _, exact = log_marginal_dp_exact(ds, ModelIndicator.from_indices(2, [0, 1]), spec)
        assert empirical > 0.8
        assert empirical == pytest.approx(exact[(1, 2)], abs=0.08)


class TestAlphaAdaptation:
    """Proposal tuning for the concentration parameter."""

    def test_acceptance_near_target(self):
        """After burn-in tuning the MH acceptance rate sits near 45%."""
        rng = np.random.default_rng(31)
        X = rng.normal(size=(80, 8))
        beta = np.array([3.0, 3.0, 0.5, 0.5, 1.5, 0.0, 0.0, 0.0])
        ds = center_dataset(X, X @ beta + rng.normal(size=80))
        chain = run_chain(ds, PriorSpec(), ChainConfig(iterations=6000, burn_in=2000, thin=5, seed=32))
        rate = chain.move_stats["alpha"]["rate"]
        assert 0.35 <= rate <= 0.55


class TestModelSelectionConsistency:
    """The true model gains posterior mass as n grows."""

    def test_median_probability_increases(self):
        """Median posterior probability of the true model is strictly increasing in n."""
        opts = {"seed": 202, "p": 6, "coefficients": [1.0, -1.0], "noise_sd": 1.0,
                "spec": PriorSpec(),
                "chain": ChainConfig(iterations=6000, burn_in=1000, thin=5)}
        medians = []
        for i, n in enumerate([100, 400, 1600]):
            rows = [consistency_replicate((r, n, i * 20 + r, opts)) for r in range(20)]
            medians.append(float(np.median([row["prob_true_model"] for row in rows])))
        assert medians[0] < medians[1] < medians[2]


class TestVariantGrid:
    """Block shrinkage against a single shared g on the reduced grid."""

    def test_small_effect_power(self):
        """The DP mixture finds more small effects at a modest type I cost."""
        opts = {"seed": 303, "n": 150, "sizes": (10, 10, 40), "large_sd": 10.0, "noise_sd": 1.0,
                "scheme": "k3", "variants": [Variant.DP, Variant.SINGLE_BLOCK],
                "spec": PriorSpec(variant=Variant.DP),
                "chain": ChainConfig(iterations=5000, burn_in=1000, thin=5)}
        rows = [row for e, eta in enumerate([0.0, 0.5]) for r in range(20)
                for row in grid_replicate((r, eta, e * 20 + r, opts))]
        table = pd.DataFrame(rows).groupby("variant")[["power_small", "type1"]].mean()
        assert table.loc["dp", "power_small"] - table.loc["single_block", "power_small"] >= 0.03
        assert table.loc["dp", "type1"] - table.loc["single_block", "type1"] <= 0.05


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-m", "slow"])
