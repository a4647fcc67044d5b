"""
Unit tests for posterior summaries, prediction and scoring.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.inference import (
    ChainOutput,
    aggregate_selection_metrics,
    coefficient_posterior_mean,
    different_shrinkage_probability,
    interval_score,
    interval_score_summary,
    merge_chains,
    mse_relative,
    pip,
    posterior_log_bf_estimate,
    predict,
    selection_metrics,
)
from core.numerics import RandomStream


def make_chain(seed=0, draws=4):
    """Hand-built draws over three columns."""
    rng = np.random.default_rng(seed)
    gamma = np.array([[1, 1, 0], [1, 0, 0], [1, 1, 1], [0, 0, 0]], dtype=bool)[:draws]
    labels = np.array([[1, 2, 0], [1, 0, 0], [1, 1, 2], [0, 0, 0]])[:draws]
    beta = np.where(gamma, rng.normal(size=gamma.shape), 0.0)
    return ChainOutput(
        column_names=["a", "b", "c"],
        gamma=gamma,
        beta=beta,
        beta0=np.full(draws, 2.0),
        sigma2=np.full(draws, 0.25),
        alpha=np.ones(draws),
        p_gamma=gamma.sum(axis=1),
        K=labels.max(axis=1),
        labels=labels,
        g_effective=np.where(gamma, 10.0, 0.0),
        log_marginal=np.array([-10.0, -11.0, -12.0, -13.0])[:draws],
    )


class TestChainOutput:
    """Test draw summaries."""

    def test_pips_and_means(self):
        """Inclusion frequencies and model-averaged means."""
        chain = make_chain()
        assert_allclose(chain.pips, [0.75, 0.5, 0.25])
        assert pip(chain, "b") == 0.5
        assert coefficient_posterior_mean(chain, 0) == pytest.approx(chain.beta[:, 0].mean())
        with pytest.raises(KeyError):
            pip(chain, "z")
        with pytest.raises(KeyError):
            pip(chain, 5)

    def test_histograms(self):
        """Model size, cluster and joint histograms each sum to 1."""
        chain = make_chain()
        sizes = chain.model_size_hist()
        assert sizes.name == "probability"
        assert sizes.to_dict() == {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25}
        assert chain.cluster_hist().sum() == pytest.approx(1.0)
        joint = chain.joint_pk_hist()
        assert list(joint.columns) == ["p_gamma", "K", "probability"]
        assert joint["probability"].sum() == pytest.approx(1.0)

    def test_model_probabilities(self):
        """Models are keyed by their included columns, the empty one by ()."""
        probs = make_chain().model_probabilities()
        assert probs[(0, 1)] == 0.25
        assert probs[()] == 0.25
        assert probs.sum() == pytest.approx(1.0)

    def test_different_shrinkage(self):
        """Both included and in different blocks."""
        chain = make_chain()
        assert different_shrinkage_probability(chain, "a", "b") == 0.25
        assert different_shrinkage_probability(chain, "b", "c") == 0.25
        assert different_shrinkage_probability(chain, "a", "c") == 0.25

    def test_merge(self):
        """Merging concatenates draws and keeps per-chain move stats."""
        merged = merge_chains([make_chain(0), make_chain(1)])
        assert merged.n_draws == 8
        assert set(merged.move_stats) == {"chain_0", "chain_1"}
        with pytest.raises(ValueError):
            merge_chains([])

    def test_merge_column_mismatch(self):
        """Chains over different columns cannot be merged."""
        other = make_chain()
        other.column_names = ["x", "y", "z"]
        with pytest.raises(ValueError):
            merge_chains([make_chain(), other])

    def test_empty_chain(self):
        """Summaries of a chain without draws are errors."""
        chain = make_chain(draws=0)
        with pytest.raises(ValueError):
            pip(chain, 0)


class TestBayesFactorEstimate:
    """Test the posterior-draw Bayes factor estimate."""

    def test_constant_marginal(self):
        """With a constant log marginal the estimate is exact."""
        chain = make_chain()
        chain.log_marginal = np.full(4, -5.0)
        assert posterior_log_bf_estimate(chain, -8.0) == pytest.approx(3.0)

    def test_reciprocal_mean(self):
        """The estimate is minus the log mean of f(null) / f(y | g)."""
        chain = make_chain()
        expected = -math.log(np.mean(np.exp(-20.0 - chain.log_marginal)))
        assert posterior_log_bf_estimate(chain, -20.0) == pytest.approx(expected, rel=1e-12)


class TestPredict:
    """Test posterior predictive intervals."""

    class Design:
        column_means = np.array([1.0, 0.0, 0.0])
        column_scales = np.array([1.0, 2.0, 1.0])

    def test_mean_without_noise(self):
        """Without noise the mean is beta0 + beta'z on the training scale."""
        chain = make_chain()
        X_new = np.array([[2.0, 4.0, 1.0]])
        out = predict(chain, self.Design(), X_new, noise=False)
        z = np.array([1.0, 2.0, 1.0])
        assert out["mean"].iloc[0] == pytest.approx(float(np.mean(2.0 + chain.beta @ z)))
        assert list(out.columns) == ["mean", "lower", "upper"]

    def test_interval_contains_mean(self):
        """Intervals are ordered and the draws can be returned."""
        chain = make_chain()
        X_new = np.zeros((5, 3))
        out, draws = predict(chain, self.Design(), X_new, level=0.9, rng=RandomStream(1), return_draws=True)
        assert draws.shape == (4, 5)
        assert np.all(out["lower"] <= out["upper"])

    def test_bad_arguments(self):
        """Wrong widths and levels are rejected."""
        chain = make_chain()
        with pytest.raises(ValueError):
            predict(chain, self.Design(), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            predict(chain, self.Design(), np.zeros((2, 3)), level=1.0)


class TestIntervalScore:
    """Test the interval score."""

    def test_inside(self):
        """Inside the interval only the width counts."""
        assert interval_score(1.0, 3.0, 2.0, 0.95) == pytest.approx(2.0)

    def test_penalty_factor(self):
        """At 95% a miss costs 40 times the distance."""
        assert interval_score(1.0, 3.0, 0.5, 0.95) == pytest.approx(2.0 + 40 * 0.5)
        assert interval_score(1.0, 3.0, 4.0, 0.95) == pytest.approx(2.0 + 40 * 1.0)

    def test_vectorised_summary(self):
        """Arrays score element-wise; the summary gives mean and median."""
        scores = interval_score([0, 0, 0], [1, 1, 1], [0.5, 2.0, -1.0], 0.9)
        assert_allclose(scores, [1.0, 21.0, 21.0])
        assert interval_score_summary([0, 0, 0], [1, 1, 1], [0.5, 2.0, -1.0], 0.9) == {
            "mean": pytest.approx(43.0 / 3), "median": 21.0}

    def test_invalid(self):
        """Crossed bounds and bad levels raise."""
        with pytest.raises(ValueError):
            interval_score(2.0, 1.0, 1.5, 0.95)
        with pytest.raises(ValueError):
            interval_score(1.0, 2.0, 1.5, 0.0)


class TestSelectionMetrics:
    """Test power, type I error and F1."""

    def test_basic(self):
        """Rates over true and false columns."""
        pips = [0.9, 0.2, 0.8, 0.6, 0.1]
        truth = [True, True, False, False, False]
        out = selection_metrics(pips, truth, small=[1], large=[0])
        assert out["power"] == 0.5
        assert out["power_small"] == 0.0
        assert out["power_large"] == 1.0
        assert out["type1"] == pytest.approx(2.0 / 3.0)
        assert out["precision"] == pytest.approx(1.0 / 3.0)
        assert out["f1"] == pytest.approx(0.4)

    def test_undefined_rates(self):
        """No positives and no selections leave the rates undefined."""
        out = selection_metrics([0.1, 0.2], [False, False])
        assert out["power"] is None
        assert out["precision"] is None
        assert out["f1"] is None
        assert out["type1"] == 0.0
        assert out["power_small"] is None

    def test_zero_f1(self):
        """Selections that are all wrong give F1 = 0."""
        out = selection_metrics([0.9, 0.1], [False, True])
        assert out["f1"] == 0.0

    def test_aggregate(self):
        """Means skip undefined entries and count them."""
        rows = [{"power": 1.0, "f1": None}, {"power": 0.5, "f1": 0.4}]
        out = aggregate_selection_metrics(rows)
        assert out["power"] == 0.75
        assert out["f1"] == 0.4
        assert out["f1_undefined"] == 1
        assert out["power_undefined"] == 0

    def test_length_mismatch(self):
        """pips and truth must align."""
        with pytest.raises(ValueError):
            selection_metrics([0.5], [True, False])


class TestRelativeMse:
    """Test the relative mean squared error."""

    def test_ratio(self):
        """MSE of the estimate over that of the baseline."""
        assert mse_relative([1.0, 2.0], [0.0, 0.0], [2.0, 2.0]) == pytest.approx(5.0 / 8.0)

    def test_zero_baseline(self):
        """A perfect baseline makes the ratio undefined."""
        with pytest.raises(ValueError):
            mse_relative([1.0], [0.0], [0.0])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
