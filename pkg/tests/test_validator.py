"""
Unit tests for validator.
"""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from core.model import ModelIndicator, ModelState, Partition, PriorSpec, ShrinkageState, Variant
from core.validator import OutputValidator, StateValidator


def make_state(columns=(0, 2, 3), labels=(1, 2, 1), g=(1.0, 2.0), p=6):
    return ModelState(ModelIndicator.from_indices(p, columns), Partition(labels),
                      ShrinkageState(np.array(g)), 0.0, np.ones(len(columns)), 1.0, 1.0)


class TestStateValidator:
    """Test state invariants."""

    def test_valid_state(self):
        """A well-formed DP state passes."""
        ok, message = StateValidator.validate_state(make_state(), 6, PriorSpec())
        assert ok
        assert message is None

    def test_wrong_length(self):
        """Indicator length must equal p."""
        ok, message = StateValidator.validate_state(make_state(), 7, PriorSpec())
        assert not ok
        assert "length" in message

    def test_size_cap(self):
        """The cap applies only when enforced."""
        state = make_state(columns=(0, 1, 2), labels=(1, 1, 1), g=(1.0,), p=4)
        assert not StateValidator.validate_state(state, 4, PriorSpec())[0]
        assert StateValidator.validate_state(state, 4, PriorSpec(enforce_size_cap=False))[0]

    def test_non_canonical_labels(self):
        """Labels must appear in first-appearance order."""
        state = make_state(labels=(2, 1, 2))
        ok, message = StateValidator.validate_state(state, 6, PriorSpec())
        assert not ok
        assert "canonical" in message

    def test_block_count_mismatch(self):
        """One shrinkage value per block."""
        state = make_state(g=(1.0,))
        assert not StateValidator.validate_state(state, 6, PriorSpec())[0]

    @pytest.mark.parametrize("field,value", [("sigma2", 0.0), ("alpha", -1.0), ("beta0", np.nan)])
    def test_scalar_fields(self, field, value):
        """sigma2 and alpha positive, coefficients finite."""
        state = replace(make_state(), **{field: value})
        assert not StateValidator.validate_state(state, 6, PriorSpec())[0]

    def test_beta_shape(self):
        """beta has one entry per included column."""
        state = replace(make_state(), beta=np.ones(2))
        assert not StateValidator.validate_state(state, 6, PriorSpec())[0]

    def test_variant_constraints(self):
        """single_block, all_singletons and fixed_partition restrict the labels."""
        state = make_state()
        assert not StateValidator.validate_state(state, 6, PriorSpec(variant=Variant.SINGLE_BLOCK))[0]
        assert not StateValidator.validate_state(state, 6, PriorSpec(variant=Variant.ALL_SINGLETONS))[0]
        agree = PriorSpec(variant=Variant.FIXED_PARTITION, fixed_labels=(1, 2, 3, 1, 2, 3))
        disagree = PriorSpec(variant=Variant.FIXED_PARTITION, fixed_labels=(1, 1, 1, 1, 1, 1))
        assert StateValidator.validate_state(state, 6, agree)[0]
        assert not StateValidator.validate_state(state, 6, disagree)[0]


class TestOutputValidator:
    """Test table schemas."""

    def test_valid_histogram(self):
        """A normalised histogram passes."""
        df = pd.DataFrame({"p_gamma": [0, 1, 2], "probability": [0.2, 0.5, 0.3]})
        assert OutputValidator.validate_table(df, "model_size_hist") == (True, [])

    def test_histogram_mass(self):
        """Mass must be 1."""
        df = pd.DataFrame({"K": [1, 2], "probability": [0.2, 0.5]})
        ok, errors = OutputValidator.validate_table(df, "cluster_hist")
        assert not ok
        assert "mass" in errors[0]

    def test_missing_columns_and_ranges(self):
        """Missing columns and probabilities outside [0, 1] are both reported."""
        df = pd.DataFrame({"column": ["a"], "pip": [1.2]})
        ok, errors = OutputValidator.validate_table(df, "coefficients")
        assert not ok
        assert len(errors) == 2

    def test_prediction_bounds(self):
        """Intervals must be ordered."""
        df = pd.DataFrame({"mean": [1.0], "lower": [2.0], "upper": [0.0]})
        assert not OutputValidator.validate_table(df, "predictions")[0]

    def test_unknown_schema(self):
        """Unknown schema names raise."""
        with pytest.raises(ValueError):
            OutputValidator.validate_table(pd.DataFrame(), "posterior_draws")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
