"""
Unit tests for CSV parsing, designs, partition files and splits.
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from core.errors import SchemaError
from core.numerics import RandomStream
from core.parser import (
    DataParser,
    Splitter,
    design_rows,
    expand_interactions,
    load_dataset,
    read_partition_file,
    write_json,
    write_table,
)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestDataParser:
    """Test reading and validating regression tables."""

    def test_read_and_parse(self, tmp_path):
        """A clean table splits into X, y and names."""
        path = write_csv(tmp_path / "d.csv", "y,a,b\n1,2,3\n4,5,6\n7,8,10\n")
        X, y, names = DataParser.parse(DataParser.read_table(path), "y")
        assert names == ["a", "b"]
        assert_allclose(y, [1, 4, 7])
        assert X.shape == (3, 2)

    def test_missing_file(self, tmp_path):
        """A missing file is a schema error."""
        with pytest.raises(SchemaError, match="not found"):
            DataParser.read_table(str(tmp_path / "nope.csv"))

    def test_empty_file(self, tmp_path):
        """A header without rows is a schema error."""
        path = write_csv(tmp_path / "e.csv", "y,a\n")
        with pytest.raises(SchemaError):
            DataParser.read_table(path)

    def test_validate(self):
        """Missing, non-numeric and duplicated response columns are reported."""
        df = pd.DataFrame({"y": [1.0, 2.0], "a": ["u", "v"], "b": [1, 2]})
        errors = DataParser.validate(df, "y", ["a", "c", "y"])
        assert any("missing columns: c" in e for e in errors)
        assert any("'a' is not numeric" in e for e in errors)
        assert any("listed as a covariate" in e for e in errors)
        assert DataParser.validate(df, "y", ["b"]) == []
        assert DataParser.validate(df, "z", ["b"]) == ["response column 'z' not found"]

    def test_drops_incomplete_rows(self):
        """Rows with NaN are dropped."""
        df = pd.DataFrame({"y": [1.0, np.nan, 3.0, 4.0], "a": [1.0, 2.0, np.nan, 4.0]})
        X, y, _ = DataParser.parse(df, "y")
        assert_allclose(y, [1.0, 4.0])
        assert_allclose(X[:, 0], [1.0, 4.0])

    def test_parse_raises(self):
        """Parsing an invalid table raises with all messages."""
        df = pd.DataFrame({"y": [1.0, 2.0]})
        with pytest.raises(SchemaError, match="no covariate"):
            DataParser.parse(df, "y")


class TestDesigns:
    """Test interaction expansion and dataset loading."""

    def test_interaction_count(self):
        """Eight covariates give 44 columns."""
        cols = [f"c{i}" for i in range(8)]
        df = pd.DataFrame(np.arange(24.0).reshape(3, 8), columns=cols)
        out = expand_interactions(df, cols)
        assert out.shape == (3, 44)
        assert list(out.columns[:9]) == cols + ["c0^2"]
        assert "c0*c7" in out.columns
        assert_allclose(out["c2*c5"], df["c2"] * df["c5"])

    def test_load_dataset(self, tmp_path):
        """Loading centers the design and keeps the base names."""
        rng = np.random.default_rng(0)
        df = pd.DataFrame(rng.normal(size=(10, 3)), columns=["y", "a", "b"])
        path = tmp_path / "d.csv"
        df.to_csv(path, index=False)
        ds, base = load_dataset(str(path), "y", interactions=True)
        assert base == ["a", "b"]
        assert ds.column_names == ("a", "b", "a^2", "b^2", "a*b")
        assert_allclose(ds.X.mean(axis=0), 0.0, atol=1e-12)

    def test_design_rows(self):
        """New rows rebuild the training columns."""
        df = pd.DataFrame({"a": [1.0, 2.0], "b": [3.0, 4.0]})
        X = design_rows(df, ["a", "b"], ["a", "b", "a^2", "b^2", "a*b"], interactions=True)
        assert_allclose(X[1], [2.0, 4.0, 4.0, 16.0, 8.0])
        with pytest.raises(SchemaError):
            design_rows(df[["a"]], ["a", "b"], ["a", "b"], interactions=False)
        with pytest.raises(SchemaError):
            design_rows(df, ["a", "b"], ["b", "a"], interactions=False)

    def test_bundled_fixture(self):
        """The shipped ozone-like table has eight covariates and the response."""
        ds, base = load_dataset(str(DATA_DIR / "ozone_synthetic.csv"), "upo3", interactions=True)
        assert len(base) == 8
        assert ds.p == 44
        assert ds.n == 330


class TestPartitionFile:
    """Test fixed partition files."""

    def test_column_label_form(self, tmp_path):
        """Labels are mapped by column name and canonicalized."""
        path = write_csv(tmp_path / "p.csv", "column,label\nb,7\na,3\nc,7\n")
        assert read_partition_file(path, ["a", "b", "c"]) == (1, 2, 2)

    def test_label_only_form(self, tmp_path):
        """A bare label column follows design order; any integers are accepted."""
        path = write_csv(tmp_path / "p.csv", "label\n0\n-2\n0\n")
        assert read_partition_file(path, ["a", "b", "c"]) == (1, 2, 1)

    def test_errors(self, tmp_path):
        """Unknown columns, wrong counts and non-integers are rejected."""
        unknown = write_csv(tmp_path / "u.csv", "column,label\na,1\nz,2\n")
        with pytest.raises(SchemaError):
            read_partition_file(unknown, ["a", "b"])
        short = write_csv(tmp_path / "s.csv", "label\n1\n")
        with pytest.raises(SchemaError):
            read_partition_file(short, ["a", "b"])
        floats = write_csv(tmp_path / "f.csv", "label\n1.5\n2\n")
        with pytest.raises(SchemaError):
            read_partition_file(floats, ["a", "b"])
        dup = write_csv(tmp_path / "d.csv", "column,label\na,1\na,2\n")
        with pytest.raises(SchemaError):
            read_partition_file(dup, ["a", "b"])


class TestSplitter:
    """Test random train/test splits."""

    def test_disjoint_and_complete(self):
        """Every split covers all rows exactly once."""
        splits = Splitter.random_splits(50, 3, 0.2, RandomStream(1))
        assert len(splits) == 3
        for split in splits:
            assert split.test.size == 10
            assert np.array_equal(np.sort(np.concatenate([split.train, split.test])), np.arange(50))
        assert not np.array_equal(splits[0].test, splits[1].test)

    def test_reproducible(self):
        """The same stream gives the same splits."""
        a = Splitter.random_splits(30, 2, 0.3, RandomStream(4))
        b = Splitter.random_splits(30, 2, 0.3, RandomStream(4))
        assert all(np.array_equal(x.test, y.test) for x, y in zip(a, b))

    def test_invalid(self):
        """Bad counts and fractions are rejected."""
        with pytest.raises(ValueError):
            Splitter.random_splits(10, 0, 0.2, RandomStream(0))
        with pytest.raises(ValueError):
            Splitter.random_splits(10, 1, 1.0, RandomStream(0))
        with pytest.raises(ValueError):
            Splitter.random_splits(4, 1, 0.1, RandomStream(0))


class TestWriters:
    """Test CSV and JSON output."""

    def test_write_table(self, tmp_path):
        """Tables are written without the index, creating directories."""
        path = tmp_path / "out" / "t.csv"
        write_table(pd.DataFrame({"a": [1, 2], "b": [0.5, 0.25]}), str(path))
        assert path.read_text(encoding="utf-8") == "a,b\n1,0.5\n2,0.25\n"

    def test_write_json(self, tmp_path):
        """JSON is indented with sorted keys and a trailing newline."""
        path = tmp_path / "s.json"
        write_json({"b": 1, "a": [1, 2]}, str(path))
        text = path.read_text(encoding="utf-8")
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [1, 2], "b": 1}


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
