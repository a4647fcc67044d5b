"""
CSV Parser & Splitter
Reads regression data and partition files, builds interaction designs, splits
rows for cross-validation and writes the tabular outputs.
"""

import json
import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import SchemaError
from .model import Dataset, canonicalize_partition, center_dataset
from .numerics import RandomStream

logger = logging.getLogger(__name__)


@dataclass
class Split:
    """One train/test split of row indices."""
    index: int
    train: np.ndarray
    test: np.ndarray

    def __repr__(self):
        return f"Split({self.index}, {self.train.size} train, {self.test.size} test)"


class DataParser:
    """Parse and validate regression tables."""

    @staticmethod
    def read_table(file_path: str) -> pd.DataFrame:
        """
        Read a CSV file with a header row.

        Raises:
            SchemaError: If the file is missing, empty or malformed
        """
        path = Path(file_path)
        if not path.exists():
            raise SchemaError(f"File not found: {file_path}")
        try:
            df = pd.read_csv(path, encoding="utf-8")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise SchemaError(f"Malformed CSV {file_path}: {e}") from e
        if df.empty:
            raise SchemaError(f"{file_path} has no data rows")
        return df

    @staticmethod
    def validate(df: pd.DataFrame, response: str, columns: Optional[Sequence[str]] = None) -> List[str]:
        """
        Check that the response and covariates exist and are numeric.

        Returns:
            List of error messages (empty if valid)
        """
        errors = []
        if response not in df.columns:
            errors.append(f"response column '{response}' not found")
        wanted = list(columns) if columns is not None else [c for c in df.columns if c != response]
        missing = [c for c in wanted if c not in df.columns]
        if missing:
            errors.append(f"missing columns: {', '.join(missing)}")
        if response in wanted:
            errors.append(f"response column '{response}' listed as a covariate")
        for c in [response] + wanted:
            if c in df.columns and not pd.api.types.is_numeric_dtype(df[c]):
                errors.append(f"column '{c}' is not numeric")
        if not wanted:
            errors.append("no covariate columns")
        return errors

    @staticmethod
    def parse(
        df: pd.DataFrame,
        response: str,
        columns: Optional[Sequence[str]] = None,
    ) -> Tuple[np.ndarray, np.ndarray, List[str]]:
        """
        Split a table into design matrix, response and column names.

        Rows with missing values are dropped with a warning.

        Raises:
            SchemaError: On missing or non-numeric columns
        """
        errors = DataParser.validate(df, response, columns)
        if errors:
            raise SchemaError("; ".join(errors))
        names = list(columns) if columns is not None else [c for c in df.columns if c != response]

        table = df[names + [response]]
        complete = table.dropna()
        dropped = len(table) - len(complete)
        if dropped:
            logger.warning("Dropped %d rows with missing values", dropped)
        return complete[names].to_numpy(dtype=float), complete[response].to_numpy(dtype=float), names


def expand_interactions(df: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """
    Main effects, squares and pairwise products of the given columns.

    Eight covariates give 8 + 8 + 28 = 44 columns.
    """
    out = {c: df[c].astype(float) for c in columns}
    for c in columns:
        out[f"{c}^2"] = df[c].astype(float) ** 2
    for c1, c2 in combinations(columns, 2):
        out[f"{c1}*{c2}"] = df[c1].astype(float) * df[c2].astype(float)
    return pd.DataFrame(out, index=df.index)


def load_dataset(
    file_path: str,
    response: str,
    columns: Optional[Sequence[str]] = None,
    standardize: bool = False,
    interactions: bool = False,
) -> Tuple[Dataset, List[str]]:
    """
    Read a CSV into a centered Dataset.

    Returns:
        Tuple of (dataset, base covariate names before expansion)
    """
    df = DataParser.read_table(file_path)
    X, y, names = DataParser.parse(df, response, columns)
    if interactions:
        expanded = expand_interactions(pd.DataFrame(X, columns=names), names)
        return center_dataset(expanded.to_numpy(), y, list(expanded.columns), standardize), names
    return center_dataset(X, y, names, standardize), names


def design_rows(df: pd.DataFrame, base_columns: Sequence[str], column_names: Sequence[str],
                interactions: bool) -> np.ndarray:
    """
    Rebuild the training design for new rows.

    Raises:
        SchemaError: If columns of the training design are missing
    """
    missing = [c for c in base_columns if c not in df.columns]
    if missing:
        raise SchemaError(f"new data is missing columns: {', '.join(missing)}")
    table = expand_interactions(df, base_columns) if interactions else df[list(base_columns)].astype(float)
    if list(table.columns) != list(column_names):
        raise SchemaError("new data does not reproduce the training columns")
    if table.isna().any().any():
        raise SchemaError("new data has missing values")
    return table.to_numpy(dtype=float)


def read_partition_file(file_path: str, column_names: Sequence[str]) -> Tuple[int, ...]:
    """
    Read fixed block labels for every column.

    The file is a CSV with columns ``column,label``, or a single ``label``
    column with one row per column in design order. Labels may be any
    integers and are canonicalized by first appearance.

    Raises:
        SchemaError: On unknown, missing or duplicate columns
    """
    df = DataParser.read_table(file_path)
    if "label" not in df.columns:
        raise SchemaError(f"{file_path} needs a 'label' column")
    if not pd.api.types.is_integer_dtype(df["label"]):
        raise SchemaError(f"{file_path}: labels must be integers")

    if "column" in df.columns:
        if df["column"].duplicated().any():
            raise SchemaError(f"{file_path}: duplicate columns")
        mapping = dict(zip(df["column"].astype(str), df["label"].astype(int)))
        unknown = sorted(set(mapping) - set(column_names))
        missing = [c for c in column_names if c not in mapping]
        if unknown or missing:
            raise SchemaError(f"{file_path}: unknown columns {unknown}, missing columns {missing}")
        raw = [mapping[c] for c in column_names]
    else:
        if len(df) != len(column_names):
            raise SchemaError(f"{file_path}: {len(df)} labels for {len(column_names)} columns")
        raw = df["label"].astype(int).tolist()

    # shift so that any integers are accepted
    low = min(raw)
    return canonicalize_partition([v - low + 1 for v in raw]).labels


class Splitter:
    """Random train/test splits for predictive evaluation."""

    @staticmethod
    def random_splits(n: int, k: int, test_fraction: float, rng: RandomStream) -> List[Split]:
        """
        Draw k independent random splits.

        Args:
            n: Number of rows
            k: Number of splits
            test_fraction: Share of rows held out, e.g. 0.2
            rng: Random stream

        Returns:
            List of Split objects
        """
        if k < 1:
            raise ValueError("splits must be >= 1")
        if not 0.0 < test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        n_test = int(round(n * test_fraction))
        if n_test < 1 or n - n_test < 3:
            raise ValueError(f"test_fraction {test_fraction} leaves an empty side for n={n}")

        splits = []
        for i in range(k):
            order = rng.generator.permutation(n)
            splits.append(Split(index=i, train=np.sort(order[n_test:]), test=np.sort(order[:n_test])))
        return splits


def write_table(df: pd.DataFrame, file_path: str) -> None:
    """
    Write a CSV with a header row (UTF-8, '.' decimal).

    Args:
        df: Table to write
        file_path: Path to output file
    """
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def write_json(data: Any, file_path: str) -> None:
    """
    Write a JSON document with sorted keys.

    Args:
        data: JSON-ready object
        file_path: Path to output file
    """
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
