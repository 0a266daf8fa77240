"""CSV ingestion and export.

A header row is required; one column is designated the response.
Non-numeric columns expand to dummy indicators with the
lexicographically first level as the baseline, and an explicit ``NA``
level when missing entries exist.  Missing values anywhere else are
rejected, not imputed.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataValidationError
from .model import Dataset

__all__ = ["load_csv_dataset", "dataset_to_csv", "RESPONSE_TRANSFORMS"]

RESPONSE_TRANSFORMS = {
    "none": lambda y: y,
    "log": np.log,
    "log1p": np.log1p,
}


def _expand_frame(df: pd.DataFrame):
    """Expand non-numeric columns to dummies; validate numeric ones."""
    columns = []
    names = []
    for col in df.columns:
        series = df[col]
        if pd.api.types.is_numeric_dtype(series):
            if series.isna().any():
                raise DataValidationError(
                    f"numeric column {col!r} has {int(series.isna().sum())} missing "
                    "values; drop or impute before ingestion"
                )
            columns.append(series.to_numpy(dtype=np.float64))
            names.append(str(col))
            continue
        as_str = series.astype("string")
        has_na = as_str.isna().any()
        levels = sorted(as_str.dropna().unique().tolist())
        if has_na:
            levels = levels + ["NA"]
            as_str = as_str.fillna("NA")
        if len(levels) < 2:
            raise DataValidationError(
                f"categorical column {col!r} has a single level and no variation"
            )
        # lexicographically first observed level is the baseline
        for level in levels[1:]:
            columns.append((as_str == level).to_numpy(dtype=np.float64))
            names.append(f"{col}={level}")
    return np.column_stack(columns), names


def load_csv_dataset(
    path,
    response: str,
    response_transform: str = "none",
    drop: Optional[Sequence[str]] = None,
) -> Dataset:
    """Read a CSV file into a Dataset with an intercept column.

    ``response`` names the outcome column; ``response_transform``
    optionally maps it ('none', 'log', 'log1p').  ``drop`` lists columns
    to ignore (identifiers and the like).
    """
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as err:
        raise DataValidationError(f"cannot read CSV {path}: {err}") from err
    if df.shape[0] < 2:
        raise DataValidationError("need at least two rows")
    if response not in df.columns:
        raise DataValidationError(
            f"response column {response!r} not found; available: {list(df.columns)[:8]}..."
        )
    if response_transform not in RESPONSE_TRANSFORMS:
        raise DataValidationError(
            f"unknown response transform {response_transform!r}"
        )
    y_series = df[response]
    if not pd.api.types.is_numeric_dtype(y_series):
        raise DataValidationError(f"response column {response!r} must be numeric")
    if y_series.isna().any():
        raise DataValidationError(
            f"response column {response!r} has missing values"
        )
    y = RESPONSE_TRANSFORMS[response_transform](y_series.to_numpy(dtype=np.float64))
    if not np.isfinite(y).all():
        raise DataValidationError(
            "response transform produced non-finite values"
        )
    rest = df.drop(columns=[response] + list(drop or []), errors="ignore")
    if rest.shape[1] == 0:
        raise DataValidationError("no covariate columns remain")
    X_cov, names = _expand_frame(rest)
    return Dataset.from_covariates(X_cov, y, column_names=names)


def dataset_to_csv(ds: Dataset, path) -> None:
    """Write a dataset (response + non-intercept covariates) as CSV."""
    start = 1 if ds.has_intercept else 0
    if ds.column_names is not None:
        names = list(ds.column_names[start:])
    else:
        names = [f"x{j}" for j in range(1, ds.p - start + 1)]
    frame = pd.DataFrame(np.asarray(ds.X[:, start:]), columns=names)
    frame.insert(0, "y", ds.y)
    frame.to_csv(path, index=False)
