"""Core data structures: datasets with an explicit intercept column,
quantile levels, the check loss, and the adjusted-response transform that
turns tail averaging into a least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataValidationError

__all__ = [
    "QuantileLevel",
    "Dataset",
    "StandardizationInfo",
    "check_loss",
    "adjusted_response",
    "standardize",
    "destandardize_coefs",
]


@dataclass(frozen=True)
class QuantileLevel:
    """A tail probability with its orientation.

    ``tau`` is the probability mass of the tail of interest; ``tail``
    says whether it is the lower tail (the native case for every fitting
    routine) or the upper tail, which is handled by the sign-flip
    transform in :mod:`esreg.twostep`.
    """

    tau: float
    tail: str = "lower"

    def __post_init__(self) -> None:
        if not 0.0 < float(self.tau) < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.tail not in ("lower", "upper"):
            raise ValueError(f"tail must be 'lower' or 'upper', got {self.tail!r}")


def _tau_value(tau) -> float:
    """Accept either a bare float or a QuantileLevel."""
    t = tau.tau if isinstance(tau, QuantileLevel) else float(tau)
    if not 0.0 < t < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {t}")
    return t


@dataclass(frozen=True)
class Dataset:
    """A response vector paired with a dense design matrix.

    When ``has_intercept`` is true the first column of ``X`` is the
    constant 1 and the first coefficient of every fitted vector is an
    intercept.  Arrays are stored column-major (coordinate descent walks
    columns) and are frozen after construction so datasets can be shared
    across concurrent replications.
    """

    y: np.ndarray
    X: np.ndarray
    has_intercept: bool = True
    column_names: Optional[tuple] = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64).ravel()
        X = np.asfortranarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataValidationError("X must be a 2-d array")
        n, p = X.shape
        if n < 2 or p < 1:
            raise DataValidationError(f"need n >= 2 and p >= 1, got shape {X.shape}")
        if y.shape[0] != n:
            raise DataValidationError(
                f"y has length {y.shape[0]} but X has {n} rows"
            )
        if not np.isfinite(y).all() or not np.isfinite(X).all():
            raise DataValidationError("y and X must be finite (missing values are rejected, not imputed)")
        if self.has_intercept and not np.all(X[:, 0] == 1.0):
            raise DataValidationError("has_intercept is set but column 1 of X is not constant 1")
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != p:
                raise DataValidationError(
                    f"column_names has {len(names)} entries for {p} columns"
                )
            object.__setattr__(self, "column_names", names)
        y.flags.writeable = False
        X.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_covariates(
        cls,
        X_cov: np.ndarray,
        y: np.ndarray,
        column_names: Optional[Sequence[str]] = None,
    ) -> "Dataset":
        """Build a dataset by prepending an intercept column to raw covariates."""
        X_cov = np.asarray(X_cov, dtype=np.float64)
        if X_cov.ndim == 1:
            X_cov = X_cov[:, None]
        n = X_cov.shape[0]
        X = np.empty((n, X_cov.shape[1] + 1), order="F")
        X[:, 0] = 1.0
        X[:, 1:] = X_cov
        names = None
        if column_names is not None:
            names = ("(intercept)",) + tuple(column_names)
        return cls(y=y, X=X, has_intercept=True, column_names=names)

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Row subset (used by cross-validation folds and sample splits)."""
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows],
            X=self.X[rows, :],
            has_intercept=self.has_intercept,
            column_names=self.column_names,
        )

    def with_response(self, y: np.ndarray) -> "Dataset":
        return replace(self, y=np.asarray(y, dtype=np.float64))


@dataclass(frozen=True)
class StandardizationInfo:
    """Per-column affine transform applied to a design matrix.

    ``center`` and ``scale`` have one entry per column; an intercept
    column carries center 0 and scale 1 so it is left untouched.
    """

    center: np.ndarray
    scale: np.ndarray
    applied: bool = True

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if center.shape != scale.shape:
            raise DataValidationError("center and scale must have equal length")
        if np.any(scale <= 0):
            raise DataValidationError("scale entries must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)


def check_loss(tau, u):
    """Quantile check loss: ``tau*u`` for ``u >= 0`` and ``(tau-1)*u`` otherwise.

    Works elementwise on arrays.  Always nonnegative, convex and
    piecewise linear in ``u`` with its minimum at 0.
    """
    t = _tau_value(tau)
    u = np.asarray(u, dtype=np.float64)
    out = np.where(u >= 0, t * u, (t - 1.0) * u)
    return out if out.ndim else float(out)


def adjusted_response(y, xb, tau):
    """Transform the response so its conditional mean is tau times the
    conditional expected shortfall.

    Returns ``(y - xb) + tau*xb`` when ``y <= xb`` (ties count as below)
    and ``tau*xb`` otherwise, computed as ``tau*xb + min(y - xb, 0)``
    which is the same quantity for every branch.
    """
    t = _tau_value(tau)
    y = np.asarray(y, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    out = t * xb + np.minimum(y - xb, 0.0)
    return out if out.ndim else float(out)


def standardize(ds: Dataset) -> tuple[Dataset, StandardizationInfo]:
    """Center and scale the non-intercept columns to mean 0, sample sd 1.

    The intercept column is left untouched.  A constant non-intercept
    column has no scale and is rejected.  Without an intercept column
    there is nothing to absorb the centering, so columns are scaled only.
    """
    X = ds.X
    n, p = X.shape
    center = np.zeros(p)
    scale = np.ones(p)
    start = 1 if ds.has_intercept else 0
    if p > start:
        block = X[:, start:]
        sd = np.std(block, axis=0, ddof=1)
        # a numerically constant column has sd at rounding level of its mean
        floor = 1e-12 * np.maximum(1.0, np.abs(block.mean(axis=0)))
        bad = np.where(sd <= floor)[0]
        if bad.size:
            col = int(bad[0]) + start
            name = (
                ds.column_names[col]
                if ds.column_names is not None
                else f"column {col}"
            )
            raise DataValidationError(
                f"cannot standardize degenerate (constant) column: {name}"
            )
        scale[start:] = sd
        if ds.has_intercept:
            center[start:] = block.mean(axis=0)
    Xs = np.array(X, order="F", copy=True)
    if p > start:
        Xs[:, start:] = (X[:, start:] - center[start:]) / scale[start:]
    out = Dataset(
        y=ds.y, X=Xs, has_intercept=ds.has_intercept, column_names=ds.column_names
    )
    return out, StandardizationInfo(center=center, scale=scale, applied=True)


def destandardize_coefs(coefs: np.ndarray, info: StandardizationInfo) -> np.ndarray:
    """Map coefficients fitted on standardized columns back to the raw scale.

    Fitted values are preserved: ``X_raw @ out == X_std @ coefs`` for the
    matching design.  The intercept (column with center 0, scale 1 in
    position 0) absorbs ``-sum(coefs_j * center_j / scale_j)``.
    """
    if not info.applied:
        return np.asarray(coefs, dtype=np.float64).copy()
    coefs = np.asarray(coefs, dtype=np.float64)
    if coefs.shape[0] != info.scale.shape[0]:
        raise DataValidationError(
            f"coefficient length {coefs.shape[0]} does not match "
            f"standardization info length {info.scale.shape[0]}"
        )
    out = coefs / info.scale
    out[0] -= float(np.dot(coefs, info.center / info.scale))
    return out
