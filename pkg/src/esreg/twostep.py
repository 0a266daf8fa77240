"""Two-step expected shortfall regression.

Stage one fits an l1-penalized (smoothed) quantile regression; stage two
regresses the adjusted response on the tau-scaled design with a second
l1 penalty.  Both stages standardize the non-intercept columns
internally (penalties act on the standardized problem, like the usual R
fitting packages) and always return coefficients on the original scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DataValidationError, DegenerateTailWarning, RankDeficiencyError
from .model import (
    Dataset,
    QuantileLevel,
    StandardizationInfo,
    _tau_value,
    adjusted_response,
    destandardize_coefs,
    standardize,
)
from .solvers import PenaltySpec, SolveReport, SolverConfig, lasso_ls_fit, sqr_fit

__all__ = [
    "TwoStepFit",
    "fit_quantile_stage",
    "fit_es_stage",
    "fit_two_step",
    "refit_on_support",
    "upper_tail_transform",
    "flip_interval",
    "support_of",
]


def support_of(coefs: np.ndarray, has_intercept: bool = True) -> np.ndarray:
    """Indices of nonzero non-intercept coefficients."""
    start = 1 if has_intercept else 0
    idx = np.flatnonzero(coefs)
    return idx[idx >= start]


def _prep_design(ds: Dataset, standardize_cols: bool):
    if standardize_cols:
        std_ds, info = standardize(ds)
        return std_ds.X, info
    return ds.X, StandardizationInfo(
        center=np.zeros(ds.p), scale=np.ones(ds.p), applied=False
    )


@dataclass
class TwoStepFit:
    """Everything the two stages produced, on the original data scale."""

    tau: float
    beta_hat: np.ndarray
    theta_hat: np.ndarray
    z_hat: np.ndarray
    es_residuals: np.ndarray
    support_q: np.ndarray
    support_e: np.ndarray
    lambda_q: float
    lambda_e: float
    quantile_report: Optional[SolveReport] = None
    es_report: Optional[SolveReport] = None
    standardized: bool = True
    n_exceedances: int = 0

    @property
    def lambdas(self) -> tuple:
        return (self.lambda_q, self.lambda_e)


def fit_quantile_stage(
    ds: Dataset,
    tau,
    lambda_q: float,
    cfg: Optional[SolverConfig] = None,
    standardize: bool = True,
):
    """Penalized quantile stage; returns raw-scale coefficients and the report."""
    t = _tau_value(tau)
    if lambda_q < 0:
        raise ValueError("lambda_q must be nonnegative")
    X, info = _prep_design(ds, standardize)
    pen = PenaltySpec.unpenalized_intercept(lambda_q, ds.p)
    report = sqr_fit(X, ds.y, t, pen, cfg)
    beta = destandardize_coefs(report.coefficients, info)
    return beta, report


def fit_es_stage(
    ds: Dataset,
    tau,
    beta_hat: np.ndarray,
    lambda_e: float,
    cfg: Optional[SolverConfig] = None,
    standardize: bool = True,
):
    """Least-squares stage on the adjusted response.

    Solves ``(2n)^-1 sum (Z_i - tau x_i' theta)^2 + tau lambda_e |theta|_1``
    (intercept unpenalized), i.e. a lasso of Z on the design tau*X with
    penalty level tau*lambda_e.
    """
    t = _tau_value(tau)
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    if beta_hat.shape[0] != ds.p:
        raise DataValidationError("beta_hat length does not match design")
    xb = ds.X @ beta_hat
    z = adjusted_response(ds.y, xb, t)
    n_exceed = int(np.sum(ds.y <= xb))
    if n_exceed == 0:
        warnings.warn(
            "no observation falls at or below the fitted quantile plane; "
            "the ES stage degenerates to a projection of the quantile fit",
            DegenerateTailWarning,
        )
    X, info = _prep_design(ds, standardize)
    pen = PenaltySpec.unpenalized_intercept(t * lambda_e, ds.p)
    report = lasso_ls_fit(t * X, z, pen, cfg)
    theta = destandardize_coefs(report.coefficients, info)
    return theta, z, report


def fit_two_step(
    ds: Dataset,
    tau,
    lambda_q: float,
    lambda_e: float,
    cfg: Optional[SolverConfig] = None,
    standardize: bool = True,
) -> TwoStepFit:
    """Compose the two stages and collect residuals and supports."""
    t = _tau_value(tau)
    beta, q_report = fit_quantile_stage(ds, t, lambda_q, cfg, standardize)
    theta, z, e_report = fit_es_stage(ds, t, beta, lambda_e, cfg, standardize)
    xb = ds.X @ beta
    return TwoStepFit(
        tau=t,
        beta_hat=beta,
        theta_hat=theta,
        z_hat=z,
        es_residuals=z - t * (ds.X @ theta),
        support_q=support_of(beta, ds.has_intercept),
        support_e=support_of(theta, ds.has_intercept),
        lambda_q=float(lambda_q),
        lambda_e=float(lambda_e),
        quantile_report=q_report,
        es_report=e_report,
        standardized=standardize,
        n_exceedances=int(np.sum(ds.y <= xb)),
    )


def _restricted_ls(X_cols: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve an unpenalized least squares on a column subset, guarding rank."""
    G = X_cols.T @ X_cols
    b = X_cols.T @ y
    try:
        coef = np.linalg.solve(G, b)
    except np.linalg.LinAlgError as err:
        raise RankDeficiencyError("singular Gram matrix in restricted refit") from err
    if not np.isfinite(coef).all() or np.linalg.cond(G) > 1e12:
        raise RankDeficiencyError("numerically rank-deficient restricted refit")
    return coef


def refit_on_support(ds: Dataset, fit: TwoStepFit) -> np.ndarray:
    """Unpenalized LS of the adjusted response on tau*X restricted to the
    selected ES support (plus the intercept); zeros elsewhere."""
    cols = np.concatenate(([0], fit.support_e)).astype(int)
    if cols.size >= ds.n:
        raise RankDeficiencyError(
            f"cannot refit {cols.size} coefficients from {ds.n} observations"
        )
    coef = _restricted_ls(fit.tau * ds.X[:, cols], fit.z_hat)
    out = np.zeros(ds.p)
    out[cols] = coef
    return out


def upper_tail_transform(ds: Dataset, level: QuantileLevel):
    """Map an upper-tail problem to the lower-tail code path.

    Negates the response and swaps the level to 1 - tau.  Applying the
    transform twice returns the original problem.  Fitted coefficients
    must be negated on the way back, and intervals go through
    :func:`flip_interval`.
    """
    if level.tail != "upper":
        raise ValueError("upper_tail_transform expects an upper-tail level")
    flipped = ds.with_response(-ds.y)
    return flipped, QuantileLevel(tau=1.0 - level.tau, tail="lower")


def flip_interval(lower: float, upper: float) -> tuple:
    """[a, b] -> [-b, -a], the image of an interval under negation."""
    return (-upper, -lower)
