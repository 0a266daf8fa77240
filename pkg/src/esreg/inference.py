"""Debiased inference on a single ES coefficient.

The pipeline per target coordinate j: project column j on the remaining
columns (lasso), evaluate the triply-orthogonal score, apply a one-step
correction to the penalized estimate, and build a Wald interval from the
refitted cross-validation variance estimates.  The score test uses the
constrained ES fit with coordinate j pinned at the hypothesized value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .exceptions import (
    DataValidationError,
    DegenerateProjectionError,
    VarianceDegenerateError,
)
from .model import Dataset, StandardizationInfo, _tau_value, adjusted_response, destandardize_coefs, standardize
from .solvers import PenaltySpec, SolveReport, SolverConfig, lasso_ls_fit
from .tuning import CvConfig, cv_select
from .twostep import TwoStepFit, fit_two_step, support_of

__all__ = [
    "ProjectionFit",
    "InferenceResult",
    "fit_projection",
    "constrained_es_fit",
    "score_Sn",
    "score_test",
    "debias",
    "wald_ci",
    "infer_coefficient",
]


@dataclass
class ProjectionFit:
    """Lasso projection of column j on the remaining columns."""

    j: int
    gamma_hat: np.ndarray  # length p-1, original scale, order of X with col j removed
    omega_hat: np.ndarray  # residuals X_j - X_{-j} gamma_hat
    lambda_m: float
    support_m: np.ndarray  # full-design column indices
    report: Optional[SolveReport] = None

    def minus_j_columns(self, p: int) -> np.ndarray:
        return np.delete(np.arange(p), self.j)


@dataclass
class InferenceResult:
    """Point estimate, test, and interval for one coordinate."""

    j: int
    theta_hat: float
    theta_tilde: float
    score_value: float
    sigma_s2: float
    sigma_omega2: float
    ci_lower: float
    ci_upper: float
    alpha: float
    test_stat: float
    p_value: float
    reject: bool
    c0: float = 0.0
    name: Optional[str] = None

    def to_record(self, lambdas: Optional[dict] = None, seeds: Optional[dict] = None) -> dict:
        return {
            "j": int(self.j),
            "name": self.name,
            "theta_hat": float(self.theta_hat),
            "theta_tilde": float(self.theta_tilde),
            "ci": [float(self.ci_lower), float(self.ci_upper)],
            "p_value": float(self.p_value),
            "sigma_s2": float(self.sigma_s2),
            "sigma_omega2": float(self.sigma_omega2),
            "lambdas": lambdas or {},
            "seeds": seeds or {},
        }


def _check_target(ds: Dataset, j: int) -> None:
    lo = 1 if ds.has_intercept else 0
    if not lo <= j < ds.p:
        raise DataValidationError(
            f"inference target must be a non-intercept column index in [{lo}, {ds.p}), got {j}"
        )


def fit_projection(
    ds: Dataset,
    j: int,
    lambda_m: float,
    cfg: Optional[SolverConfig] = None,
    standardize_cols: bool = True,
) -> ProjectionFit:
    """Lasso of X_j on X_{-j} (intercept unpenalized), residuals attached."""
    _check_target(ds, j)
    if lambda_m < 0:
        raise DataValidationError("lambda_m must be nonnegative")
    keep = np.delete(np.arange(ds.p), j)
    X_m = ds.X[:, keep]
    resp = ds.X[:, j]
    if standardize_cols:
        sub = Dataset(
            y=resp, X=np.asfortranarray(X_m), has_intercept=ds.has_intercept
        )
        sub_std, info = standardize(sub)
        design = sub_std.X
    else:
        design = np.asfortranarray(X_m)
        info = StandardizationInfo(
            center=np.zeros(keep.size), scale=np.ones(keep.size), applied=False
        )
    pen = PenaltySpec.unpenalized_intercept(lambda_m, keep.size)
    report = lasso_ls_fit(design, resp, pen, cfg)
    gamma = destandardize_coefs(report.coefficients, info)
    omega = resp - X_m @ gamma
    nz = support_of(gamma, ds.has_intercept)
    return ProjectionFit(
        j=j,
        gamma_hat=gamma,
        omega_hat=omega,
        lambda_m=float(lambda_m),
        support_m=keep[nz],
        report=report,
    )


def constrained_es_fit(
    ds: Dataset,
    tau,
    beta_hat: np.ndarray,
    j: int,
    c0: float,
    lambda_e: float,
    cfg: Optional[SolverConfig] = None,
    standardize_cols: bool = True,
) -> np.ndarray:
    """ES stage with coordinate j pinned at c0.

    Minimizes over theta_{-j} the penalized least squares of
    ``Z - tau X_j c0`` on ``tau X_{-j}``; returns the full-length vector
    with coordinate j set to c0.
    """
    _check_target(ds, j)
    t = _tau_value(tau)
    z = adjusted_response(ds.y, ds.X @ np.asarray(beta_hat, dtype=np.float64), t)
    keep = np.delete(np.arange(ds.p), j)
    offset_resp = z - t * ds.X[:, j] * c0
    X_m = ds.X[:, keep]
    if standardize_cols:
        sub = Dataset(
            y=offset_resp, X=np.asfortranarray(X_m), has_intercept=ds.has_intercept
        )
        sub_std, info = standardize(sub)
        design = sub_std.X
    else:
        design = np.asfortranarray(X_m)
        info = StandardizationInfo(
            center=np.zeros(keep.size), scale=np.ones(keep.size), applied=False
        )
    pen = PenaltySpec.unpenalized_intercept(t * lambda_e, keep.size)
    report = lasso_ls_fit(t * design, offset_resp, pen, cfg)
    partial = destandardize_coefs(report.coefficients, info)
    out = np.empty(ds.p)
    out[keep] = partial
    out[j] = c0
    return out


def score_Sn(theta_j: float, theta_minus_j, beta, gamma, ds: Dataset, tau, j: int) -> float:
    """Triply-orthogonal score.

    ``n^-1 sum (Z_i(beta) - tau X_ij theta_j - tau X_{i,-j}' theta_{-j})
    (X_ij - X_{i,-j}' gamma)``, evaluated exactly.
    """
    _check_target(ds, j)
    t = _tau_value(tau)
    keep = np.delete(np.arange(ds.p), j)
    z = adjusted_response(ds.y, ds.X @ np.asarray(beta, dtype=np.float64), t)
    resid = z - t * ds.X[:, j] * theta_j - t * (ds.X[:, keep] @ np.asarray(theta_minus_j))
    omega = ds.X[:, j] - ds.X[:, keep] @ np.asarray(gamma)
    return float(np.mean(resid * omega))


def debias(ds: Dataset, tau, fit: TwoStepFit, proj: ProjectionFit) -> float:
    """One-step corrected coordinate estimate.

    theta_hat_j plus the score at the penalized fit divided by the score
    derivative in theta_j, which is ``tau sum_i X_ij omega_i``.
    """
    t = _tau_value(tau)
    j = proj.j
    _check_target(ds, j)
    xj = ds.X[:, j]
    numer = float(np.sum(fit.es_residuals * proj.omega_hat))
    denom = t * float(np.sum(xj * proj.omega_hat))
    mean_x2 = float(np.mean(xj**2))
    mean_w2 = float(np.mean(proj.omega_hat**2))
    if abs(denom) < 1e-12 * ds.n * max(mean_x2, 1e-30) or mean_w2 <= 1e-12 * mean_x2:
        raise DegenerateProjectionError(
            "projection residual is numerically orthogonal to the target column"
        )
    return float(fit.theta_hat[j] + numer / denom)


def wald_ci(theta_tilde: float, sigma_s2: float, sigma_omega2: float, alpha: float, n: int, tau) -> tuple:
    """Symmetric interval theta_tilde +/- z_{1-alpha/2} sigma_s / (sqrt(n) tau sigma_omega^2)."""
    t = _tau_value(tau)
    if sigma_s2 <= 0 or sigma_omega2 <= 0:
        raise VarianceDegenerateError("variance estimates must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    half = norm.ppf(1.0 - alpha / 2.0) * np.sqrt(sigma_s2) / (np.sqrt(n) * t * sigma_omega2)
    return (float(theta_tilde - half), float(theta_tilde + half))


def score_test(
    ds: Dataset,
    tau,
    j: int,
    c0: float,
    alpha: float,
    beta_hat: np.ndarray,
    theta_constrained: np.ndarray,
    gamma_hat: np.ndarray,
    sigma_s2: float,
) -> dict:
    """Decorrelated score test of theta_j = c0 at level alpha.

    Rejects when ``|sqrt(n) S_n / sigma_s|`` exceeds the normal quantile;
    returns the statistic, the two-sided p-value and the decision.
    """
    if sigma_s2 <= 0:
        raise VarianceDegenerateError("sigma_s^2 must be positive for the score test")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    keep = np.delete(np.arange(ds.p), j)
    s_n = score_Sn(c0, theta_constrained[keep], beta_hat, gamma_hat, ds, tau, j)
    stat = float(np.sqrt(ds.n) * s_n / np.sqrt(sigma_s2))
    p_value = float(2.0 * norm.sf(abs(stat)))
    return {
        "score_value": s_n,
        "test_stat": stat,
        "p_value": p_value,
        "reject": bool(abs(stat) > norm.ppf(1.0 - alpha / 2.0)),
    }


def infer_coefficient(
    ds: Dataset,
    tau,
    j: int,
    alpha: float = 0.05,
    c0: float = 0.0,
    fit: Optional[TwoStepFit] = None,
    lambda_q: Optional[float] = None,
    lambda_e: Optional[float] = None,
    lambda_m: Optional[float] = None,
    cv: Optional[CvConfig] = None,
    seed: int = 0,
    rcv_seed: Optional[int] = None,
    variances: Optional[tuple] = None,
) -> InferenceResult:
    """Full debiased-inference pipeline for one coordinate.

    Any stage output can be supplied to skip recomputation; otherwise
    penalties come from cross-validation (one-SE rule for the
    projection) and the variances from refitted cross-validation with
    the same CV configuration.  The RCV sigma_s^2 feeds both the Wald
    interval and the score test.
    """
    from .variance import rcv_variance  # local import to avoid a cycle

    t = _tau_value(tau)
    _check_target(ds, j)
    cv = cv or CvConfig()

    if fit is None:
        if lambda_q is None:
            lambda_q = cv_select(ds, "qr", t, cfg=cv, seed=seed, rule=cv.rule_q).lambda_selected
        if lambda_e is None:
            lambda_e = cv_select(
                ds, "es", t, cfg=cv, seed=seed, lambda_q=lambda_q, rule=cv.rule_e
            ).lambda_selected
        fit = fit_two_step(ds, t, lambda_q, lambda_e, cv.solver, cv.standardize)

    if lambda_m is None:
        lambda_m = cv_select(
            ds, "proj", j=j, cfg=cv, seed=seed, rule=cv.rule_m
        ).lambda_selected
    proj = fit_projection(ds, j, lambda_m, cv.solver, cv.standardize)

    if variances is None:
        est = rcv_variance(
            ds, t, j, cv_config=cv, seed=rcv_seed if rcv_seed is not None else seed
        )
        sigma_s2, sigma_omega2 = est.sigma_s2, est.sigma_omega2
    else:
        sigma_s2, sigma_omega2 = variances

    theta_tilde = debias(ds, t, fit, proj)
    lo, hi = wald_ci(theta_tilde, sigma_s2, sigma_omega2, alpha, ds.n, t)

    theta_c = constrained_es_fit(
        ds, t, fit.beta_hat, j, c0, fit.lambda_e, cv.solver, cv.standardize
    )
    test = score_test(
        ds, t, j, c0, alpha, fit.beta_hat, theta_c, proj.gamma_hat, sigma_s2
    )

    name = ds.column_names[j] if ds.column_names is not None else None
    return InferenceResult(
        j=j,
        theta_hat=float(fit.theta_hat[j]),
        theta_tilde=theta_tilde,
        score_value=test["score_value"],
        sigma_s2=float(sigma_s2),
        sigma_omega2=float(sigma_omega2),
        ci_lower=lo,
        ci_upper=hi,
        alpha=alpha,
        test_stat=test["test_stat"],
        p_value=test["p_value"],
        reject=test["reject"],
        c0=c0,
        name=name,
    )
