"""Scikit-learn estimator facade over the two-step machinery.

``TwoStepESRegressor`` follows the usual conventions: hyperparameters in
``__init__``, data validation and all work in ``fit``, trailing-
underscore attributes for the results, ``get_params``/``set_params`` via
``BaseEstimator``.  The design matrix is passed without an intercept
column (one is added internally) and coefficients are reported on the
original feature scale whatever the ``standardize`` setting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .inference import InferenceResult, infer_coefficient
from .model import Dataset, QuantileLevel, adjusted_response
from .solvers import SolverConfig
from .tuning import CvConfig, cv_select, hbic_e, hbic_q
from .twostep import fit_two_step, flip_interval, refit_on_support, upper_tail_transform

__all__ = ["TwoStepESRegressor"]


class TwoStepESRegressor(RegressorMixin, BaseEstimator):
    """Two-step l1-penalized expected shortfall regression.

    Fits the conditional tau-level expected shortfall of y given X via a
    penalized (smoothed) quantile stage followed by penalized least
    squares on the adjusted response.  Upper-tail fits negate the
    response internally and flip the results back.

    Parameters
    ----------
    tau : float
        Tail probability level in (0, 1).
    tail : {'lower', 'upper'}
        Which tail the expected shortfall averages over.
    lambda_q, lambda_e : float or 'auto'
        Penalty levels for the two stages; 'auto' selects them by the
        configured rule.
    rule : {'cv', 'cv1se', 'hbic'}
        Selection rule used when a penalty is 'auto'.
    cv : int
        Number of cross-validation folds.
    n_lambdas, lambda_min_ratio : grid shape for the penalty path.
    refit : bool
        Refit the ES stage without penalty on the selected support.
    standardize : bool
        Standardize non-intercept columns inside each stage.
    bandwidth : float or None
        Quantile-stage smoothing bandwidth; None picks the default.
    tol, max_iter : solver controls.
    random_state : int
        Seed for fold assignment.
    """

    def __init__(
        self,
        tau=0.1,
        tail="lower",
        lambda_q="auto",
        lambda_e="auto",
        rule="cv",
        cv=10,
        n_lambdas=50,
        lambda_min_ratio=0.01,
        refit=False,
        standardize=True,
        bandwidth=None,
        tol=1e-8,
        max_iter=10000,
        random_state=0,
    ):
        self.tau = tau
        self.tail = tail
        self.lambda_q = lambda_q
        self.lambda_e = lambda_e
        self.rule = rule
        self.cv = cv
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.refit = refit
        self.standardize = standardize
        self.bandwidth = bandwidth
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def _cv_config(self) -> CvConfig:
        rule = {"cv": "cv_min", "cv1se": "cv_1se"}.get(self.rule, self.rule)
        if rule not in ("cv_min", "cv_1se", "hbic"):
            raise ValueError(f"unknown rule {self.rule!r}")
        solver = SolverConfig(
            tol=self.tol, max_iter=self.max_iter, smoothing_bandwidth=self.bandwidth
        )
        return CvConfig(
            n_folds=self.cv,
            n_lambdas=self.n_lambdas,
            min_ratio=self.lambda_min_ratio,
            rule_q="cv_min" if rule == "hbic" else rule,
            rule_e="cv_min" if rule == "hbic" else rule,
            standardize=self.standardize,
            solver=solver,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        level = QuantileLevel(tau=self.tau, tail=self.tail)
        ds = Dataset.from_covariates(X, y)
        if level.tail == "upper":
            ds, level = upper_tail_transform(ds, level)
        cvcfg = self._cv_config()
        seed = int(self.random_state)

        lambda_q = self.lambda_q
        if lambda_q == "auto":
            if self.rule == "hbic":
                lambda_q = hbic_q(ds, level.tau, cfg=cvcfg).lambda_selected
            else:
                lambda_q = cv_select(ds, "qr", level.tau, cfg=cvcfg, seed=seed).lambda_selected
        lambda_e = self.lambda_e
        if lambda_e == "auto":
            if self.rule == "hbic":
                from .twostep import fit_quantile_stage

                beta, _ = fit_quantile_stage(
                    ds, level.tau, lambda_q, cvcfg.solver, self.standardize
                )
                lambda_e = hbic_e(ds, level.tau, beta, cfg=cvcfg).lambda_selected
            else:
                lambda_e = cv_select(
                    ds, "es", level.tau, cfg=cvcfg, seed=seed, lambda_q=lambda_q
                ).lambda_selected

        fit = fit_two_step(
            ds, level.tau, lambda_q, lambda_e, cvcfg.solver, self.standardize
        )
        theta = refit_on_support(ds, fit) if self.refit else fit.theta_hat

        sign = -1.0 if self.tail == "upper" else 1.0
        self._dataset = ds
        self._level = level
        self.twostep_fit_ = fit
        self.lambda_q_ = float(lambda_q)
        self.lambda_e_ = float(lambda_e)
        self.coef_ = sign * theta[1:]
        self.intercept_ = sign * float(theta[0])
        self.quantile_coef_ = sign * fit.beta_hat[1:]
        self.quantile_intercept_ = sign * float(fit.beta_hat[0])
        self.support_ = np.flatnonzero(theta[1:])
        self.quantile_support_ = np.flatnonzero(fit.beta_hat[1:])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Conditional expected shortfall at the configured tau and tail."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict_quantile(self, X):
        """Conditional tau-level quantile implied by the first stage."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.quantile_coef_ + self.quantile_intercept_

    def score(self, X, y):
        """Negative out-of-sample ES-stage loss.

        Computes the adjusted response from the fitted quantile plane on
        the new data and returns minus the mean squared deviation from
        the fitted ES plane (larger is better).
        """
        check_is_fitted(self, "coef_")
        X = check_array(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        sign = -1.0 if self.tail == "upper" else 1.0
        yy = sign * y
        tau = self._level.tau
        xb = sign * self.predict_quantile(X)  # quantile plane of the internal fit
        z = adjusted_response(yy, xb, tau)
        es_internal = sign * self.predict(X)
        return -float(np.mean((z - tau * es_internal) ** 2))

    def inference(
        self,
        j: int,
        alpha: float = 0.05,
        c0: float = 0.0,
        lambda_m=None,
        rcv_seed=None,
    ) -> InferenceResult:
        """Debiased estimate, Wald interval, and score test for feature j.

        ``j`` indexes the features as passed to :meth:`fit` (0-based).
        For upper-tail fits the hypothesis and results are mapped through
        the sign flip, so estimates and intervals refer to the original
        problem.
        """
        check_is_fitted(self, "coef_")
        if not 0 <= j < self.n_features_in_:
            raise ValueError(f"feature index {j} out of range")
        sign = -1.0 if self.tail == "upper" else 1.0
        res = infer_coefficient(
            self._dataset,
            self._level.tau,
            j + 1,
            alpha=alpha,
            c0=sign * c0,
            fit=self.twostep_fit_,
            lambda_m=lambda_m,
            cv=self._cv_config(),
            seed=int(self.random_state),
            rcv_seed=rcv_seed,
        )
        if sign < 0:
            lo, hi = flip_interval(res.ci_lower, res.ci_upper)
            res = InferenceResult(
                j=res.j,
                theta_hat=-res.theta_hat,
                theta_tilde=-res.theta_tilde,
                score_value=-res.score_value,
                sigma_s2=res.sigma_s2,
                sigma_omega2=res.sigma_omega2,
                ci_lower=lo,
                ci_upper=hi,
                alpha=res.alpha,
                test_stat=-res.test_stat,
                p_value=res.p_value,
                reject=res.reject,
                c0=c0,
                name=res.name,
            )
        return res
