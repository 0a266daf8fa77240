"""Penalty-level selection: warm-started lambda paths, K-fold
cross-validation with an optional one-standard-error rule, and the
high-dimensional BIC criteria for the quantile and ES stages.

Grids are log-spaced from the data-driven path maximum down to a fixed
fraction of it, so the ES-stage grid scales automatically with the
dispersion of the adjusted-response residuals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import DataValidationError, EsregError, RankDeficiencyError
from .model import Dataset, _tau_value, adjusted_response, check_loss, destandardize_coefs
from .solvers import (
    PenaltySpec,
    SolverConfig,
    default_bandwidth,
    lambda_path_max,
    lasso_ls_fit,
    sqr_fit,
)
from .twostep import _prep_design, fit_quantile_stage

__all__ = [
    "CvConfig",
    "HbicConfig",
    "LambdaPath",
    "lambda_grid",
    "fit_lambda_path",
    "cv_select",
    "hbic_q",
    "hbic_e",
]

STAGES = ("qr", "es", "proj")
RULES = ("cv_min", "cv_1se", "hbic")


@dataclass
class CvConfig:
    """Cross-validation and grid settings shared by the tuning entry points.

    Interior path points exist only to shape the score curve, so they
    are evaluated under the relaxed ``path_*`` budget (hard penalty
    levels at the dense end surface ``converged=False`` rather than
    stalling the loop); the solution at the *selected* penalty is always
    refit under the accurate ``solver`` settings.
    """

    n_folds: int = 10
    n_lambdas: int = 50
    min_ratio: float = 0.01
    rule_q: str = "cv_min"
    rule_e: str = "cv_min"
    rule_m: str = "cv_1se"
    standardize: bool = True
    solver: SolverConfig = None
    path_tol: float = 1e-6
    path_kkt_tol: float = 1e-4
    path_max_iter: int = 300
    path_dfmax: Optional[int] = None  # None: min(p, max(n // 3, 100))

    def __post_init__(self):
        if self.solver is None:
            self.solver = SolverConfig()
        if self.n_folds < 2:
            raise ValueError("need at least 2 folds")

    def path_solver(self, n: int, p: int) -> SolverConfig:
        dfmax = self.path_dfmax
        if dfmax is None:
            dfmax = min(p, max(n // 3, 100))
        return replace(
            self.solver,
            tol=max(self.solver.tol, self.path_tol),
            kkt_tol=max(self.solver.kkt_tol, self.path_kkt_tol),
            max_iter=min(self.solver.max_iter, self.path_max_iter),
            max_active=dfmax,
        )


@dataclass
class HbicConfig:
    """Constants of the high-dimensional BIC.

    ``None`` fields resolve against the dataset at scoring time:
    C_n = D_n = log(log n) and K_n = floor(n / (2 log p)).
    """

    c_n: Optional[float] = None
    d_n: Optional[float] = None
    k_n: Optional[int] = None

    def resolve(self, n: int, p: int):
        c_n = self.c_n if self.c_n is not None else math.log(max(math.log(n), 1.001))
        d_n = self.d_n if self.d_n is not None else math.log(max(math.log(n), 1.001))
        k_n = self.k_n if self.k_n is not None else max(int(n / (2.0 * math.log(max(p, 2)))), 1)
        if k_n < 1:
            raise ValueError("K_n must be at least 1")
        return c_n, d_n, k_n


@dataclass
class LambdaPath:
    """A decreasing penalty grid with per-lambda solutions and scores."""

    grid: np.ndarray
    score_mean: Optional[np.ndarray]
    score_se: Optional[np.ndarray]
    support_size: np.ndarray
    selected: int
    rule: str
    coefs: Optional[np.ndarray] = None  # (len(grid), p), original scale
    stage: str = ""
    coefs_std: Optional[np.ndarray] = None  # solver-space solutions (warm starts)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.size > 1 and not np.all(np.diff(g) < 0):
            raise ValueError("lambda grid must be strictly decreasing")
        if not 0 <= self.selected < g.size:
            raise ValueError("selected index out of bounds")

    @property
    def lambda_selected(self) -> float:
        return float(self.grid[self.selected])

    @property
    def coef_selected(self) -> np.ndarray:
        if self.coefs is None:
            raise ValueError("path holds no coefficient solutions")
        return self.coefs[self.selected]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "rule": self.rule,
            "grid": [float(v) for v in self.grid],
            "score_mean": None if self.score_mean is None else [float(v) for v in self.score_mean],
            "score_se": None if self.score_se is None else [float(v) for v in self.score_se],
            "support_size": [int(v) for v in self.support_size],
            "selected": int(self.selected),
            "lambda_selected": self.lambda_selected,
        }


def lambda_grid(lam_max: float, n_lambdas: int = 50, min_ratio: float = 0.01) -> np.ndarray:
    """Log-spaced decreasing grid from lam_max down to min_ratio * lam_max."""
    if lam_max <= 0:
        # degenerate anchor (constant response); a token one-point grid
        return np.array([1e-12])
    if n_lambdas == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


def _power_lmax(X: np.ndarray, iters: int = 12) -> float:
    """Largest eigenvalue of X'X/n by power iteration (step-size hint)."""
    n, p = X.shape
    v = np.full(p, 1.0 / math.sqrt(p))
    lam = 1.0
    for _ in range(iters):
        w = X.T @ (X @ v) / n
        lam = float(np.linalg.norm(w))
        if lam <= 0:
            return 1.0
        v = w / lam
    return lam


def _stage_problem(ds: Dataset, stage: str, tau, beta_hat, j, standardize):
    """Assemble (design_std, response, info, extra) for one tuning stage.

    The returned design is standardized (if requested) and still carries
    the intercept column; for ``proj`` the j-th column is removed and the
    raw j-th column becomes the response.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    X_std, info = _prep_design(ds, standardize)
    if stage == "qr":
        return X_std, ds.y.copy(), info, {}
    if stage == "es":
        t = _tau_value(tau)
        if beta_hat is None:
            raise ValueError("es stage needs beta_hat")
        z = adjusted_response(ds.y, ds.X @ beta_hat, t)
        return t * X_std, z, info, {"tau": t}
    # proj
    if j is None or not 1 <= j < ds.p:
        raise DataValidationError(f"projection target must be a non-intercept column, got {j}")
    keep = np.delete(np.arange(ds.p), j)
    X_m = np.asfortranarray(X_std[:, keep])
    info_m = replace(info, center=info.center[keep], scale=info.scale[keep])
    return X_m, ds.X[:, j].copy(), info_m, {"keep": keep}


def _path_lambda_max(stage, X_std, resp, tau, h):
    if stage == "qr":
        return lambda_path_max(X_std, resp, "sqr", tau=tau, h=h)
    # for the ES stage the design tau*X and penalty tau*lambda cancel,
    # so anchor on the unscaled standardized design
    return lambda_path_max(X_std, resp, "ls")


def fit_lambda_path(
    ds: Dataset,
    stage: str,
    tau=None,
    beta_hat=None,
    j: Optional[int] = None,
    grid: Optional[np.ndarray] = None,
    cfg: Optional[CvConfig] = None,
    return_reports: bool = False,
    relaxed: bool = True,
    warm_coefs: Optional[np.ndarray] = None,
):
    """Fit the full-data solution path for one stage with warm starts.

    Returns a :class:`LambdaPath` without scores (``rule='path'``);
    scoring is done by :func:`cv_select`, :func:`hbic_q` or
    :func:`hbic_e`.  With ``relaxed`` (the default) interior points use
    the capped path budget from the config; selection entry points refit
    the chosen penalty accurately afterwards.
    """
    cfg = cfg or CvConfig()
    t = _tau_value(tau) if tau is not None else None
    h = None
    if stage == "qr":
        h = cfg.solver.smoothing_bandwidth or default_bandwidth(t, ds.n, ds.p)
    X_std, resp, info, extra = _stage_problem(ds, stage, tau, beta_hat, j, cfg.standardize)
    p_eff = X_std.shape[1]

    if grid is None:
        lam_max = _path_lambda_max(stage, X_std, resp, t, h)
        if stage == "es":
            lam_max /= t  # the tau factors in design and penalty cancel
        # tiny relative nudge keeps the top-of-grid solution exactly zero
        grid = lambda_grid(lam_max * (1.0 + 1e-9), cfg.n_lambdas, cfg.min_ratio)
    grid = np.asarray(grid, dtype=np.float64)

    hint = None
    if stage == "qr":
        hint = _power_lmax(X_std) / (2.0 * h)
    base_cfg = cfg.path_solver(*X_std.shape) if relaxed else cfg.solver

    coefs_std = np.zeros((grid.size, p_eff))
    reports = []
    warm = None
    for i, lam in enumerate(grid):
        start = warm_coefs[i] if warm_coefs is not None else warm
        solver_cfg = replace(base_cfg, warm_start=start, smoothing_bandwidth=h,
                             lipschitz_hint=hint)
        if stage == "qr":
            pen = PenaltySpec.unpenalized_intercept(lam, p_eff)
            rep = sqr_fit(X_std, resp, t, pen, solver_cfg)
        elif stage == "es":
            pen = PenaltySpec.unpenalized_intercept(t * lam, p_eff)
            rep = lasso_ls_fit(X_std, resp, pen, solver_cfg)
        else:
            pen = PenaltySpec.unpenalized_intercept(lam, p_eff)
            rep = lasso_ls_fit(X_std, resp, pen, solver_cfg)
        coefs_std[i] = rep.coefficients
        warm = rep.coefficients
        if return_reports:
            reports.append(rep)

    coefs = np.vstack([destandardize_coefs(c, info) for c in coefs_std])
    support = np.array([(np.abs(c[1:]) > 0).sum() for c in coefs_std])
    path = LambdaPath(
        grid=grid,
        score_mean=None,
        score_se=None,
        support_size=support,
        selected=0,
        rule="path",
        coefs=coefs,
        stage=stage,
        coefs_std=coefs_std,
    )
    if return_reports:
        return path, reports
    return path


def _fold_assignment(n: int, K: int, seed: int):
    """Deterministic fold split: a Philox-keyed permutation chopped into K parts."""
    ss = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFF, n, K, 0xF01D])
    rng = np.random.Generator(np.random.Philox(seed=ss))
    return np.array_split(rng.permutation(n), K)


def _score_fold(stage, ds_tr, ds_va, grid, tau, lambda_q, j, cfg):
    """Fit the path on a training fold, return per-lambda validation loss.

    The fold's quantile fit (ES stage) runs under the relaxed path
    budget: it only shapes the fold's adjusted responses for scoring.
    """
    t = _tau_value(tau) if tau is not None else None
    beta_tr = None
    if stage == "es":
        beta_tr, _ = fit_quantile_stage(
            ds_tr, t, lambda_q, cfg.path_solver(ds_tr.n, ds_tr.p),
            standardize=cfg.standardize,
        )
    path = fit_lambda_path(ds_tr, stage, tau, beta_tr, j, grid, cfg)
    losses = np.empty(grid.size)
    X_va = ds_va.X
    if stage == "es":
        z_va = adjusted_response(ds_va.y, X_va @ beta_tr, t)
    for i in range(grid.size):
        coef = path.coefs[i]
        if stage == "qr":
            losses[i] = float(np.mean(check_loss(t, ds_va.y - X_va @ coef)))
        elif stage == "es":
            losses[i] = float(np.mean((z_va - t * (X_va @ coef)) ** 2))
        else:
            keep = np.delete(np.arange(ds_va.p), j)
            losses[i] = float(np.mean((X_va[:, j] - X_va[:, keep] @ coef) ** 2))
    return losses


def cv_select(
    ds: Dataset,
    stage: str,
    tau=None,
    K: Optional[int] = None,
    rule: Optional[str] = None,
    cfg: Optional[CvConfig] = None,
    seed: int = 0,
    lambda_q: Optional[float] = None,
    j: Optional[int] = None,
    grid: Optional[np.ndarray] = None,
) -> LambdaPath:
    """Select a penalty level by K-fold cross-validation.

    Out-of-fold losses: unsmoothed check loss for the quantile stage,
    squared error of the adjusted response (recomputed from the fold's
    own quantile fit at ``lambda_q``) for the ES stage, and squared
    projection error for the decorrelation stage.  ``cv_1se`` picks the
    largest penalty whose mean loss is within one standard error of the
    minimum.
    """
    cfg = cfg or CvConfig()
    K = K or cfg.n_folds
    if rule is None:
        rule = {"qr": cfg.rule_q, "es": cfg.rule_e, "proj": cfg.rule_m}[stage]
    if rule not in ("cv_min", "cv_1se"):
        raise ValueError(f"cv_select supports cv_min/cv_1se, got {rule!r}")
    if ds.n < 2 * K:
        raise DataValidationError(f"need n >= 2K for {K}-fold CV, got n={ds.n}")

    if stage == "es" and lambda_q is None:
        raise ValueError("es stage needs the selected lambda_q")
    beta_full = None
    if stage == "es":
        beta_full, _ = fit_quantile_stage(
            ds, tau, lambda_q, replace(cfg.solver), standardize=cfg.standardize
        )
    full_path = fit_lambda_path(ds, stage, tau, beta_full, j, grid, cfg)
    grid = full_path.grid

    folds = _fold_assignment(ds.n, K, seed)
    all_idx = np.arange(ds.n)
    fold_losses = []
    skipped = 0
    for k, va in enumerate(folds):
        tr = np.setdiff1d(all_idx, va, assume_unique=True)
        try:
            losses = _score_fold(
                stage, ds.subset(tr), ds.subset(va), grid, tau, lambda_q, j, cfg
            )
        except (DataValidationError, RankDeficiencyError, np.linalg.LinAlgError) as err:
            skipped += 1
            warnings.warn(f"fold {k} skipped as degenerate: {err}")
            if skipped > 1:
                raise DataValidationError(
                    "more than one degenerate cross-validation fold"
                ) from err
            continue
        fold_losses.append(losses)

    fold_losses = np.asarray(fold_losses)
    mean = fold_losses.mean(axis=0)
    if fold_losses.shape[0] > 1:
        se = fold_losses.std(axis=0, ddof=1) / math.sqrt(fold_losses.shape[0])
    else:
        se = np.zeros_like(mean)
    i_min = int(np.argmin(mean))
    if rule == "cv_min":
        selected = i_min
    else:
        threshold = mean[i_min] + se[i_min]
        selected = int(np.flatnonzero(mean <= threshold)[0])

    coefs, support = _exact_at_selected(
        ds, stage, tau, beta_full, j, grid, selected, full_path, cfg
    )
    return LambdaPath(
        grid=grid,
        score_mean=mean,
        score_se=se,
        support_size=support,
        selected=selected,
        rule=rule,
        coefs=coefs,
        stage=stage,
    )


def _exact_at_selected(ds, stage, tau, beta_hat, j, grid, selected, path, cfg):
    """Replace the selected path row with an accurately solved fit."""
    exact = fit_lambda_path(
        ds, stage, tau, beta_hat, j,
        grid=np.array([grid[selected]]), cfg=cfg, relaxed=False,
    )
    coefs = path.coefs.copy()
    coefs[selected] = exact.coefs[0]
    support = path.support_size.copy()
    support[selected] = exact.support_size[0]
    return coefs, support


def _hbic_from_losses(losses, k_sizes, penalty_unit, cap):
    values = np.log(losses) + k_sizes * penalty_unit
    feasible = k_sizes <= cap
    if not feasible.any():
        raise EsregError(
            f"every path solution exceeds the HBIC support cap K_n={cap}"
        )
    masked = np.where(feasible, values, np.inf)
    selected = int(np.argmin(masked))  # ties resolve to the larger lambda
    return values, selected


def hbic_q(
    ds: Dataset,
    tau,
    path: Optional[LambdaPath] = None,
    hcfg: Optional[HbicConfig] = None,
    cfg: Optional[CvConfig] = None,
) -> LambdaPath:
    """Score a quantile-stage path by the high-dimensional BIC.

    HBIC(lambda) = log(mean check loss) + ||beta_lambda||_0 C_n log(p)/n,
    minimized subject to a support cap K_n; the nonzero count excludes
    the always-present intercept (a constant shift in the criterion).
    """
    t = _tau_value(tau)
    cfg = cfg or CvConfig()
    if path is None:
        path = fit_lambda_path(ds, "qr", t, cfg=cfg)
    if path.coefs is None:
        raise ValueError("path must carry solutions")
    c_n, _, k_n = (hcfg or HbicConfig()).resolve(ds.n, ds.p)
    losses = np.array(
        [np.mean(check_loss(t, ds.y - ds.X @ c)) for c in path.coefs]
    )
    values, selected = _hbic_from_losses(
        losses, path.support_size, c_n * math.log(ds.p) / ds.n, k_n
    )
    coefs, support = _exact_at_selected(
        ds, "qr", t, None, None, path.grid, selected, path, cfg
    )
    loss_sel = float(np.mean(check_loss(t, ds.y - ds.X @ coefs[selected])))
    values = values.copy()
    values[selected] = math.log(loss_sel) + support[selected] * c_n * math.log(ds.p) / ds.n
    return LambdaPath(
        grid=path.grid,
        score_mean=values,
        score_se=None,
        support_size=support,
        selected=selected,
        rule="hbic",
        coefs=coefs,
        stage="qr",
    )


def hbic_e(
    ds: Dataset,
    tau,
    beta_hat: np.ndarray,
    path: Optional[LambdaPath] = None,
    hcfg: Optional[HbicConfig] = None,
    cfg: Optional[CvConfig] = None,
) -> LambdaPath:
    """HBIC for the ES stage: log((2n)^-1 sum (Z_i - tau x_i' theta)^2)
    plus ||theta||_0 D_n log(p)/n under the same support cap."""
    t = _tau_value(tau)
    cfg = cfg or CvConfig()
    if path is None:
        path = fit_lambda_path(ds, "es", t, beta_hat=beta_hat, cfg=cfg)
    if path.coefs is None:
        raise ValueError("path must carry solutions")
    _, d_n, k_n = (hcfg or HbicConfig()).resolve(ds.n, ds.p)
    z = adjusted_response(ds.y, ds.X @ beta_hat, t)
    losses = np.array(
        [np.sum((z - t * (ds.X @ c)) ** 2) / (2.0 * ds.n) for c in path.coefs]
    )
    values, selected = _hbic_from_losses(
        losses, path.support_size, d_n * math.log(ds.p) / ds.n, k_n
    )
    coefs, support = _exact_at_selected(
        ds, "es", t, beta_hat, None, path.grid, selected, path, cfg
    )
    loss_sel = float(np.sum((z - t * (ds.X @ coefs[selected])) ** 2) / (2.0 * ds.n))
    values = values.copy()
    values[selected] = math.log(loss_sel) + support[selected] * d_n * math.log(ds.p) / ds.n
    return LambdaPath(
        grid=path.grid,
        score_mean=values,
        score_se=None,
        support_size=support,
        selected=selected,
        rule="hbic",
        coefs=coefs,
        stage="es",
    )
