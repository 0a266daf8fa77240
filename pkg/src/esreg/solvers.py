"""Penalty-aware optimizers.

Three entry points share one problem vocabulary:

* :func:`lasso_ls_fit` -- weighted-l1 least squares via cyclic coordinate
  descent (numba kernel, glmnet-style active sets);
* :func:`sqr_fit` -- l1-penalized smoothed quantile regression via
  proximal gradient with Barzilai-Borwein steps and backtracking;
* :func:`reference_prox_solve` -- a deliberately plain ISTA solver for
  the same two objectives, used only as an independent oracle in tests.

The smoothed check loss is the convolution of the check loss with a
uniform kernel on [-h, h]: identical to the check loss outside the
bandwidth and a quadratic bridge ``u^2/(4h) + (tau - 1/2) u + h/4``
inside, so it has a Lipschitz gradient with constant 1/(2h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from ._cd import cd_lasso_kernel
from .exceptions import SolverError
from .model import _tau_value

__all__ = [
    "PenaltySpec",
    "SolverConfig",
    "SolveReport",
    "smoothed_check_loss",
    "smoothed_check_grad",
    "default_bandwidth",
    "lasso_ls_fit",
    "sqr_fit",
    "reference_prox_solve",
    "lambda_path_max",
]

KKT_TOL = 1e-6


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty level together with per-coordinate weights.

    Weight 0 marks an unpenalized coordinate (always the intercept).
    """

    lam: float
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise SolverError(f"lambda must be nonnegative, got {self.lam}")
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if np.any(w < 0):
            raise SolverError("penalty weights must be nonnegative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def unpenalized_intercept(cls, lam: float, p: int) -> "PenaltySpec":
        """Weight 1 everywhere except coordinate 0."""
        w = np.ones(p)
        w[0] = 0.0
        return cls(lam=lam, weights=w)


@dataclass
class SolverConfig:
    """Optimizer knobs shared by all solvers."""

    tol: float = 1e-8
    max_iter: int = 10000
    warm_start: Optional[np.ndarray] = None
    smoothing_bandwidth: Optional[float] = None
    kkt_tol: float = KKT_TOL
    lipschitz_hint: Optional[float] = None
    max_active: Optional[int] = None  # working-set admission cap (path interiors)

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise SolverError("tol must be positive")
        if self.max_iter < 1:
            raise SolverError("max_iter must be >= 1")


@dataclass
class SolveReport:
    """What a solver actually did: the solution plus convergence evidence."""

    coefficients: np.ndarray
    iterations: int
    converged: bool
    objective: float
    kkt_violation: float
    bandwidth: Optional[float] = None
    monotone_ok: bool = True


def default_bandwidth(tau: float, n: int, p: int) -> float:
    """Smoothing bandwidth max(0.05, sqrt(tau(1-tau)) ((log p)/n)^{1/4})."""
    t = _tau_value(tau)
    base = (math.log(max(p, 2)) / max(n, 2)) ** 0.25
    return max(0.05, math.sqrt(t * (1.0 - t)) * base)


def smoothed_check_loss(u, tau, h):
    """Uniform-kernel smoothed check loss, elementwise."""
    t = _tau_value(tau)
    u = np.asarray(u, dtype=np.float64)
    inside = np.abs(u) <= h
    out = np.where(
        inside,
        u * u / (4.0 * h) + (t - 0.5) * u + h / 4.0,
        np.where(u >= 0, t * u, (t - 1.0) * u),
    )
    return out if out.ndim else float(out)


def smoothed_check_grad(u, tau, h):
    """Derivative of the smoothed check loss: (tau - 1/2) + clip(u/h, -1, 1)/2."""
    t = _tau_value(tau)
    u = np.asarray(u, dtype=np.float64)
    out = (t - 0.5) + 0.5 * np.clip(u / h, -1.0, 1.0)
    return out if out.ndim else float(out)


def _as_fortran(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SolverError("X must be 2-d")
    return np.asfortranarray(X)


def _validate_problem(X, y, pen: PenaltySpec):
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise SolverError(
            f"dimension mismatch: y has {y.shape[0]} entries, X has {X.shape[0]} rows"
        )
    if pen.weights.shape[0] != X.shape[1]:
        raise SolverError(
            f"dimension mismatch: {pen.weights.shape[0]} weights for {X.shape[1]} columns"
        )
    if not np.isfinite(X).all():
        raise SolverError("X contains non-finite entries")
    if not np.isfinite(y).all():
        raise SolverError("y contains non-finite entries")
    return y


def _kkt_violation_l1(grad, theta, lam_w):
    """Max violation of the subgradient inclusion for smooth grad + l1."""
    viol = np.where(
        theta != 0.0,
        np.abs(grad + lam_w * np.sign(theta)),
        np.maximum(np.abs(grad) - lam_w, 0.0),
    )
    return float(np.max(viol)) if viol.size else 0.0


def lasso_ls_fit(X, y, pen: PenaltySpec, cfg: Optional[SolverConfig] = None) -> SolveReport:
    """Weighted-l1 least squares: (2n)^-1 ||y - X theta||_2^2 + lam sum w_j |theta_j|.

    Cyclic coordinate descent with exact per-coordinate minimization;
    the objective is non-increasing across sweeps (violations flag the
    report).  At the reported solution each coordinate satisfies the KKT
    condition within ``cfg.kkt_tol``: the gradient coordinate
    ``n^-1 x_j'(y - X theta)`` lies inside ``lam w_j`` at zeros and equals
    ``lam w_j sign(theta_j)`` elsewhere.
    """
    cfg = cfg or SolverConfig()
    X = _as_fortran(X)
    y = _validate_problem(X, y, pen)
    n, p = X.shape
    lam_w = np.ascontiguousarray(pen.lam * pen.weights)
    if cfg.warm_start is not None:
        theta = np.ascontiguousarray(cfg.warm_start, dtype=np.float64).copy()
        if theta.shape[0] != p:
            raise SolverError("warm start length does not match column count")
    else:
        theta = np.zeros(p)
    r = np.ascontiguousarray(y - X @ theta)
    col_sq = np.ascontiguousarray(np.einsum("ij,ij->j", X, X) / n)
    sweeps, converged, kkt, obj, mono = cd_lasso_kernel(
        X, y, lam_w, theta, r, col_sq, cfg.tol, cfg.kkt_tol, cfg.max_iter
    )
    if not mono:
        raise AssertionError("coordinate descent objective increased across a sweep")
    return SolveReport(
        coefficients=theta,
        iterations=int(sweeps),
        converged=bool(converged),
        objective=float(obj),
        kkt_violation=float(kkt),
        monotone_ok=bool(mono),
    )


def _soft(v, a):
    return np.sign(v) * np.maximum(np.abs(v) - a, 0.0)


def _bb_prox_descent(X, y, t, h, lam_w, beta, step, tol, kkt_tol, max_iter):
    """Monotone proximal gradient with BB step initialization.

    Shared engine for the (possibly restricted) smoothed-QR problem;
    ``beta`` is the warm start.  Returns
    (beta, loss, iterations, converged, kkt, step).
    """
    n = X.shape[0]

    def loss_and_res(b):
        res = y - X @ b
        return float(np.mean(smoothed_check_loss(res, t, h))), res

    L, res = loss_and_res(beta)
    g = -(X.T @ smoothed_check_grad(res, t, h)) / n
    converged = False
    kkt = np.inf
    it = 0
    while it < max_iter:
        it += 1
        while True:  # backtracking on the quadratic upper bound
            cand = _soft(beta - step * g, step * lam_w)
            d = cand - beta
            Lc, res_c = loss_and_res(cand)
            dd = float(d @ d)
            if dd == 0.0:
                break
            if Lc <= L + float(g @ d) + dd / (2.0 * step):
                break
            step *= 0.5
            if step < 1e-16:
                break
        g_new = -(X.T @ smoothed_check_grad(res_c, t, h)) / n
        max_delta = float(np.max(np.abs(d))) if d.size else 0.0
        kkt = _kkt_violation_l1(g_new, cand, lam_w)
        dg = g_new - g
        sy = float(d @ dg)
        step = float(d @ d) / sy if sy > 1e-18 else step * 1.5
        step = min(max(step, 1e-12), 1e12)
        beta, L, g = cand, Lc, g_new
        if kkt <= kkt_tol and max_delta <= tol:
            converged = True
            break
    return beta, L, it, converged, kkt, step


def sqr_fit(X, y, tau, pen: PenaltySpec, cfg: Optional[SolverConfig] = None) -> SolveReport:
    """l1-penalized smoothed quantile regression.

    Minimizes ``n^-1 sum l_h(y_i - x_i' beta) + lam sum w_j |beta_j|``
    where ``l_h`` is the uniform-kernel smoothed check loss.  Solved by
    proximal gradient with Barzilai-Borwein step initialization and a
    monotone backtracking line search, wrapped in a working-set loop:
    restricted solves alternate with full KKT screens until no outside
    coordinate violates its condition.  Hitting ``max_iter`` surfaces
    ``converged=False`` instead of raising, so tuning loops survive hard
    penalty levels.
    """
    cfg = cfg or SolverConfig()
    t = _tau_value(tau)
    X = _as_fortran(X)
    y = _validate_problem(X, y, pen)
    n, p = X.shape
    h = cfg.smoothing_bandwidth or default_bandwidth(t, n, p)
    if h <= 0:
        raise SolverError("smoothing bandwidth must be positive")
    lam_w = pen.lam * pen.weights

    if cfg.warm_start is not None:
        beta = np.asarray(cfg.warm_start, dtype=np.float64).copy()
        if beta.shape[0] != p:
            raise SolverError("warm start length does not match column count")
    else:
        beta = np.zeros(p)
        if np.all(X[:, 0] == 1.0):
            beta[0] = np.quantile(y, t)

    if cfg.lipschitz_hint is not None and cfg.lipschitz_hint > 0:
        step = 1.0 / cfg.lipschitz_hint
    else:
        col_sq_max = float(np.max(np.einsum("ij,ij->j", X, X))) / n
        step = 2.0 * h / max(col_sq_max, 1e-12)

    def full_grad(b):
        return -(X.T @ smoothed_check_grad(y - X @ b, t, h)) / n

    g = full_grad(beta)
    in_set = (beta != 0.0) | (lam_w == 0.0)
    in_set |= np.abs(g) > lam_w  # KKT violators at the warm start
    if cfg.max_active is not None and in_set.sum() > cfg.max_active:
        # keep the strongest coordinates up to the admission cap
        score = np.where(beta != 0.0, np.inf, np.abs(g))
        score = np.where(in_set, score, -np.inf)
        keep = np.argsort(score)[-cfg.max_active:]
        capped = np.zeros(p, dtype=bool)
        capped[keep] = True
        capped |= lam_w == 0.0
        in_set = capped
    total_it = 0
    converged = False
    kkt = np.inf
    for _ in range(100):  # working-set rounds
        work = np.flatnonzero(in_set)
        Xw = np.asfortranarray(X[:, work]) if work.size < p else X
        bw, _, it, inner_ok, _, step = _bb_prox_descent(
            Xw, y, t, h, lam_w[work], beta[work].copy(), step,
            cfg.tol, cfg.kkt_tol, cfg.max_iter - total_it,
        )
        total_it += it
        beta = beta.copy()
        beta[work] = bw
        g = full_grad(beta)
        kkt = _kkt_violation_l1(g, beta, lam_w)
        if inner_ok and kkt <= cfg.kkt_tol:
            converged = True
            break
        if total_it >= cfg.max_iter:
            break
        if cfg.max_active is not None and in_set.sum() >= cfg.max_active:
            break  # admission cap reached; return the restricted solution
        outside = np.abs(g) > lam_w
        newly = outside & ~in_set
        if inner_ok and not newly.any():
            # inner stopped clean but full KKT disagrees (numerical fringe)
            in_set[:] = True
        else:
            if cfg.max_active is not None:
                budget = cfg.max_active - int(in_set.sum())
                cand = np.flatnonzero(newly)
                if cand.size > budget:
                    order = np.argsort(np.abs(g[cand]) - lam_w[cand])
                    cand = cand[order[-budget:]]
                newly = np.zeros(p, dtype=bool)
                newly[cand] = True
            in_set |= newly

    L = float(np.mean(smoothed_check_loss(y - X @ beta, t, h)))
    obj = L + float(np.abs(beta) @ lam_w)
    return SolveReport(
        coefficients=beta,
        iterations=total_it,
        converged=converged,
        objective=obj,
        kkt_violation=float(kkt),
        bandwidth=h,
    )


def reference_prox_solve(
    problem: str,
    X,
    y,
    pen: PenaltySpec,
    cfg: Optional[SolverConfig] = None,
    tau: Optional[float] = None,
) -> SolveReport:
    """Plain ISTA with backtracking for the same two objectives.

    Slow by design; used only as an independent oracle in tests
    (intended for n*p up to ~1e5).
    """
    cfg = cfg or SolverConfig()
    X = _as_fortran(X)
    y = _validate_problem(X, y, pen)
    n, p = X.shape
    lam_w = pen.lam * pen.weights

    if problem == "ls":
        def loss(b):
            r = y - X @ b
            return 0.5 * float(r @ r) / n

        def grad(b):
            return -(X.T @ (y - X @ b)) / n

        h = None
    elif problem == "sqr":
        t = _tau_value(tau)
        h = cfg.smoothing_bandwidth or default_bandwidth(t, n, p)

        def loss(b):
            return float(np.mean(smoothed_check_loss(y - X @ b, t, h)))

        def grad(b):
            return -(X.T @ smoothed_check_grad(y - X @ b, t, h)) / n

    else:
        raise SolverError(f"unknown problem {problem!r}")

    beta = (
        np.asarray(cfg.warm_start, dtype=np.float64).copy()
        if cfg.warm_start is not None
        else np.zeros(p)
    )
    step = 1.0
    L = loss(beta)
    converged = False
    kkt = np.inf
    it = 0
    while it < cfg.max_iter:
        it += 1
        g = grad(beta)
        while True:
            cand = _soft(beta - step * g, step * lam_w)
            d = cand - beta
            dd = float(d @ d)
            Lc = loss(cand)
            if dd == 0.0 or Lc <= L + float(g @ d) + dd / (2.0 * step):
                break
            step *= 0.5
            if step < 1e-16:
                break
        max_delta = float(np.max(np.abs(d))) if d.size else 0.0
        beta, L = cand, Lc
        kkt = _kkt_violation_l1(grad(beta), beta, lam_w)
        if kkt <= cfg.kkt_tol and max_delta <= cfg.tol:
            converged = True
            break

    obj = L + float(np.abs(beta) @ lam_w)
    return SolveReport(
        coefficients=beta,
        iterations=it,
        converged=converged,
        objective=obj,
        kkt_violation=float(kkt),
        bandwidth=h,
    )


def _intercept_only_sqr(y, tau, h):
    """Minimize the smoothed check loss over a constant fit (1-d root find)."""
    t = _tau_value(tau)

    def deriv(b):
        return -float(np.mean(smoothed_check_grad(y - b, t, h)))

    lo = float(np.min(y)) - h - 1.0
    hi = float(np.max(y)) + h + 1.0
    if deriv(lo) > 0 or deriv(hi) < 0:  # flat data edge cases
        return float(np.quantile(y, t))
    return float(brentq(deriv, lo, hi, xtol=1e-12))


def lambda_path_max(
    X,
    y,
    problem: str = "ls",
    tau: Optional[float] = None,
    h: Optional[float] = None,
    has_intercept: bool = True,
) -> float:
    """Smallest penalty level at which all penalized coordinates are zero.

    For least squares with an unpenalized intercept this is
    ``max_j |n^-1 x_j'(y - ybar)|`` over non-intercept columns.  For the
    smoothed quantile problem the intercept-only fit replaces the mean
    and the smoothed-loss gradient replaces the residual.
    """
    X = _as_fortran(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    start = 1 if has_intercept else 0
    if p <= start:
        return 0.0
    if problem == "ls":
        r = y - y.mean() if has_intercept else y
        return float(np.max(np.abs(X[:, start:].T @ r)) / n)
    if problem == "sqr":
        t = _tau_value(tau)
        hh = h or default_bandwidth(t, n, p)
        b0 = _intercept_only_sqr(y, t, hh) if has_intercept else 0.0
        score = smoothed_check_grad(y - b0, t, hh)
        return float(np.max(np.abs(X[:, start:].T @ score)) / n)
    raise SolverError(f"unknown problem {problem!r}")
