"""Seeded data generators for the benchmark designs, with exact
ground-truth coefficient construction and standard-normal tail quantities.

Replication streams use the counter-based Philox generator keyed by
(seed, replication, purpose), so every replication is reproducible
independently of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .exceptions import DataValidationError
from .model import Dataset, _tau_value

__all__ = [
    "DESIGNS",
    "MODELS",
    "SimScenario",
    "SimTruth",
    "normal_tail_quantile",
    "normal_tail_es",
    "make_truth",
    "gen_design",
    "gen_response",
    "make_dataset",
    "rng_stream",
    "population_gram",
    "population_projection",
]

DESIGNS = ("abs_normal_identity", "abs_normal_ar08", "uniform_0_1p5")
MODELS = ("heteroscedastic", "homogeneous")


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by (seed, *key)."""
    ss = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFF, *[int(k) for k in key]])
    return np.random.Generator(np.random.Philox(seed=ss))


def normal_tail_quantile(tau) -> float:
    """Standard normal quantile at tau."""
    return float(norm.ppf(_tau_value(tau)))


def normal_tail_es(tau) -> float:
    """Lower-tail expected shortfall of N(0,1): -pdf(ppf(tau))/tau.

    Equals the tail average of the quantile function,
    tau^-1 int_0^tau ppf(u) du.
    """
    t = _tau_value(tau)
    return float(-norm.pdf(norm.ppf(t)) / t)


@dataclass(frozen=True)
class SimTruth:
    """Generative coefficients and the implied quantile/ES truths.

    The vectors cover the generated covariates only; ``beta_full`` and
    ``theta_full`` prepend the intercept coordinate so they align with
    fitted coefficient vectors on datasets carrying an intercept column.
    """

    tau: float
    model: str
    zeta_star: np.ndarray
    eta_star: np.ndarray
    beta_star: np.ndarray
    theta_star: np.ndarray
    intercept_beta: float = 0.0
    intercept_theta: float = 0.0

    @property
    def beta_full(self) -> np.ndarray:
        return np.concatenate(([self.intercept_beta], self.beta_star))

    @property
    def theta_full(self) -> np.ndarray:
        return np.concatenate(([self.intercept_theta], self.theta_star))

    @property
    def support_e(self) -> np.ndarray:
        """Nonzero ES coordinates as full-design column indices (intercept = 0)."""
        return np.flatnonzero(self.theta_star) + 1


def make_truth(p: int, s: int, tau, c: float = 1.0, model: str = "heteroscedastic") -> SimTruth:
    """Build the sparse generative coefficients.

    The location coefficients are 2 on the first ceil(s/2) covariates and
    1 on the rest of the support, scaled by the signal multiplier ``c``;
    the heteroscedasticity loadings are 1/3 on the first ceil(s/2)
    covariates and are not rescaled (so the weak-signal grids shrink the
    location signal only).
    """
    t = _tau_value(tau)
    if not 0 < s <= p:
        raise DataValidationError(f"need 0 < s <= p, got s={s}, p={p}")
    if c <= 0:
        raise DataValidationError("signal scale must be positive")
    if model not in MODELS:
        raise DataValidationError(f"unknown model {model!r}")
    half = math.ceil(s / 2)
    zeta = np.zeros(p)
    zeta[:half] = 2.0 * c
    zeta[half:s] = 1.0 * c
    if model == "heteroscedastic":
        eta = np.zeros(p)
        eta[:half] = 1.0 / 3.0
        q, es = normal_tail_quantile(t), normal_tail_es(t)
        return SimTruth(
            tau=t,
            model=model,
            zeta_star=zeta,
            eta_star=eta,
            beta_star=zeta + eta * q,
            theta_star=zeta + eta * es,
        )
    # homogeneous: y = X gamma + e, so the slope truths coincide and the
    # noise quantile/ES land in the intercept
    eta = np.zeros(p)
    return SimTruth(
        tau=t,
        model=model,
        zeta_star=zeta,
        eta_star=eta,
        beta_star=zeta.copy(),
        theta_star=zeta.copy(),
        intercept_beta=normal_tail_quantile(t),
        intercept_theta=normal_tail_es(t),
    )


def gen_design(n: int, p: int, design: str, seed=0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw an n-by-(p+1) design: an intercept column prepended to p covariates."""
    if design not in DESIGNS:
        raise DataValidationError(f"unknown design {design!r}")
    rng = rng if rng is not None else rng_stream(seed, 0xD)
    out = np.empty((n, p + 1), order="F")
    out[:, 0] = 1.0
    if design == "uniform_0_1p5":
        out[:, 1:] = rng.uniform(0.0, 1.5, size=(n, p))
        return out
    z = rng.standard_normal((n, p))
    if design == "abs_normal_ar08":
        # AR(1) correlation via its Cholesky recursion, then fold
        rho = 0.8
        w = math.sqrt(1.0 - rho * rho)
        for jcol in range(1, p):
            z[:, jcol] = rho * z[:, jcol - 1] + w * z[:, jcol]
    out[:, 1:] = np.abs(z)
    return out


def gen_response(
    X: np.ndarray,
    truth: SimTruth,
    model: Optional[str] = None,
    seed=0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Draw responses for a design generated by :func:`gen_design`."""
    model = model or truth.model
    rng = rng if rng is not None else rng_stream(seed, 0xE)
    X_cov = X[:, 1:]
    xi = rng.standard_normal(X.shape[0])
    if model == "heteroscedastic":
        scale = X_cov @ truth.eta_star
        if np.any(scale <= 0):
            raise DataValidationError(
                "heteroscedastic model needs X'eta > 0 for every row"
            )
        return X_cov @ truth.zeta_star + scale * xi
    if model == "homogeneous":
        return X_cov @ truth.zeta_star + xi
    raise DataValidationError(f"unknown model {model!r}")


@dataclass(frozen=True)
class SimScenario:
    """A complete generative setting plus fitting conventions."""

    n: int
    p: int
    s: int
    tau: float
    design: str = "abs_normal_identity"
    model: str = "heteroscedastic"
    signal_scale: float = 1.0
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise DataValidationError(f"unknown design {self.design!r}")
        if self.model not in MODELS:
            raise DataValidationError(f"unknown model {self.model!r}")
        _tau_value(self.tau)
        if not 0 < self.s <= self.p:
            raise DataValidationError("need 0 < s <= p")

    def truth(self) -> SimTruth:
        return make_truth(self.p, self.s, self.tau, self.signal_scale, self.model)

    def dataset(self, replication: int = 0) -> Dataset:
        return make_dataset(self, replication)


def make_dataset(scenario: SimScenario, replication: int = 0) -> Dataset:
    """Generate the dataset for one replication (bit-reproducible)."""
    rng = rng_stream(scenario.seed, replication)
    X = gen_design(scenario.n, scenario.p, scenario.design, rng=rng)
    y = gen_response(X, scenario.truth(), scenario.model, rng=rng)
    names = ("(intercept)",) + tuple(f"x{j}" for j in range(1, scenario.p + 1))
    return Dataset(y=y, X=X, has_intercept=True, column_names=names)


def population_gram(design: str, p: int) -> np.ndarray:
    """E(X X') for the full design including the intercept column."""
    if design not in DESIGNS:
        raise DataValidationError(f"unknown design {design!r}")
    if design == "uniform_0_1p5":
        mean, block = 0.75, np.full((p, p), 0.75 * 0.75)
        np.fill_diagonal(block, 0.75)  # E X^2 = 1.5^2 / 3
    elif design == "abs_normal_identity":
        mean = math.sqrt(2.0 / math.pi)
        block = np.full((p, p), mean * mean)
        np.fill_diagonal(block, 1.0)
    else:
        mean = math.sqrt(2.0 / math.pi)
        idx = np.arange(p)
        rho = 0.8 ** np.abs(idx[:, None] - idx[None, :])
        block = (2.0 / math.pi) * (np.sqrt(1.0 - rho**2) + rho * np.arcsin(rho))
        np.fill_diagonal(block, 1.0)
    G = np.empty((p + 1, p + 1))
    G[0, 0] = 1.0
    G[0, 1:] = mean
    G[1:, 0] = mean
    G[1:, 1:] = block
    return G


def population_projection(design: str, p: int, j: int) -> np.ndarray:
    """Population coefficients of the projection of column j on the rest.

    Returns the length-p vector (intercept first, j removed) solving
    E(X_{-j} X_{-j}') gamma = E(X_{-j} X_j); the residual
    X_j - X_{-j}' gamma is the population decorrelation error.
    """
    if not 1 <= j <= p:
        raise DataValidationError("j must index a covariate (1..p)")
    G = population_gram(design, p)
    keep = np.delete(np.arange(p + 1), j)
    return np.linalg.solve(G[np.ix_(keep, keep)], G[keep, j])
