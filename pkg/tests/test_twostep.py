import numpy as np
import pytest

from esreg import (
    Dataset,
    DegenerateTailWarning,
    QuantileLevel,
    RankDeficiencyError,
    SolverConfig,
    adjusted_response,
    fit_es_stage,
    fit_quantile_stage,
    fit_two_step,
    refit_on_support,
    upper_tail_transform,
)
from esreg.simulate import SimScenario, rng_stream
from esreg.solvers import lambda_path_max
from esreg.twostep import flip_interval

from conftest import make_regression


@pytest.fixture
def small_ds(rng):
    X, y, _ = make_regression(rng, n=120, p=6)
    return Dataset(y=y, X=X)


class TestQuantileStage:
    def test_pure_noise_fully_penalized(self, rng):
        # y independent of X, lambda at the path max: only the intercept moves
        n = 200
        ds = Dataset.from_covariates(rng.standard_normal((n, 8)), rng.standard_normal(n))
        from esreg.model import standardize
        from esreg.solvers import default_bandwidth

        std, _ = standardize(ds)
        h = default_bandwidth(0.2, n, 9)
        lam = lambda_path_max(std.X, ds.y, "sqr", tau=0.2, h=h)
        beta, rep = fit_quantile_stage(ds, 0.2, lam * 1.001,
                                       SolverConfig(smoothing_bandwidth=h))
        assert np.all(beta[1:] == 0.0)
        assert beta[0] != 0.0

    def test_matches_reference_oracle_unpenalized(self, rng):
        from esreg.solvers import reference_prox_solve, PenaltySpec

        X, y, _ = make_regression(rng, n=100, p=5)
        ds = Dataset(y=y, X=X)
        beta, _ = fit_quantile_stage(ds, 0.3, 0.0, standardize=False)
        pen = PenaltySpec(lam=0.0, weights=np.zeros(6))
        ref = reference_prox_solve("sqr", X, y, pen, tau=0.3)
        assert np.allclose(beta, ref.coefficients, atol=1e-4)

    def test_support_recovery_model_truth(self):
        # moderate-scale sanity: the quantile support covers the truth
        scen = SimScenario(n=2500, p=1000, s=10, tau=0.2,
                          design="abs_normal_identity", seed=11)
        hits = 0
        reps = 3
        lam = 0.5 * np.sqrt(np.log(1000) / 2500)
        for r in range(reps):
            ds = scen.dataset(r)
            beta, _ = fit_quantile_stage(ds, 0.2, lam)
            support = set(np.flatnonzero(beta[1:]) + 1)
            hits += set(range(1, 11)) <= support
        assert hits == reps


class TestEsStage:
    def test_degenerate_tail_warns_and_projects(self, rng):
        X, y, _ = make_regression(rng, n=80, p=4)
        ds = Dataset(y=y, X=X)
        beta = np.zeros(5)
        beta[0] = y.min() - 10.0  # quantile plane below every observation
        with pytest.warns(DegenerateTailWarning):
            theta, z, _ = fit_es_stage(ds, 0.1, beta, 10.0)
        assert np.allclose(z, 0.1 * (X @ beta))
        # fully penalized: theta is the projection of the plane itself
        assert np.all(theta[1:] == 0.0)
        assert theta[0] == pytest.approx(np.mean(z) / 0.1, rel=1e-6)

    def test_all_exceedances_reduces_to_lasso_of_y(self, rng):
        # beta overshoots every observation: Z = y - (1-tau) x'beta
        X, y, _ = make_regression(rng, n=80, p=4)
        ds = Dataset(y=y, X=X)
        tau = 0.999
        beta = np.zeros(5)
        beta[0] = y.max() + 1.0
        theta, z, _ = fit_es_stage(ds, tau, beta, 0.01)
        assert np.allclose(z, y - (1 - tau) * (X @ beta))

    def test_es_kkt_on_stated_objective(self, rng):
        # KKT of (2n)^-1 sum (Z - tau x'theta)^2 + tau lam_e |theta_-1|_1
        X, y, _ = make_regression(rng, n=90, p=5)
        ds = Dataset(y=y, X=X)
        beta, _ = fit_quantile_stage(ds, 0.25, 0.05, standardize=False)
        lam_e = 0.04
        theta, z, rep = fit_es_stage(ds, 0.25, beta, lam_e, standardize=False)
        grad = (0.25 * X).T @ (z - 0.25 * (X @ theta)) / 90
        on = theta[1:] != 0
        assert abs(grad[0]) <= 1e-6
        assert np.all(np.abs(grad[1:][~on]) <= 0.25 * lam_e + 1e-6)
        assert np.allclose(
            grad[1:][on], 0.25 * lam_e * np.sign(theta[1:][on]), atol=1e-6
        )


class TestTwoStep:
    def test_deterministic(self, small_ds):
        a = fit_two_step(small_ds, 0.2, 0.05, 0.05)
        b = fit_two_step(small_ds, 0.2, 0.05, 0.05)
        assert np.array_equal(a.beta_hat, b.beta_hat)
        assert np.array_equal(a.theta_hat, b.theta_hat)
        assert np.array_equal(a.z_hat, b.z_hat)

    def test_z_hat_matches_definition(self, small_ds):
        fit = fit_two_step(small_ds, 0.2, 0.05, 0.05)
        z = adjusted_response(small_ds.y, small_ds.X @ fit.beta_hat, 0.2)
        assert np.array_equal(fit.z_hat, z)

    def test_es_residuals_mean_zero(self, small_ds):
        fit = fit_two_step(small_ds, 0.2, 0.05, 0.05)
        assert abs(np.mean(fit.es_residuals)) < 1e-10

    def test_supports_are_nonzeros(self, small_ds):
        fit = fit_two_step(small_ds, 0.2, 0.05, 0.05)
        assert np.array_equal(fit.support_q, np.flatnonzero(fit.beta_hat[1:]) + 1)
        assert np.array_equal(fit.support_e, np.flatnonzero(fit.theta_hat[1:]) + 1)

    def test_scaling_equivariance(self, small_ds):
        # y -> c y multiplies both stage fits by c once the quadratic-stage
        # penalty and the smoothing bandwidth scale with c; the check loss is
        # 1-homogeneous, so the quantile-stage penalty is scale-free
        c = 3.0
        h = 0.1
        cfg = SolverConfig(smoothing_bandwidth=h, tol=1e-12)
        cfg_c = SolverConfig(smoothing_bandwidth=c * h, tol=1e-12)
        base = fit_two_step(small_ds, 0.2, 0.05, 0.04, cfg)
        scaled_ds = small_ds.with_response(c * small_ds.y)
        scaled = fit_two_step(scaled_ds, 0.2, 0.05, c * 0.04, cfg_c)
        assert np.allclose(scaled.beta_hat, c * base.beta_hat, atol=1e-5)
        assert np.allclose(scaled.theta_hat, c * base.theta_hat, atol=1e-5)


class TestRefit:
    def test_empty_support_intercept_only(self, rng):
        X, y, _ = make_regression(rng, n=60, p=4)
        ds = Dataset(y=y, X=X)
        fit = fit_two_step(ds, 0.2, 0.05, 1e6)  # huge lambda_e: slopes all zero
        refit = refit_on_support(ds, fit)
        assert np.all(refit[1:] == 0.0)
        assert refit[0] == pytest.approx(np.mean(fit.z_hat) / 0.2, rel=1e-8)

    def test_zero_penalty_limit_agrees(self, rng):
        X, y, _ = make_regression(rng, n=80, p=4)
        ds = Dataset(y=y, X=X)
        fit = fit_two_step(ds, 0.2, 0.05, 1e-9, SolverConfig(tol=1e-12))
        refit = refit_on_support(ds, fit)
        assert np.allclose(refit, fit.theta_hat, atol=1e-5)

    def test_rank_deficiency_raises(self, rng):
        X, y, _ = make_regression(rng, n=40, p=4)
        X[:, 2] = X[:, 1]  # duplicate columns on the support
        ds = Dataset(y=y, X=X)
        from esreg.twostep import TwoStepFit

        fit = TwoStepFit(
            tau=0.2,
            beta_hat=np.zeros(5),
            theta_hat=np.array([0.0, 1.0, 1.0, 0.0, 0.0]),
            z_hat=adjusted_response(y, np.zeros(40), 0.2),
            es_residuals=np.zeros(40),
            support_q=np.array([1]),
            support_e=np.array([1, 2]),
            lambda_q=0.1,
            lambda_e=0.1,
        )
        with pytest.raises(RankDeficiencyError):
            refit_on_support(ds, fit)


class TestUpperTail:
    def test_involution(self, rng):
        X, y, _ = make_regression(rng, n=50, p=3)
        ds = Dataset(y=y, X=X)
        level = QuantileLevel(tau=0.9, tail="upper")
        flipped, low = upper_tail_transform(ds, level)
        assert low.tau == pytest.approx(0.1) and low.tail == "lower"
        back, again = upper_tail_transform(
            flipped, QuantileLevel(tau=low.tau, tail="upper")
        )
        assert np.allclose(back.y, ds.y)
        assert again.tau == pytest.approx(0.9)

    def test_tail_average_equivalence(self, rng):
        # upper-tail ES at 0.9 equals the negated lower-tail ES of -y at 0.1
        y = rng.standard_normal(1000)
        tau_up = 0.9
        q = np.quantile(y, tau_up)
        upper_es = y[y >= q].mean()
        yneg = -y
        q2 = np.quantile(yneg, 1 - tau_up)
        lower_es = yneg[yneg <= q2].mean()
        assert upper_es == pytest.approx(-lower_es, rel=1e-10)

    def test_interval_flip(self):
        assert flip_interval(-1.0, 2.5) == (-2.5, 1.0)

    def test_requires_upper(self, rng):
        X, y, _ = make_regression(rng, n=30, p=2)
        ds = Dataset(y=y, X=X)
        with pytest.raises(ValueError):
            upper_tail_transform(ds, QuantileLevel(tau=0.1, tail="lower"))


class TestModelProperties:
    def test_neyman_orthogonality_second_order(self):
        # the empirical ES score moves quadratically, not linearly, under
        # quantile-coefficient perturbations; symmetric direction pairs
        # cancel the first-order sampling term
        scen = SimScenario(n=100_000, p=5, s=4, tau=0.2,
                          design="abs_normal_identity", seed=3)
        ds = scen.dataset(0)
        truth = scen.truth()
        tau = 0.2
        beta_star = truth.beta_full
        theta_star = truth.theta_full

        def score(beta):
            z = adjusted_response(ds.y, ds.X @ beta, tau)
            resid = z - tau * (ds.X @ theta_star)
            return tau * (ds.X.T @ resid) / ds.n

        base = score(beta_star)
        dirs = []
        gen = rng_stream(99, 0xD123)
        for k in range(ds.p):
            e = np.zeros(ds.p)
            e[k] = 1.0
            dirs.append(e)
        dirs.append(gen.standard_normal(ds.p))
        dirs = [d / np.linalg.norm(d) for d in dirs]

        scales = [1e-1, 1e-2, 1e-3]
        deltas = []
        for s in scales:
            acc = np.zeros(ds.p)
            for d in dirs:
                acc += score(beta_star + s * d) + score(beta_star - s * d) - 2 * base
            deltas.append(np.linalg.norm(acc / (2 * len(dirs))))
        slope = np.polyfit(np.log(scales), np.log(deltas), 1)[0]
        assert slope >= 1.7

    def test_adjusted_response_conditional_mean(self):
        # E[Z(beta*) | X] = tau x' theta*: the average gap is within 4 SE of 0
        scen = SimScenario(n=1_000_000, p=3, s=2, tau=0.1,
                          design="uniform_0_1p5", seed=5)
        ds = scen.dataset(0)
        truth = scen.truth()
        z = adjusted_response(ds.y, ds.X @ truth.beta_full, 0.1)
        gap = z - 0.1 * (ds.X @ truth.theta_full)
        se = gap.std(ddof=1) / np.sqrt(ds.n)
        assert abs(gap.mean()) < 4 * se

    def test_exceedance_fraction_near_tau(self):
        scen = SimScenario(n=200_000, p=4, s=3, tau=0.3,
                          design="abs_normal_ar08", seed=8)
        ds = scen.dataset(0)
        truth = scen.truth()
        frac = np.mean(ds.y <= ds.X @ truth.beta_full)
        assert abs(frac - 0.3) < 0.01
