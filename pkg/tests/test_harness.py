import math

import numpy as np
import pytest

from esreg import (
    DataValidationError,
    ExperimentConfig,
    SimScenario,
    bootstrap_estimator,
    oracle_two_step,
    run_experiment,
)
from esreg.harness import _support_metrics
from esreg.twostep import fit_two_step


def tiny_config(**overrides):
    scen = SimScenario(n=220, p=12, s=4, tau=0.25,
                      design="abs_normal_identity", seed=5)
    base = dict(
        scenario=scen,
        replications=4,
        methods=("two_step", "two_step_refitted", "two_step_oracle"),
        targets=(2,),
        cv_folds=4,
        n_lambdas=12,
        seed=5,
        workers=1,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestMetrics:
    def test_support_metrics_definitions(self):
        from esreg.simulate import make_truth

        truth = make_truth(6, 3, 0.2)
        theta = np.array([2.0, 0.0, 1.0, 0.5, 0.0, 0.1])
        m = _support_metrics(theta, truth)
        t = truth.theta_star
        s_idx = [0, 1, 2]
        c_idx = [3, 4, 5]
        assert m["error_p"] == pytest.approx(
            np.linalg.norm(theta[s_idx] - t[s_idx]) / np.linalg.norm(t)
        )
        assert m["error_fp"] == pytest.approx(
            np.linalg.norm(theta[c_idx]) / np.linalg.norm(t)
        )
        assert m["tpr"] == pytest.approx(2.0 / 3.0)
        assert m["fpr"] == pytest.approx(2.0 / 3.0)


class TestOracle:
    def test_support_fixed_and_no_false_positives(self):
        scen = SimScenario(n=300, p=20, s=5, tau=0.2, seed=9)
        ds = scen.dataset(0)
        truth = scen.truth()
        coef = oracle_two_step(ds, 0.2, truth)
        assert np.all(coef[truth.support_e] != 0.0)
        comp = np.setdiff1d(np.arange(1, ds.p), truth.support_e)
        assert np.all(coef[comp] == 0.0)

    def test_oracle_error_shrinks_with_n(self):
        scen_small = SimScenario(n=400, p=15, s=5, tau=0.2, seed=13)
        scen_big = SimScenario(n=6400, p=15, s=5, tau=0.2, seed=13)
        errs = []
        for scen in (scen_small, scen_big):
            truth = scen.truth()
            vals = []
            for r in range(8):
                ds = scen.dataset(r)
                coef = oracle_two_step(ds, 0.2, truth)
                m = _support_metrics(coef[1:], truth)
                vals.append(m["error_p"])
            errs.append(np.median(vals))
        # 16x the sample: root-n predicts 4x, allow generous slack
        assert errs[1] < errs[0] / 2.0


class TestBootstrap:
    def test_identity_sampler_reproduces_plain_fit(self):
        scen = SimScenario(n=200, p=8, s=3, tau=0.25, seed=17)
        ds = scen.dataset(0)
        plain = fit_two_step(ds, 0.25, 0.05, 0.05)
        avg = bootstrap_estimator(
            ds, 0.25, B=1, seed=0, lambda_q=0.05, lambda_e=0.05,
            index_sampler=lambda rng, n: np.arange(n),
        )
        assert np.allclose(avg, plain.theta_hat, atol=1e-12)

    def test_deterministic_given_seed(self):
        scen = SimScenario(n=150, p=6, s=3, tau=0.25, seed=19)
        ds = scen.dataset(0)
        a = bootstrap_estimator(ds, 0.25, B=3, seed=7, lambda_q=0.05, lambda_e=0.05)
        b = bootstrap_estimator(ds, 0.25, B=3, seed=7, lambda_q=0.05, lambda_e=0.05)
        assert np.array_equal(a, b)


class TestRunExperiment:
    def test_rows_and_records(self):
        res = run_experiment(tiny_config())
        methods = {row.method for row in res.rows}
        assert methods == {"two_step", "two_step_refitted", "two_step_oracle"}
        assert len(res.records) == 4
        oracle = res.row("two_step_oracle")
        assert oracle.error_fp == pytest.approx(0.0)
        assert math.isnan(oracle.fpr)

    def test_aggregation_recomputable_from_records(self):
        res = run_experiment(tiny_config())
        row = res.row("two_step")
        vals = [r["two_step"]["error_p"] for r in res.records]
        assert row.error_p == pytest.approx(float(np.mean(vals)))
        assert row.error_p_se == pytest.approx(
            float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
        )

    def test_parallel_matches_sequential(self):
        seq = run_experiment(tiny_config(workers=1))
        par = run_experiment(tiny_config(workers=2))
        for a, b in zip(seq.rows, par.rows):
            assert a == b
        for ra, rb in zip(seq.records, par.records):
            assert ra["lambda_q"] == rb["lambda_q"]
            assert ra["two_step"] == rb["two_step"]

    def test_unknown_method_rejected(self):
        with pytest.raises(DataValidationError):
            tiny_config(methods=("two_step", "magic"))

    def test_debiased_and_bootstrap_smoke(self):
        cfg = tiny_config(
            replications=2,
            methods=("two_step", "debiased", "bootstrap"),
            bootstrap_b=2,
        )
        res = run_experiment(cfg)
        deb = res.row("debiased")
        assert not math.isnan(deb.coverage)
        rec = res.records[0]["debiased"][2]
        assert rec["ci"][0] <= rec["theta_tilde"] <= rec["ci"][1]
        boot = res.row("bootstrap")
        assert not math.isnan(boot.bias)


class TestInferenceOrdering:
    def test_debiasing_beats_penalized_bias(self):
        # moderate scale: |bias(debiased)| < |bias(two-step)| and the
        # bootstrap average keeps the penalization bias sign
        scen = SimScenario(n=500, p=40, s=5, tau=0.2,
                          design="abs_normal_identity", seed=23)
        cfg = ExperimentConfig(
            scenario=scen,
            replications=12,
            methods=("two_step", "debiased", "bootstrap"),
            targets=(2,),
            cv_folds=5,
            n_lambdas=15,
            bootstrap_b=8,
            seed=23,
            workers=2,
        )
        res = run_experiment(cfg)
        bias_two = res.row("two_step").bias
        bias_deb = res.row("debiased").bias
        bias_boot = res.row("bootstrap").bias
        assert abs(bias_deb) < abs(bias_two)
        assert abs(bias_deb) < abs(bias_boot)
        assert res.row("bootstrap").mse <= res.row("two_step").mse * 1.2
