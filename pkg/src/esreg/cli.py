"""Command-line interface: ``fit``, ``infer``, ``tune``, ``rcv`` on CSV
data and ``simulate`` for the Monte Carlo harness.

Every output file embeds the resolved configuration and seed under
``config`` plus a ``schema_version`` field.  Exit codes: 0 ok, 2 input
problem, 3 solver failure, 4 degenerate inference.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .data import RESPONSE_TRANSFORMS, dataset_to_csv, load_csv_dataset
from .exceptions import (
    DataValidationError,
    DegenerateProjectionError,
    EsregError,
    RankDeficiencyError,
    RcvCardinalityError,
    SolverError,
    VarianceDegenerateError,
)
from .harness import ExperimentConfig, run_experiment
from .inference import infer_coefficient
from .model import QuantileLevel
from .simulate import SimScenario
from .solvers import SolverConfig
from .tuning import CvConfig, cv_select, hbic_e, hbic_q
from .twostep import fit_quantile_stage, fit_two_step, flip_interval, upper_tail_transform
from .variance import rcv_variance

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_INFERENCE = 4

_INPUT_ERRORS = (DataValidationError, FileNotFoundError, ValueError, KeyError)
_INFERENCE_ERRORS = (
    RcvCardinalityError,
    DegenerateProjectionError,
    VarianceDegenerateError,
    RankDeficiencyError,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--tail", choices=["lower", "upper"], default="lower")
    p.add_argument("--rule", choices=["cv", "cv1se", "hbic"], default="cv")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--n-lambdas", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", choices=["on", "off"], default="on")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=["json", "csv"], default="json")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--response", required=True, help="name of the response column")
    p.add_argument(
        "--response-transform",
        choices=sorted(RESPONSE_TRANSFORMS),
        default="none",
    )
    p.add_argument("--drop", nargs="*", default=None, help="columns to ignore")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esreg",
        description="Two-step penalized expected shortfall regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the two-step estimator on CSV data")
    _add_data_args(p_fit)
    _add_common(p_fit)
    p_fit.add_argument("--lambda-q", type=float, default=None)
    p_fit.add_argument("--lambda-e", type=float, default=None)
    p_fit.add_argument("--refit", action="store_true")

    p_inf = sub.add_parser("infer", help="debiased inference on target columns")
    _add_data_args(p_inf)
    _add_common(p_inf)
    p_inf.add_argument("--target", nargs="+", required=True,
                       help="covariate names (or 1-based indices) to test")
    p_inf.add_argument("--alpha", type=float, default=0.05)
    p_inf.add_argument("--null-value", type=float, default=0.0)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p_sim.add_argument("--scenario", required=True, help="TOML or JSON scenario file")
    p_sim.add_argument("--replications", type=int, default=None)
    p_sim.add_argument("--workers", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None, help="output path base")
    p_sim.add_argument("--export-data", default=None,
                       help="write the first replication's dataset as CSV")

    p_tune = sub.add_parser("tune", help="penalty-path diagnostics for one stage")
    _add_data_args(p_tune)
    _add_common(p_tune)
    p_tune.add_argument("--stage", choices=["qr", "es", "proj"], required=True)
    p_tune.add_argument("--target", default=None,
                        help="projection target column (proj stage)")
    p_tune.add_argument("--lambda-q", type=float, default=None,
                        help="quantile penalty used to form the ES response")

    p_rcv = sub.add_parser("rcv", help="refitted cross-validation variances")
    _add_data_args(p_rcv)
    _add_common(p_rcv)
    p_rcv.add_argument("--target", required=True)

    return parser


def _cv_config(args) -> CvConfig:
    rule = {"cv": "cv_min", "cv1se": "cv_1se", "hbic": "cv_min"}[args.rule]
    return CvConfig(
        n_folds=args.folds,
        n_lambdas=args.n_lambdas,
        rule_q=rule,
        rule_e=rule,
        standardize=args.standardize == "on",
        solver=SolverConfig(),
    )


def _resolve_target(ds, token):
    """Accept a column name or a 1-based covariate index."""
    if ds.column_names is not None and token in ds.column_names:
        return ds.column_names.index(token)
    matches = []
    if ds.column_names is not None:
        matches = [
            i for i, name in enumerate(ds.column_names) if name.split("=")[0] == token
        ]
    if matches:
        return matches
    try:
        j = int(token)
    except ValueError:
        raise DataValidationError(f"unknown target column {token!r}") from None
    if not 1 <= j < ds.p:
        raise DataValidationError(f"target index {j} out of range [1, {ds.p})")
    return j


def _resolve_targets(ds, tokens):
    out = []
    for token in tokens:
        j = _resolve_target(ds, token)
        out.extend(j if isinstance(j, list) else [j])
    return out


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2, default=_json_default)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _config_echo(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "command"}
    cfg["command"] = args.command
    return cfg


def cmd_fit(args) -> int:
    ds = load_csv_dataset(args.input, args.response, args.response_transform, args.drop)
    level = QuantileLevel(tau=args.tau, tail=args.tail)
    work, work_level = (
        upper_tail_transform(ds, level) if level.tail == "upper" else (ds, level)
    )
    cvcfg = _cv_config(args)
    lambda_q = args.lambda_q
    if lambda_q is None:
        if args.rule == "hbic":
            lambda_q = hbic_q(work, work_level.tau, cfg=cvcfg).lambda_selected
        else:
            lambda_q = cv_select(
                work, "qr", work_level.tau, cfg=cvcfg, seed=args.seed
            ).lambda_selected
    lambda_e = args.lambda_e
    if lambda_e is None:
        if args.rule == "hbic":
            beta, _ = fit_quantile_stage(
                work, work_level.tau, lambda_q, cvcfg.solver, cvcfg.standardize
            )
            lambda_e = hbic_e(work, work_level.tau, beta, cfg=cvcfg).lambda_selected
        else:
            lambda_e = cv_select(
                work, "es", work_level.tau, cfg=cvcfg, seed=args.seed,
                lambda_q=lambda_q,
            ).lambda_selected

    fit = fit_two_step(
        work, work_level.tau, lambda_q, lambda_e, cvcfg.solver, cvcfg.standardize
    )
    if not (fit.quantile_report.converged and fit.es_report.converged):
        raise SolverError("a stage solver failed to converge; adjust tolerances")
    theta = fit.theta_hat
    if args.refit:
        from .twostep import refit_on_support

        theta = refit_on_support(work, fit)
    sign = -1.0 if level.tail == "upper" else 1.0
    names = ds.column_names or tuple(f"x{i}" for i in range(ds.p))
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_echo(args),
        "n": ds.n,
        "p": ds.p - 1,
        "tau": args.tau,
        "tail": args.tail,
        "lambda_q": float(lambda_q),
        "lambda_e": float(lambda_e),
        "quantile_coefficients": dict(zip(names, (sign * fit.beta_hat).tolist())),
        "es_coefficients": dict(zip(names, (sign * theta).tolist())),
        "support_q": [names[int(i)] for i in fit.support_q],
        "support_e": [names[int(i)] for i in np.flatnonzero(theta[1:]) + 1],
        "n_exceedances": fit.n_exceedances,
    }
    _emit(payload, args)
    return EXIT_OK


def cmd_infer(args) -> int:
    ds = load_csv_dataset(args.input, args.response, args.response_transform, args.drop)
    level = QuantileLevel(tau=args.tau, tail=args.tail)
    work, work_level = (
        upper_tail_transform(ds, level) if level.tail == "upper" else (ds, level)
    )
    cvcfg = _cv_config(args)
    targets = _resolve_targets(ds, args.target)
    sign = -1.0 if level.tail == "upper" else 1.0

    lambda_q = cv_select(
        work, "qr", work_level.tau, cfg=cvcfg, seed=args.seed
    ).lambda_selected
    lambda_e = cv_select(
        work, "es", work_level.tau, cfg=cvcfg, seed=args.seed, lambda_q=lambda_q
    ).lambda_selected
    fit = fit_two_step(
        work, work_level.tau, lambda_q, lambda_e, cvcfg.solver, cvcfg.standardize
    )

    rows = []
    for j in targets:
        res = infer_coefficient(
            work,
            work_level.tau,
            j,
            alpha=args.alpha,
            c0=sign * args.null_value,
            fit=fit,
            cv=cvcfg,
            seed=args.seed,
        )
        record = res.to_record(
            lambdas={"lambda_q": float(lambda_q), "lambda_e": float(lambda_e)},
            seeds={"seed": args.seed},
        )
        if sign < 0:
            record["theta_hat"] = -record["theta_hat"]
            record["theta_tilde"] = -record["theta_tilde"]
            record["ci"] = list(flip_interval(*record["ci"]))
        record["name"] = (
            ds.column_names[j] if ds.column_names is not None else f"x{j}"
        )
        rows.append(record)

    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_echo(args),
        "alpha": args.alpha,
        "results": rows,
    }
    _emit(payload, args)
    return EXIT_OK


def _load_scenario_file(path: str) -> dict:
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    try:
        import tomllib as toml
    except ImportError:  # Python 3.10
        import tomli as toml
    with open(path, "rb") as fh:
        return toml.load(fh)


def cmd_simulate(args) -> int:
    raw = _load_scenario_file(args.scenario)
    scenario_keys = {
        "n", "p", "s", "tau", "design", "model", "signal_scale", "seed", "standardize",
    }
    scen_kwargs = {k: raw[k] for k in scenario_keys if k in raw}
    if args.seed is not None:
        scen_kwargs["seed"] = args.seed
    scenario = SimScenario(**scen_kwargs)
    cfg = ExperimentConfig(
        scenario=scenario,
        replications=args.replications or int(raw.get("replications", 100)),
        methods=tuple(raw.get("methods", ("two_step", "two_step_refitted", "two_step_oracle"))),
        targets=tuple(raw.get("targets", (2,))),
        alpha=float(raw.get("alpha", 0.05)),
        rule_q=raw.get("rule_q", "cv_min"),
        rule_e=raw.get("rule_e", "cv_min"),
        rule_m=raw.get("rule_m", "cv_1se"),
        cv_folds=int(raw.get("cv_folds", 10)),
        n_lambdas=int(raw.get("n_lambdas", 50)),
        bootstrap_b=int(raw.get("bootstrap_b", 100)),
        seed=scenario.seed,
        workers=args.workers or int(raw.get("workers", 1)),
        name=raw.get("name", ""),
    )
    if args.export_data:
        dataset_to_csv(scenario.dataset(0), args.export_data)
    result = run_experiment(cfg)

    summary = [row.to_dict() for row in result.rows]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "rows": summary,
        "failures": result.failures,
        "records": result.records,
    }
    if args.out:
        base = args.out
        with open(base + ".json", "w") as fh:
            json.dump(payload, fh, indent=2, default=_json_default)
        with open(base + ".csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
            writer.writeheader()
            writer.writerows(summary)
        ci_rows = _ci_long_rows(result)
        if ci_rows:
            with open(base + "_ci.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(ci_rows[0].keys()))
                writer.writeheader()
                writer.writerows(ci_rows)
    else:
        print(json.dumps({"rows": summary, "failures": result.failures},
                         indent=2, default=_json_default))
    return EXIT_OK


def _ci_long_rows(result) -> list:
    """Plot-ready long format: one row per replication x target."""
    rows = []
    tau = result.config.scenario.tau
    for rec in result.records:
        if "debiased" not in rec:
            continue
        for j, entry in rec["debiased"].items():
            rows.append(
                {
                    "replication": rec["replication"],
                    "tau": tau,
                    "target": j,
                    "theta_tilde": entry["theta_tilde"],
                    "ci_lower": entry["ci"][0],
                    "ci_upper": entry["ci"][1],
                    "covered": int(entry["covered"]),
                }
            )
    return rows


def cmd_tune(args) -> int:
    ds = load_csv_dataset(args.input, args.response, args.response_transform, args.drop)
    level = QuantileLevel(tau=args.tau, tail=args.tail)
    work, work_level = (
        upper_tail_transform(ds, level) if level.tail == "upper" else (ds, level)
    )
    cvcfg = _cv_config(args)
    stage = args.stage
    if stage == "proj":
        if args.target is None:
            raise DataValidationError("proj stage needs --target")
        j = _resolve_target(ds, args.target)
        if isinstance(j, list):
            j = j[0]
        path = cv_select(work, "proj", j=j, cfg=cvcfg, seed=args.seed)
    elif stage == "qr":
        if args.rule == "hbic":
            path = hbic_q(work, work_level.tau, cfg=cvcfg)
        else:
            path = cv_select(work, "qr", work_level.tau, cfg=cvcfg, seed=args.seed)
    else:
        lambda_q = args.lambda_q
        if lambda_q is None:
            lambda_q = cv_select(
                work, "qr", work_level.tau, cfg=cvcfg, seed=args.seed
            ).lambda_selected
        if args.rule == "hbic":
            beta, _ = fit_quantile_stage(
                work, work_level.tau, lambda_q, cvcfg.solver, cvcfg.standardize
            )
            path = hbic_e(work, work_level.tau, beta, cfg=cvcfg)
        else:
            path = cv_select(
                work, "es", work_level.tau, cfg=cvcfg, seed=args.seed,
                lambda_q=lambda_q,
            )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_echo(args),
        "path": path.to_dict(),
    }
    _emit(payload, args)
    return EXIT_OK


def cmd_rcv(args) -> int:
    ds = load_csv_dataset(args.input, args.response, args.response_transform, args.drop)
    level = QuantileLevel(tau=args.tau, tail=args.tail)
    work, work_level = (
        upper_tail_transform(ds, level) if level.tail == "upper" else (ds, level)
    )
    j = _resolve_target(ds, args.target)
    if isinstance(j, list):
        j = j[0]
    est = rcv_variance(work, work_level.tau, j, cv_config=_cv_config(args), seed=args.seed)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_echo(args),
        "sigma_s2": est.sigma_s2,
        "sigma_omega2": est.sigma_omega2,
        "half_estimates": list(est.half_estimates),
        "split_sizes": list(est.split_sizes),
        "support_sizes": [list(s) for s in est.support_sizes],
        "split_seed": est.split_seed,
    }
    _emit(payload, args)
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "infer": cmd_infer,
    "simulate": cmd_simulate,
    "tune": cmd_tune,
    "rcv": cmd_rcv,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _INFERENCE_ERRORS as err:
        print(f"error (inference): {err}", file=sys.stderr)
        return EXIT_INFERENCE
    except SolverError as err:
        print(f"error (solver): {err}", file=sys.stderr)
        return EXIT_SOLVER
    except _INPUT_ERRORS as err:
        print(f"error (input): {err}", file=sys.stderr)
        return EXIT_INPUT
    except EsregError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
