"""Command-line interface: ``mixrates <subcommand> ...``.

Exit codes: 0 success or passing verdict, 2 failing verdict, 1 error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .bounds import CoveringModel, OracleInputs, oracle_bound
from .errors import MixratesError
from .harness import (ExperimentConfig, demo_bernstein_setups, run_bernstein_experiment,
                      run_rate_experiment, write_report_files)
from .learners import (KernelSpec, erm_finite, lssvm_train, predictor_json, quantile_svm_train)
from .losses import LossSpec
from .mixing import HBounds, bernstein_constants, effective_observations
from .processes import MixingClass, MixingSpec, RegressionModel, SamplePath, sample

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _spec_from_args(args) -> MixingSpec:
    params = json.loads(args.params) if args.params else {}
    return MixingSpec(MixingClass.parse(args.mixing_class), b=args.b, c=args.c, gamma=args.gamma,
                      process_params=params)


def _add_spec_args(p, default_class="IID"):
    p.add_argument("--class", dest="mixing_class", default=default_class)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--params", default=None, help="process parameters as JSON, e.g. '{\"a\": 0.5}'")


def _add_model_args(p):
    p.add_argument("--target", default="sine")
    p.add_argument("--amplitude", type=float, default=0.6)
    p.add_argument("--noise", type=float, default=0.4)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--d", type=int, default=1)


def _model_from_args(args) -> RegressionModel:
    return RegressionModel(target=args.target, amplitude=args.amplitude, noise=args.noise,
                           M=args.M, d=args.d)


def cmd_sample(args) -> int:
    path = sample(_spec_from_args(args), _model_from_args(args), args.n, args.seed)
    sidecar = path.to_csv(args.out)
    print(f"wrote {args.out} and {sidecar}")
    return EXIT_OK


def cmd_effobs(args) -> int:
    print(repr(float(effective_observations(MixingClass.parse(args.mixing_class), args.gamma, args.n))))
    return EXIT_OK


def cmd_bernstein(args) -> int:
    if args.demo:
        setup = dict(demo_bernstein_setups()[args.demo])
        spec = setup.pop("spec")
    else:
        spec, setup = _spec_from_args(args), {}
    if args.A is not None:
        setup["A"] = args.A
    if args.epsilon_dav is not None:
        setup["epsilon_dav"] = args.epsilon_dav
    eps = [float(v) for v in args.eps.split(",")] if args.eps else None
    table = run_bernstein_experiment(spec, RegressionModel(), args.h, args.n, args.reps, args.seed,
                                     eps_grid=eps, level=args.level, workers=args.workers, **setup)
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        if not args.no_figure:
            from .plotting import plot_bernstein_table
            plot_bernstein_table(table, Path(args.out).with_suffix(".png"))
    else:
        sys.stdout.write(text)
    return EXIT_FAIL if table.violations() else EXIT_OK


def cmd_train(args) -> int:
    path = SamplePath.from_csv(args.data, M=args.M)
    if args.learner == "erm":
        loss = LossSpec("least_squares", M=path.M)
        hyps = args.hypotheses.split(",")
        p, report = erm_finite(loss, path, hyps, path.model)
        out = dict(p.to_dict(delta_achieved=report.delta_achieved))
        text = json.dumps(out, indent=2)
    else:
        kernel = KernelSpec(args.kernel, sigma=args.sigma, degree=args.degree, offset=args.offset)
        if args.learner == "lssvm":
            p, report = lssvm_train(kernel, LossSpec("least_squares", M=path.M), path, args.lam)
        else:
            p, report = quantile_svm_train(kernel, LossSpec("pinball", M=path.M, tau=args.tau), path,
                                           args.lam, max_iters=args.max_iters, tol=args.tol)
            if report.warning:
                print(f"warning: {report.warning}", file=sys.stderr)
        text = predictor_json(p, report)
    Path(args.model_out).write_text(text)
    print(f"wrote {args.model_out} (delta_achieved={report.delta_achieved:.3e})")
    return EXIT_OK


def cmd_bound(args) -> int:
    spec = _spec_from_args(args)
    k = bernstein_constants(spec, HBounds(B=args.B, sigma2=args.sigma2, A=args.A,
                                          epsilon_dav=args.epsilon_dav))
    model = CoveringModel(args.covering, a=args.a, p=args.p, sigma=args.sigma, d=args.d,
                          lam=args.lam, cardinality=args.cardinality)
    inputs = OracleInputs(theta=args.theta, V=args.V, B0=args.B0, tau=args.tau, eps=args.eps,
                          delta=args.delta, r_star=args.r_star, constants=k, n=args.n)
    res = oracle_bound(model, inputs, args.upsilon, args.excess, sum_mode=args.sum_mode)
    print(json.dumps(res.to_dict(), indent=2))
    return EXIT_OK


def cmd_rates(args) -> int:
    cfg = ExperimentConfig.from_toml(args.config)
    report = run_rate_experiment(cfg, workers=args.workers)
    out, csv_path = write_report_files(report, Path(args.out))
    if not args.no_figure:
        from .plotting import plot_rate_report
        plot_rate_report(report, out.with_suffix(".png"))
    sys.stdout.write(report.to_csv())
    slope = report.fitted_slope
    print(f"slope {slope:.4f} +- {report.slope_stderr:.4f} (target {-report.target:.4f}): "
          f"{report.verdict}" if math.isfinite(slope) else f"degenerate fit: {report.verdict}")
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixrates", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="simulate a sample path and write CSV + JSON sidecar")
    _add_spec_args(p)
    _add_model_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("effobs", help="effective number of observations")
    p.add_argument("--class", dest="mixing_class", required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--n", type=float, required=True)
    p.set_defaults(func=cmd_effobs)

    p = sub.add_parser("bernstein-verify", help="Monte-Carlo check of the Bernstein tail bound")
    _add_spec_args(p)
    p.add_argument("--demo", choices=sorted(demo_bernstein_setups()), default=None)
    p.add_argument("--h", default="x", choices=["x", "y2"])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", default=None, help="comma-separated eps grid")
    p.add_argument("--A", type=float, default=None)
    p.add_argument("--epsilon-dav", type=float, default=None)
    p.add_argument("--level", type=float, default=0.999)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="CSV path (a PNG figure is written alongside)")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_bernstein)

    p = sub.add_parser("train", help="train a learner on a sample-path CSV")
    p.add_argument("--learner", choices=["erm", "lssvm", "qsvm"], required=True)
    p.add_argument("--kernel", choices=["gaussian", "linear", "poly"], default="gaussian")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--offset", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--M", type=float, default=None)
    p.add_argument("--hypotheses", default="zero,bayes")
    p.add_argument("--max-iters", type=int, default=50_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bound", help="oracle-inequality radius and right-hand side")
    _add_spec_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--B", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--A", type=float, default=0.0)
    p.add_argument("--epsilon-dav", type=float, default=1.0)
    p.add_argument("--covering", default="generic", choices=["generic", "gaussian", "finite"])
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--cardinality", type=int, default=1)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--V", type=float, default=1.0)
    p.add_argument("--B0", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--r-star", type=float, default=0.0)
    p.add_argument("--upsilon", type=float, default=0.0)
    p.add_argument("--excess", type=float, default=0.0)
    p.add_argument("--sum-mode", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("rates", help="run a learning-rate experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report JSON path; CSV and PNG go alongside")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_rates)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2, which is reserved for failing verdicts
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    try:
        return args.func(args)
    except (MixratesError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
