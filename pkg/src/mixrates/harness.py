"""Experiment runners: learning-rate sweeps, Bernstein tail checks and oracle
coverage, with deterministic seeding that does not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .bounds import erm_oracle_rhs, gaussian_schedule, generic_schedule
from .errors import ConfigurationError, MixratesError
from .learners import (KernelSpec, Predictor, erm_finite, lssvm_train, quantile_svm_train,
                       resolve_hypothesis)
from .losses import LossSpec, excess_risk_mc, variance_constant
from .mixing import (BernsteinTable, HBounds, bernstein_constants, builtin_test_function,
                     effective_observations, eps_grid_for_bounds, verify_bernstein_mc)
from .processes import MixingClass, MixingSpec, RegressionModel, mix64, sample

SCHEDULES = ("gaussian", "generic", "fixed")
LEARNERS = ("lssvm", "qsvm", "erm")


@dataclass(frozen=True)
class ExperimentConfig:
    mixing: MixingSpec
    model: RegressionModel
    loss: LossSpec
    learner: str = "lssvm"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    hypotheses: tuple = ()
    schedule: str = "gaussian"
    schedule_params: Mapping[str, float] = field(default_factory=dict)
    n_grid: tuple[int, ...] = tuple(200 * 2**k for k in range(6))
    repetitions: int = 10
    mc_eval: int = 100_000
    master_seed: int = 0
    target_exponent: float = 2.0 / 3.0
    tolerance: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        object.__setattr__(self, "schedule_params", dict(self.schedule_params))
        if self.learner not in LEARNERS:
            raise ConfigurationError(f"learner must be one of {LEARNERS}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}")
        if self.learner == "erm" and not self.hypotheses:
            raise ConfigurationError("erm learner needs hypotheses")
        if self.schedule == "fixed" and self.learner != "erm":
            if "lambda" not in self.schedule_params:
                raise ConfigurationError("fixed schedule needs 'lambda'")
        if self.schedule == "generic" and not {"beta", "p"} <= set(self.schedule_params):
            raise ConfigurationError("generic schedule needs 'beta' and 'p'")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigurationError("n_grid must be nonempty and strictly increasing")
        if self.repetitions < 3:
            raise ConfigurationError("repetitions must be >= 3")
        if self.mc_eval < 10_000:
            raise ConfigurationError("mc_eval must be >= 1e4")
        if self.loss.M != self.model.M:
            raise ConfigurationError("loss and model must share the clipping level M")
        n0 = class_n0(self.mixing)
        if self.n_grid[0] < n0:
            raise ConfigurationError(f"smallest n {self.n_grid[0]} is below n0 = {n0}")

    def to_dict(self) -> dict:
        return {
            "mixing": self.mixing.to_dict(),
            "model": self.model.to_dict(),
            "loss": self.loss.to_dict(),
            "learner": {"kind": self.learner, "kernel": self.kernel.kind, "sigma": self.kernel.sigma,
                        "degree": self.kernel.degree, "offset": self.kernel.offset,
                        "hypotheses": [str(h) for h in self.hypotheses]},
            "schedule": {"kind": self.schedule, **self.schedule_params},
            "n_grid": list(self.n_grid),
            "repetitions": self.repetitions,
            "mc_eval": self.mc_eval,
            "master_seed": self.master_seed,
            "target_exponent": self.target_exponent,
            "tolerance": self.tolerance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        model = RegressionModel.from_dict(d.get("model", {}))
        loss_d = dict(d.get("loss", {}))
        loss_d.setdefault("M", model.M)
        loss_d.setdefault("tau", model.tau)
        loss = LossSpec(loss_d.get("kind", "least_squares"), M=float(loss_d["M"]),
                        tau=float(loss_d["tau"]), scale=loss_d.get("scale"))
        ld = dict(d.get("learner", {}))
        kernel = KernelSpec(ld.get("kernel", "gaussian"),
                            sigma=float(ld.get("sigma", 1.0)), degree=int(ld.get("degree", 2)),
                            offset=float(ld.get("offset", 1.0)))
        sd = dict(d.get("schedule", {}))
        kwargs = {k: d[k] for k in ("repetitions", "mc_eval", "master_seed", "target_exponent",
                                    "tolerance") if k in d}
        if "n_grid" in d:
            kwargs["n_grid"] = tuple(d["n_grid"])
        return cls(
            mixing=MixingSpec.from_dict(d.get("mixing", {"class": "IID"})),
            model=model, loss=loss,
            learner=ld.get("kind", "lssvm"), kernel=kernel,
            hypotheses=tuple(ld.get("hypotheses", ())),
            schedule=sd.pop("kind", "gaussian"), schedule_params=sd,
            **kwargs,
        )

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


def class_n0(spec: MixingSpec, h: HBounds | None = None) -> float:
    """Threshold ``n0`` for the class at unit bounds ``B = sigma^2 = 1``."""
    return bernstein_constants(spec, h or HBounds(B=1.0, sigma2=1.0)).n0


def schedule_parameters(cfg: ExperimentConfig, n_eff: float) -> tuple[float, float]:
    """``(lambda, sigma)`` for the configured schedule; sigma is the kernel's
    own width unless the Gaussian schedule sets it."""
    sp = cfg.schedule_params
    if cfg.schedule == "gaussian":
        return gaussian_schedule(float(sp.get("t", 1.0)), cfg.model.d, n_eff)
    if cfg.schedule == "generic":
        return generic_schedule(float(sp["beta"]), float(sp["p"]), n_eff), cfg.kernel.sigma
    return float(sp.get("lambda", 0.0)), float(sp.get("sigma", cfg.kernel.sigma))


# ---------------------------------------------------------------------------
# Rate experiment
# ---------------------------------------------------------------------------


def cell_seed(master_seed: int, n_index: int, rep: int) -> int:
    return mix64(mix64(master_seed, n_index), rep)


def _train(cfg: ExperimentConfig, path, lam: float, sigma: float) -> Predictor:
    if cfg.learner == "erm":
        return erm_finite(cfg.loss, path, cfg.hypotheses, cfg.model)[0]
    kernel = KernelSpec(cfg.kernel.kind, sigma=sigma, degree=cfg.kernel.degree, offset=cfg.kernel.offset)
    if cfg.learner == "lssvm":
        return lssvm_train(kernel, cfg.loss, path, lam)[0]
    return quantile_svm_train(kernel, cfg.loss, path, lam)[0]


def _run_cell(cfg: ExperimentConfig, i: int, n: int, rep: int) -> tuple[float, float, float, float]:
    seed = cell_seed(cfg.master_seed, i, rep)
    try:
        path = sample(cfg.mixing, cfg.model, n, seed)
        n_eff = effective_observations(cfg.mixing.mixing_class, cfg.mixing.gamma, n)
        lam, sigma = schedule_parameters(cfg, n_eff)
        p = _train(cfg, path, lam, sigma)
        ex = excess_risk_mc(cfg.loss, cfg.mixing, cfg.model, p, m=cfg.mc_eval, seed=mix64(seed, 1))
    except MixratesError as exc:
        raise type(exc)(f"{exc} (n={n}, repetition={rep}, seed={seed})") from exc
    return n_eff, lam, sigma, ex


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float


def fit_slope(n_eff: Sequence[float], excess: Sequence[float]) -> SlopeFit:
    """OLS of ``log excess`` on ``log n_eff`` with the usual slope standard error."""
    x, y = np.log(np.asarray(n_eff, float)), np.log(np.asarray(excess, float))
    if len(x) < 2:
        raise ConfigurationError("need at least two points to fit a slope")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    if len(x) > 2:
        resid = y - intercept - slope * x
        se = math.sqrt(float(resid @ resid) / (len(x) - 2) / sxx)
    else:
        se = float("nan")
    return SlopeFit(slope, se, intercept)


@dataclass
class RateReport:
    rows: list[tuple[int, float, float, float, float, float]]
    fitted_slope: float
    slope_stderr: float
    target: float
    tolerance: float
    verdict: str
    runtime_seconds: float = 0.0
    flags: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    cells: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "rows": [dict(zip(ROW_FIELDS, r)) for r in self.rows],
            "fitted_slope": self.fitted_slope,
            "slope_stderr": self.slope_stderr,
            "target": self.target,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
            "flags": self.flags,
            "config": self.config,
            "cells": self.cells,
        }
        if include_runtime:
            d["runtime_seconds"] = self.runtime_seconds
        return d

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(_finite(self.to_dict(include_runtime)), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
        return buf.getvalue()


ROW_FIELDS = ("n", "n_eff", "lambda", "sigma", "mean_excess", "stderr")


def _finite(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def run_rate_experiment(cfg: ExperimentConfig, workers: int = 1) -> RateReport:
    """Sweep ``n_grid`` x repetitions, fit the log-log slope against ``n_eff``.

    Each ``(n, repetition)`` cell has its own derived seed, and results are
    reduced in key order, so the rows do not depend on ``workers``.
    """
    start = time.perf_counter()
    keys = [(i, n, rep) for i, n in enumerate(cfg.n_grid) for rep in range(cfg.repetitions)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda k: _run_cell(cfg, *k), keys))
    else:
        out = [_run_cell(cfg, *k) for k in keys]
    results = dict(zip(keys, out))
    rows, cells = [], []
    for i, n in enumerate(cfg.n_grid):
        vals = [results[(i, n, rep)] for rep in range(cfg.repetitions)]
        ex = np.array([v[3] for v in vals])
        n_eff, lam, sigma = vals[0][:3]
        rows.append((n, n_eff, lam, sigma, float(ex.mean()),
                     float(ex.std(ddof=1) / math.sqrt(len(ex)))))
        cells.extend({"n": n, "repetition": rep, "seed": cell_seed(cfg.master_seed, i, rep),
                      "excess": float(e)} for rep, e in enumerate(ex))
    flags = []
    means = np.array([r[4] for r in rows])
    if np.any(means <= 0) or len({r[1] for r in rows}) < 2:
        flags.append("degenerate_fit")
        slope, se, verdict = float("nan"), float("nan"), "fail"
    else:
        fit = fit_slope([r[1] for r in rows], means)
        slope, se = fit.slope, fit.stderr
        band = cfg.tolerance + 2.0 * (se if math.isfinite(se) else 0.0)
        verdict = "pass" if abs(slope + cfg.target_exponent) <= band else "fail"
    return RateReport(rows=rows, fitted_slope=slope, slope_stderr=se, target=cfg.target_exponent,
                      tolerance=cfg.tolerance, verdict=verdict,
                      runtime_seconds=time.perf_counter() - start, flags=flags,
                      config=cfg.to_dict(), cells=cells)


# ---------------------------------------------------------------------------
# Bernstein experiment
# ---------------------------------------------------------------------------

DEFAULT_BOUND_TARGETS = tuple(np.geomspace(1e-4, 0.5, 8).tolist())


def run_bernstein_experiment(
    spec: MixingSpec,
    model: RegressionModel,
    h_def: str = "x",
    n: int = 500,
    reps: int = 100_000,
    seed: int = 0,
    eps_grid: Sequence[float] | None = None,
    targets: Sequence[float] = DEFAULT_BOUND_TARGETS,
    A: float = 0.0,
    epsilon_dav: float = 1.0,
    level: float = 0.999,
    workers: int = 1,
) -> BernsteinTable:
    """Tail check of the generalized Bernstein inequality.

    Without an explicit ``eps_grid`` the grid is placed where the bound takes
    the values ``targets``.
    """
    if eps_grid is None:
        tf = builtin_test_function(spec, model, h_def)
        hb = HBounds(B=tf.B, sigma2=tf.sigma2, A=A, epsilon_dav=epsilon_dav)
        eps_grid = eps_grid_for_bounds(bernstein_constants(spec, hb), hb, n, targets)
    elif len(eps_grid) == 0:
        raise ConfigurationError("eps grid is empty")
    return verify_bernstein_mc(spec, model, h_def, n, eps_grid, reps, seed, A=A,
                               epsilon_dav=epsilon_dav, level=level, workers=workers)


def demo_bernstein_setups() -> dict[str, dict]:
    """The three demonstration processes for the tail check, keyed by name."""
    return {
        "iid": {"spec": MixingSpec(MixingClass.IID)},
        "markov": {
            "spec": MixingSpec(MixingClass.GEO_ALPHA_MARKOV, b=math.log(10.0), c=0.5,
                               process_params={"P": [[0.55, 0.45], [0.45, 0.55]]}),
            "epsilon_dav": 50.0,
        },
        "geoc": {"spec": MixingSpec(MixingClass.GEO_C, b=1.0, c=1.0, gamma=1.0,
                                    process_params={"map": "logistic4"}),
                 "A": 1.0},
    }


# ---------------------------------------------------------------------------
# Oracle coverage
# ---------------------------------------------------------------------------

DEMO_HYPOTHESES = ("zero", "bayes", "bayes*0.5", "bayes*0.8", "bayes+0.1", "bayes+-0.2",
                   "const:0.2", "const:-0.3")


@dataclass
class OracleReport:
    coverage: float
    floor: float
    lhs: list[float]
    rhs: list[float]
    r: list[float]
    chosen: list[int]
    flags: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.coverage >= self.floor

    def to_dict(self) -> dict:
        return _finite({"coverage": self.coverage, "floor": self.floor, "lhs": self.lhs,
                        "rhs": self.rhs, "r": self.r, "chosen": self.chosen, "flags": self.flags,
                        "meta": self.meta})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_oracle_experiment(
    mixing: MixingSpec,
    model: RegressionModel,
    loss: LossSpec,
    hypotheses: Sequence = DEMO_HYPOTHESES,
    n: int = 500,
    reps: int = 200,
    tau: float = 3.0,
    theta: float = 1.0,
    V: float | None = None,
    master_seed: int = 0,
    mc_eval: int = 200_000,
    workers: int = 1,
) -> OracleReport:
    """Coverage of the finite-class ERM oracle inequality.

    Each repetition trains ERM on a fresh path and checks ``excess(f_D) <=
    4 inf-excess + 4 r`` with ``r = (c_V (tau + ln|F|)/n_eff)^{1/(2-theta)} +
    8 c_B tau / n_eff``. Excess risks of the hypotheses are estimated once on a
    shared evaluation sample.
    """
    if V is None:
        V = variance_constant(loss, model)
    tf_h = HBounds(B=1.0, sigma2=1.0)
    k = bernstein_constants(mixing, tf_h)
    funcs = [resolve_hypothesis(h, model, loss.kind)[0] for h in hypotheses]
    eval_seed = mix64(master_seed, 2**32)
    excess = [excess_risk_mc(loss, mixing, model, f, m=mc_eval, seed=eval_seed) for f in funcs]
    inf_excess = max(0.0, min(excess))
    rhs = erm_oracle_rhs(k, n, tau, theta, V, len(funcs), inf_excess)
    r = (rhs - 4.0 * inf_excess) / 4.0

    def one(rep):
        path = sample(mixing, model, n, mix64(master_seed, rep))
        return erm_finite(loss, path, list(hypotheses), model)[0].index

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chosen = list(pool.map(one, range(reps)))
    else:
        chosen = [one(rep) for rep in range(reps)]
    lhs = [max(0.0, excess[i]) for i in chosen]
    covered = sum(v <= rhs for v in lhs)
    flags = ["vacuous_rhs"] if rhs >= loss.sup else []
    conf = 1.0 - 8.0 * k.C * math.exp(-tau)
    return OracleReport(
        coverage=covered / reps, floor=max(0.0, conf), lhs=lhs, rhs=[rhs] * reps, r=[r] * reps,
        chosen=chosen, flags=flags,
        meta={"hypothesis_excess": excess, "inf_excess": inf_excess, "V": V, "tau": tau,
              "theta": theta, "n": n, "n_eff": k.n_eff(n), "constants": k.to_dict(),
              "master_seed": master_seed},
    )


# ---------------------------------------------------------------------------
# Demo rate configurations
# ---------------------------------------------------------------------------

RATE_DEMO_MODEL = {"target": "sine", "amplitude": 0.5, "noise": 0.5, "M": 1.3}


def rate_demo_config(process: str = "iid", master_seed: int = 2024, **overrides) -> ExperimentConfig:
    """Gaussian LS-SVM sweep on the sine target for an i.i.d. or AR(1) process."""
    if process == "iid":
        spec = MixingSpec(MixingClass.IID)
    elif process == "ar1":
        spec = MixingSpec(MixingClass.GEO_ALPHA, b=1.0, c=1.0, gamma=1.0, process_params={"a": 0.5})
    else:
        raise ConfigurationError("process must be 'iid' or 'ar1'")
    model = RegressionModel(**RATE_DEMO_MODEL)
    kwargs = dict(mixing=spec, model=model, loss=LossSpec("least_squares", M=model.M),
                  learner="lssvm", kernel=KernelSpec("gaussian"), schedule="gaussian",
                  schedule_params={"t": 1.0}, master_seed=master_seed)
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


def write_report_files(report: RateReport, out: Path) -> tuple[Path, Path]:
    """Write ``report.json`` and the rows CSV next to it."""
    out = Path(out)
    out.write_text(report.to_json())
    csv_path = out.with_suffix(".csv")
    csv_path.write_text(report.to_csv())
    return out, csv_path
