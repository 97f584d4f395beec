"""Clipped regularized empirical risk minimizers.

* finite-set ERM (regularizer 0),
* least-squares SVM / kernel ridge regression without offset, solved exactly,
* quantile SVM with the pinball loss, solved by averaged subgradient descent
  with a duality-gap certificate.

Kernel predictors are expansions ``f = sum_j alpha_j k(s_j, .)`` with
regularizer ``lambda * alpha^T K alpha``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import ConfigurationError
from .losses import LEAST_SQUARES, PINBALL, LossSpec, loss_value
from .processes import RegressionModel, SamplePath

_PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    sigma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind == "poly":
            kind = "polynomial"
        if kind not in ("gaussian", "polynomial", "linear"):
            raise ConfigurationError(f"unknown kernel {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "gaussian" and not self.sigma > 0:
            raise ConfigurationError("Gaussian width sigma must be positive")
        if kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ConfigurationError("polynomial degree must be a positive integer")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "degree": self.degree, "offset": self.offset}


def _points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ConfigurationError("points must be a 2-d array (rows are points)")
    return a


def gram(kernel: KernelSpec, a, b) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(a_i, b_j)``; Gaussian ``k = exp(-|x - x'|^2 / sigma^2)``."""
    a, b = _points(a), _points(b)
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if kernel.kind == "gaussian":
        return np.exp(-cdist(a, b, "sqeuclidean") / kernel.sigma**2)
    inner = a @ b.T
    if kernel.kind == "linear":
        return inner
    return (inner + kernel.offset) ** int(kernel.degree)


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Predictor:
    form: str
    M: float
    lam: float = 0.0
    regularizer_value: float = 0.0
    coefficients: np.ndarray | None = None
    support_points: np.ndarray | None = None
    kernel: KernelSpec | None = None
    index: int | None = None
    function: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    label: str = ""

    def predict(self, x, clipped: bool = False) -> np.ndarray:
        x = _points(x)
        if self.form == "finite":
            out = np.asarray(self.function(x), dtype=float)
        else:
            if x.shape[1] != self.support_points.shape[1]:
                raise ConfigurationError("dimension mismatch between points and support")
            out = np.empty(len(x))
            for i in range(0, len(x), _PREDICT_CHUNK):
                out[i:i + _PREDICT_CHUNK] = gram(self.kernel, x[i:i + _PREDICT_CHUNK],
                                                 self.support_points) @ self.coefficients
        return np.clip(out, -self.M, self.M) if clipped else out

    def to_dict(self, delta_achieved: float | None = None) -> dict:
        d = {"kind": self.form, "M": self.M, "lambda": self.lam, "label": self.label}
        if self.form == "kernel":
            d.update(kernel=self.kernel.kind, sigma=self.kernel.sigma, degree=self.kernel.degree,
                     offset=self.kernel.offset,
                     support_points=self.support_points.tolist(),
                     coefficients=self.coefficients.tolist())
        else:
            d["index"] = self.index
        if delta_achieved is not None:
            d["delta_achieved"] = delta_achieved
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Predictor":
        if d.get("kind") != "kernel":
            raise ConfigurationError("only kernel-expansion predictors can be restored from JSON")
        kernel = KernelSpec(d["kernel"], sigma=d.get("sigma", 1.0), degree=d.get("degree", 2),
                            offset=d.get("offset", 1.0))
        return kernel_predictor(kernel, np.asarray(d["support_points"], dtype=float),
                                np.asarray(d["coefficients"], dtype=float), d["lambda"], d["M"])


def predict(p: Predictor, x, clipped: bool = False) -> np.ndarray:
    return p.predict(x, clipped=clipped)


def kernel_predictor(kernel: KernelSpec, support, coefficients, lam: float, M: float,
                     K: np.ndarray | None = None) -> Predictor:
    support = _points(support)
    coefficients = np.asarray(coefficients, dtype=float)
    if K is None:
        K = gram(kernel, support, support)
    return Predictor(form="kernel", M=M, lam=lam,
                     regularizer_value=float(lam * coefficients @ K @ coefficients),
                     coefficients=coefficients, support_points=support, kernel=kernel)


@dataclass
class SolveReport:
    delta_achieved: float
    iterations: int
    objective: float
    residual: float
    converged: bool = True
    warning: str | None = None
    effective_ridge: float | None = None
    history: list = field(default_factory=list)


def regularized_risk(p: Predictor, loss: LossSpec, path: SamplePath, clipped: bool = False) -> float:
    """``Upsilon(p) + R_{L,D}(p)`` (clipped inside the risk when asked)."""
    return p.regularizer_value + float(np.mean(loss_value(loss, path.y, p.predict(path.x, clipped))))


# ---------------------------------------------------------------------------
# Finite ERM
# ---------------------------------------------------------------------------

_TAG = re.compile(r"^(zero|bayes|const:(?P<c>[-+0-9.eE]+)|bayes\+(?P<s>[-+0-9.eE]+)|bayes\*(?P<m>[-+0-9.eE]+))$")


def resolve_hypothesis(tag, model: RegressionModel | None, kind: str = LEAST_SQUARES):
    """Turn a function tag into a callable on covariate arrays.

    Tags: ``zero``, ``bayes``, ``const:c``, ``bayes+c`` (shift), ``bayes*c`` (scale).
    Callables pass through unchanged.
    """
    if callable(tag):
        return tag, getattr(tag, "__name__", "callable")
    mt = _TAG.match(str(tag).strip())
    if not mt:
        raise ConfigurationError(f"unknown hypothesis tag {tag!r}")
    if mt.group(1) == "zero":
        return (lambda x: np.zeros(len(_points(x)))), "zero"
    if mt.group("c") is not None:
        c = float(mt.group("c"))
        return (lambda x: np.full(len(_points(x)), c)), tag
    if model is None:
        raise ConfigurationError(f"tag {tag!r} needs the regression model")
    fstar = model.bayes_function(kind)
    if mt.group("s") is not None:
        s = float(mt.group("s"))
        return (lambda x: fstar(_points(x)) + s), tag
    if mt.group("m") is not None:
        m = float(mt.group("m"))
        return (lambda x: m * fstar(_points(x))), tag
    return (lambda x: fstar(_points(x))), tag


def erm_finite(loss: LossSpec, path: SamplePath, hypotheses: Sequence,
               model: RegressionModel | None = None) -> tuple[Predictor, SolveReport]:
    """Empirical risk minimizer over a finite set; ties go to the lowest index."""
    if len(hypotheses) == 0:
        raise ConfigurationError("hypothesis list is empty")
    model = model if model is not None else path.model
    funcs = [resolve_hypothesis(h, model, loss.kind) for h in hypotheses]
    risks, has_zero = [], False
    for fn, name in funcs:
        vals = np.asarray(fn(path.x), dtype=float)
        if np.any(np.abs(vals) > loss.M * (1 + 1e-12)):
            raise ConfigurationError(f"hypothesis {name!r} exceeds the bound M on the sample")
        has_zero |= bool(np.all(vals == 0.0))
        risks.append(float(np.mean(loss_value(loss, path.y, vals))))
    if not has_zero:
        raise ConfigurationError("the hypothesis set must contain the zero function")
    best = int(np.argmin(risks))  # first minimum
    fn, name = funcs[best]
    p = Predictor(form="finite", M=loss.M, index=best, function=fn, label=name)
    return p, SolveReport(delta_achieved=0.0, iterations=len(funcs), objective=risks[best], residual=0.0)


# ---------------------------------------------------------------------------
# LS-SVM
# ---------------------------------------------------------------------------


def lssvm_train(kernel: KernelSpec, loss: LossSpec, path: SamplePath, lam: float,
                K: np.ndarray | None = None) -> tuple[Predictor, SolveReport]:
    """Minimize ``lam * |f|_H^2 + R_{L,D}(f)`` for the scaled least-squares loss.

    The representer coefficients solve ``(K + (n lam / scale) I) alpha = y``.
    The reported ``delta_achieved = scale * |r|_2^2 / n`` bounds the objective
    gap caused by the linear-system residual ``r``.
    """
    if loss.kind != LEAST_SQUARES:
        raise ConfigurationError("lssvm_train needs the least-squares loss")
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    n = path.n
    if n < 1:
        raise ConfigurationError("empty training path")
    if K is None:
        K = gram(kernel, path.x, path.x)
    ridge = n * lam / loss.scale
    A = K.copy()
    A[np.diag_indices(n)] += ridge
    factor = linalg.cho_factor(A, lower=True, check_finite=False)
    alpha = linalg.cho_solve(factor, path.y, check_finite=False)
    r = A @ alpha - path.y
    if np.max(np.abs(r)) > 1e-8 * max(np.max(np.abs(path.y)), 1e-300):
        alpha -= linalg.cho_solve(factor, r, check_finite=False)  # one refinement step
        r = A @ alpha - path.y
    resid = float(np.max(np.abs(r)))
    if resid > 1e-8 * max(float(np.max(np.abs(path.y))), 1e-300):
        raise RuntimeError(f"LS-SVM linear solve residual {resid:.3e} above tolerance")
    p = kernel_predictor(kernel, path.x, alpha, lam, loss.M, K=K)
    fitted = K @ alpha
    objective = p.regularizer_value + float(np.mean(loss_value(loss, path.y, fitted)))
    delta = loss.scale * float(r @ r) / n
    return p, SolveReport(delta_achieved=delta, iterations=1, objective=objective, residual=resid,
                          effective_ridge=ridge)


# ---------------------------------------------------------------------------
# Quantile SVM
# ---------------------------------------------------------------------------


def _pinball_objective(loss, y, K, alpha, lam):
    fitted = K @ alpha
    return float(lam * alpha @ fitted + np.mean(loss_value(loss, y, fitted)))


def _pinball_dual(loss, y, K, alpha, lam):
    """Dual value at the box projection of ``u = 2 lam n alpha / scale``; a lower
    bound on the optimal primal objective."""
    n = len(y)
    u = np.clip(2.0 * lam * n * alpha / loss.scale, loss.tau - 1.0, loss.tau)
    w = loss.scale / n
    return float(w * u @ y - w * w * (u @ K @ u) / (4.0 * lam))


def quantile_svm_train(kernel: KernelSpec, loss: LossSpec, path: SamplePath, lam: float,
                       max_iters: int = 50_000, tol: float = 1e-6, check_every: int = 50,
                       K: np.ndarray | None = None) -> tuple[Predictor, SolveReport]:
    """Minimize ``lam * alpha^T K alpha + mean scale*pinball(y_i, (K alpha)_i)``.

    Subgradient steps ``alpha -= eta_t * (2 lam alpha + scale * s / n)`` (the
    RKHS subgradient expressed in coefficients) with ``eta_t = c / sqrt(t)``,
    ``c = 1 / (lam trace(K) / n + 1)``. Two running averages are kept: over all
    iterates, and over the iterates since the last power-of-two step (a suffix
    average, which converges faster near kinks). Alongside, projected gradient
    ascent runs on the box-constrained dual ``u in [tau-1, tau]^n``; its primal
    image ``alpha = scale u / (2 lam n)`` is exact at a dual optimum. Every
    ``check_every`` steps all four candidates are scored; the best is kept. ``delta_achieved`` is its objective minus the best dual value seen,
    which bounds the gap to the global minimum over the RKHS. Failing to reach
    ``tol`` sets ``converged=False`` and a warning instead of raising.
    """
    if loss.kind != PINBALL:
        raise ConfigurationError("quantile_svm_train needs the pinball loss")
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    y = path.y
    n = len(y)
    if K is None:
        K = gram(kernel, path.x, path.x)
    tau, w = loss.tau, loss.scale / n
    step0 = 1.0 / (lam * float(np.trace(K)) / n + 1.0)
    alpha = np.zeros(n)
    fitted = np.zeros(n)
    avg = np.zeros(n)
    u = np.zeros(n)
    dual_step = 2.0 * lam / (w * w * max(float(np.trace(K)), 1e-300))
    best_alpha, best_obj = avg.copy(), _pinball_objective(loss, y, K, avg, lam)
    best_dual = _pinball_dual(loss, y, K, avg, lam)
    history = [(0, best_obj)]
    t = 0
    for t in range(1, max_iters + 1):
        r = y - fitted
        s = np.where(r > 0, -tau, np.where(r < 0, 1.0 - tau, 0.0))
        direction = 2.0 * lam * alpha + w * s
        eta = step0 / math.sqrt(t)
        alpha = alpha - eta * direction
        fitted = fitted - eta * (K @ direction)
        avg += (alpha - avg) / t
        if t & (t - 1) == 0:
            tail, tail_start = alpha.copy(), t
        else:
            tail += (alpha - tail) / (t - tail_start + 1)
        u = np.clip(u + dual_step * (w * y - (w * w / (2.0 * lam)) * (K @ u)), tau - 1.0, tau)
        if t % check_every == 0 or t == max_iters:
            for cand in (avg, tail, alpha, (w / (2.0 * lam)) * u):
                obj = _pinball_objective(loss, y, K, cand, lam)
                best_dual = max(best_dual, _pinball_dual(loss, y, K, cand, lam))
                if obj < best_obj:
                    best_obj, best_alpha = obj, cand.copy()
            history.append((t, best_obj))
            if best_obj - best_dual <= tol:
                break
    delta = max(0.0, best_obj - best_dual)
    converged = delta <= tol
    p = kernel_predictor(kernel, path.x, best_alpha, lam, loss.M, K=K)
    report = SolveReport(
        delta_achieved=delta, iterations=t, objective=best_obj, residual=delta,
        converged=converged,
        warning=None if converged else f"duality gap {delta:.3e} above tol {tol:.1e} after {t} iterations",
        history=history,
    )
    return p, report


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def certify_crerm(p: Predictor, report: SolveReport | None, loss: LossSpec, path: SamplePath,
                  probes: Sequence[Predictor]) -> float:
    """``max(0, Upsilon(p) + R(p_clipped) - min_q (Upsilon(q) + R(q)))`` over the probes."""
    if not probes:
        raise ConfigurationError("need at least one probe")
    lhs = regularized_risk(p, loss, path, clipped=True)
    rhs = min(regularized_risk(q, loss, path, clipped=False) for q in probes)
    return max(0.0, lhs - rhs)


def perturbed_probes(p: Predictor, count: int, size: float, seed: int = 0) -> list[Predictor]:
    """Kernel predictors whose coefficients are ``p``'s plus random perturbations
    of Euclidean length ``size``."""
    rng = np.random.default_rng(seed)
    K = gram(p.kernel, p.support_points, p.support_points)
    out = []
    for _ in range(count):
        v = rng.standard_normal(len(p.coefficients))
        v *= size / np.linalg.norm(v)
        out.append(kernel_predictor(p.kernel, p.support_points, p.coefficients + v, p.lam, p.M, K=K))
    return out


def predictor_json(p: Predictor, report: SolveReport) -> str:
    return json.dumps(p.to_dict(delta_achieved=report.delta_achieved), indent=2)
