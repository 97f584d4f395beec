"""Clipping, normalized least-squares and pinball losses, risks and the
variance-bound check.

Losses are scaled so that, for ``|y|, |t| <= M``, they are bounded by 1 and
1-Lipschitz in ``t``. The scale is stored on :class:`LossSpec`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .processes import MixingSpec, RegressionModel, SamplePath, _rng, sample_marginal

LEAST_SQUARES = "least_squares"
PINBALL = "pinball"


def default_scale(kind: str, M: float, tau: float = 0.5) -> float:
    if kind == LEAST_SQUARES:
        return min(1.0 / (2.0 * M) ** 2, 1.0 / (4.0 * M))
    return min(1.0, 1.0 / (2.0 * M * max(tau, 1.0 - tau)))


@dataclass(frozen=True)
class LossSpec:
    kind: str = LEAST_SQUARES
    M: float = 1.0
    tau: float = 0.5
    scale: float | None = None

    def __post_init__(self):
        kind = {"ls": LEAST_SQUARES, "leastsquares": LEAST_SQUARES}.get(
            self.kind.lower().replace("_", ""), self.kind.lower())
        if kind not in (LEAST_SQUARES, PINBALL):
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.M > 0:
            raise ConfigurationError("M must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.scale is None:
            object.__setattr__(self, "scale", default_scale(kind, self.M, self.tau))
        if not self.scale > 0:
            raise ConfigurationError("scale must be positive")

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of the scaled loss on ``[-M, M]``."""
        if self.kind == LEAST_SQUARES:
            return self.scale * 4.0 * self.M
        return self.scale * max(self.tau, 1.0 - self.tau)

    @property
    def sup(self) -> float:
        """Supremum of the scaled loss over ``[-M, M]^2``."""
        if self.kind == LEAST_SQUARES:
            return self.scale * (2.0 * self.M) ** 2
        return self.scale * 2.0 * self.M * max(self.tau, 1.0 - self.tau)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "M": self.M, "tau": self.tau, "scale": self.scale}


def clip(t, M: float):
    """Clip predictions to ``[-M, M]``; returns a float for scalar input."""
    if not M > 0:
        raise DomainError("clipping level M must be positive")
    out = np.clip(t, -M, M)
    return float(out) if np.ndim(out) == 0 else out


def _raw_loss(spec: LossSpec, y, t):
    r = np.asarray(y, dtype=float) - np.asarray(t, dtype=float)
    if spec.kind == LEAST_SQUARES:
        return r * r
    return np.where(r >= 0, spec.tau * r, (spec.tau - 1.0) * r)


def loss_value(spec: LossSpec, y, t):
    """Scaled loss ``scale * L(y, t)``; vectorized over ``y`` and ``t``."""
    if np.any(np.abs(np.asarray(y)) > spec.M):
        raise DomainError(f"labels must satisfy |y| <= M = {spec.M}")
    out = spec.scale * _raw_loss(spec, y, t)
    return float(out) if np.ndim(out) == 0 else out


def empirical_risk(spec: LossSpec, path: SamplePath, f, clipped: bool = False) -> float:
    """Mean loss of predictor ``f`` (a :class:`~mixrates.learners.Predictor` or a
    callable on covariate arrays) over the path."""
    if path.n == 0:
        raise DomainError("empirical risk of an empty path")
    pred = _evaluate(f, path.x, clipped, spec.M)
    return float(np.mean(loss_value(spec, path.y, pred)))


def _evaluate(f, x, clipped: bool, M: float) -> np.ndarray:
    if hasattr(f, "predict"):
        return f.predict(x, clipped=clipped)
    out = np.asarray(f(x), dtype=float)
    return np.clip(out, -M, M) if clipped else out


def excess_risk_mc(
    loss: LossSpec,
    mixing: MixingSpec,
    model: RegressionModel,
    f,
    m: int = 100_000,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of ``R(f_clipped) - R*`` from ``m`` stationary draws.

    Least squares uses ``scale * E(f_clipped(X) - f*(X))^2`` (no label noise in the
    estimate); pinball differences the losses of ``f_clipped`` and the conditional
    quantile on the same draws.
    """
    if m < 10_000:
        raise ConfigurationError("m must be >= 1e4")
    rng = _rng(seed)
    x = sample_marginal(mixing, model, m, rng)
    pred = _evaluate(f, x, True, loss.M)
    if loss.kind == LEAST_SQUARES:
        diff = pred - model.regression_function(x)
        return float(loss.scale * np.mean(diff * diff))
    y = _draw_labels(model, x, rng)
    return float(np.mean(loss_value(loss, y, pred) - loss_value(loss, y, model.quantile_function(x))))


def _draw_labels(model: RegressionModel, x, rng):
    u = rng.uniform(-model.noise, model.noise, size=len(x)) if model.noise > 0 else 0.0
    return np.clip(model.regression_function(x) + u, -model.M, model.M)


def pinball_conditional_excess(model: RegressionModel, delta):
    """Unscaled conditional pinball excess of predicting ``q* + delta`` under
    uniform noise on ``[-s, s]`` (``q*`` the conditional quantile)."""
    delta = np.asarray(delta, dtype=float)
    s, tau = model.noise, model.tau
    up, down = 2.0 * s * (1.0 - tau), 2.0 * s * tau
    inner = delta * delta / (4.0 * s) if s > 0 else np.zeros_like(delta)
    return np.where(
        delta > up, (1.0 - tau) * (delta - s * (1.0 - tau)),
        np.where(delta < -down, tau * (-delta - s * tau), inner),
    )


def variance_constant(loss: LossSpec, model: RegressionModel, grid: int = 20001) -> float:
    """A constant ``V >= 1`` for which the theta = 1 variance bound holds.

    Least squares: ``16 M^2 scale``. Pinball (uniform noise): ``scale * L^2 *
    max |d|^2 / e(d)`` over offsets ``|d| <= 2M``, with ``e`` the conditional excess
    and ``L = max(tau, 1 - tau)``.
    """
    if loss.kind == LEAST_SQUARES:
        return max(1.0, 16.0 * loss.M**2 * loss.scale)
    lip = max(loss.tau, 1.0 - loss.tau)
    d = np.linspace(-2.0 * loss.M, 2.0 * loss.M, grid)
    d = d[d != 0]
    e = pinball_conditional_excess(model, d)
    return max(1.0, float(loss.scale * lip * lip * np.max(d * d / e)))


@dataclass
class VarianceCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    stderr: np.ndarray
    violations: list[int] = field(default_factory=list)

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        return not self.violations


def variance_bound_check(
    loss: LossSpec,
    mixing: MixingSpec,
    model: RegressionModel,
    f_list,
    V: float,
    theta: float,
    m: int = 100_000,
    seed: int = 0,
) -> VarianceCheck:
    """Estimate ``E h^2`` and ``V (E h)^theta`` for ``h = L o f_clipped - L o f*``.

    A predictor is flagged only when the left side exceeds the right side by
    more than three (delta-method) standard errors.
    """
    if V < 1:
        raise ConfigurationError("V must be >= 1")
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError("theta must lie in [0, 1]")
    rng = _rng(seed)
    x = sample_marginal(mixing, model, m, rng)
    y = _draw_labels(model, x, rng)
    base = loss_value(loss, y, model.bayes_function(loss.kind)(x))
    lhs, rhs, se, bad = [], [], [], []
    for i, f in enumerate(f_list):
        h = loss_value(loss, y, _evaluate(f, x, True, loss.M)) - base
        mean_h = float(np.mean(h))
        pos = max(mean_h, 0.0)
        l, r = float(np.mean(h * h)), V * pos**theta
        # delta method for E h^2 - V (E h)^theta
        slope = V * theta * pos ** (theta - 1.0) if (theta < 1 and pos > 0) else (V if theta == 1 else 0.0)
        dev = h * h - slope * h
        s = float(np.std(dev, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
        lhs.append(l), rhs.append(r), se.append(s)
        if l - r > 3.0 * s:
            bad.append(i)
    return VarianceCheck(np.array(lhs), np.array(rhs), np.array(se), bad)
