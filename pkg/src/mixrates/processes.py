"""Stationary sample-path generators for the supported mixing classes.

Every sampler is a pure function of ``(spec, model, n, seed)``. The stationary
law of the covariates and the Bayes function of the labels are known in closed
form, so excess risks of learned predictors can be computed exactly or by
low-variance Monte Carlo.

Covariates live in ``[-1, 1]^d`` and labels are ``y = f*(x) + u`` with ``u``
uniform on ``[-s, s]``; choosing ``amplitude + s <= M`` makes ``|y| <= M`` hold
surely.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate
from scipy.signal import lfilter

from .errors import ConfigurationError

_MASK64 = (1 << 64) - 1


class MixingClass(str, Enum):
    IID = "IID"
    GEO_ALPHA = "GeoAlpha"
    RESTRICTED_GEO_ALPHA = "RestrictedGeoAlpha"
    GEO_ALPHA_MARKOV = "GeoAlphaMarkov"
    PHI = "Phi"
    GEO_C = "GeoC"
    POLY_C = "PolyC"

    @classmethod
    def parse(cls, value: "str | MixingClass") -> "MixingClass":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        raise ConfigurationError(f"unknown mixing class {value!r}")


MARKOV_CLASSES = frozenset(
    {MixingClass.GEO_ALPHA_MARKOV, MixingClass.PHI, MixingClass.RESTRICTED_GEO_ALPHA}
)
MAP_CLASSES = frozenset({MixingClass.GEO_C, MixingClass.POLY_C})
CHAOTIC_MAPS = ("logistic4", "tent")


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix64(master_seed: int, index: int) -> int:
    """Derive the seed of work item ``index`` from a master seed (splitmix64)."""
    return _splitmix64(_splitmix64(int(master_seed) & _MASK64) ^ (int(index) & _MASK64))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & _MASK64)


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


def stationary_distribution(P, tol: float = 1e-12) -> np.ndarray:
    """Stationary law of an irreducible aperiodic chain by power iteration.

    The iteration runs on ``P, P^2, P^4, ...`` so slowly mixing chains still
    converge in a bounded number of steps; it stops once the residual
    ``||pi P - pi||_1`` drops below ``tol``.
    """
    P = validate_transition_matrix(P)
    k = P.shape[0]
    pi = np.full(k, 1.0 / k)
    Q = P.copy()
    for _ in range(200):
        pi = pi @ Q
        pi /= pi.sum()
        if np.abs(pi @ P - pi).sum() < tol:
            return pi
        Q = Q @ Q
    raise ConfigurationError("power iteration for the stationary law did not converge")


def second_eigenvalue_modulus(P) -> float:
    eig = np.sort(np.abs(np.linalg.eigvals(np.asarray(P, dtype=float))))[::-1]
    return float(eig[1])


def validate_transition_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
        raise ConfigurationError("transition matrix must be square with k >= 2 states")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise ConfigurationError("transition matrix has negative or non-finite entries")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        raise ConfigurationError("transition matrix rows must sum to 1 (within 1e-12)")
    if second_eigenvalue_modulus(P) > 1.0 - 1e-10:
        raise ConfigurationError("chain is reducible or periodic (|lambda_2| = 1)")
    return P


@dataclass(frozen=True)
class MixingSpec:
    """Mixing class, decay parameters ``c * exp(-b n^gamma)`` (or ``c n^-gamma``
    for ``PolyC``) and the class-specific process parameters.

    ``process_params`` keys: ``a`` (AR(1) coefficient, GeoAlpha), ``P``
    (transition matrix, Markov-backed classes), ``map``/``dither``/``u0``
    (C-mixing maps), ``c_b``/``c_c`` (RestrictedGeoAlpha constants),
    ``phi_sequence`` or ``phi_c``/``phi_b`` (Phi).
    """

    mixing_class: MixingClass
    b: float = 1.0
    c: float = 0.0
    gamma: float = 1.0
    process_params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mixing_class", MixingClass.parse(self.mixing_class))
        object.__setattr__(self, "process_params", dict(self.process_params))
        if not (self.b > 0):
            raise ConfigurationError("b must be positive")
        if not (self.c >= 0):
            raise ConfigurationError("c must be nonnegative")
        if not (self.gamma > 0):
            raise ConfigurationError("gamma must be positive")
        if self.mixing_class is MixingClass.POLY_C and not self.gamma > 2:
            raise ConfigurationError("PolyC requires gamma > 2")
        pp = self.process_params
        if self.mixing_class is MixingClass.GEO_ALPHA:
            a = float(pp.setdefault("a", 0.5))
            if not -1.0 < a < 1.0:
                raise ConfigurationError("AR(1) coefficient must satisfy |a| < 1")
        elif self.mixing_class in MARKOV_CLASSES:
            if "P" not in pp:
                raise ConfigurationError(f"{self.mixing_class.value} requires a transition matrix P")
            pp["P"] = validate_transition_matrix(pp["P"]).tolist()
        elif self.mixing_class in MAP_CLASSES:
            name = pp.setdefault("map", "logistic4")
            if name not in CHAOTIC_MAPS:
                raise ConfigurationError(f"unknown map {name!r}; expected one of {CHAOTIC_MAPS}")
            if float(pp.setdefault("dither", 1e-12)) < 0:
                raise ConfigurationError("dither must be nonnegative")

    @property
    def sampler_kind(self) -> str:
        if self.mixing_class is MixingClass.IID:
            return "iid"
        if self.mixing_class is MixingClass.GEO_ALPHA:
            return "ar1"
        if self.mixing_class in MARKOV_CLASSES:
            return "markov"
        return "cmixing_map"

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.asarray(self.process_params["P"], dtype=float)

    def to_dict(self) -> dict:
        return {
            "class": self.mixing_class.value,
            "b": self.b,
            "c": self.c,
            "gamma": self.gamma,
            "process_params": _jsonable(self.process_params),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MixingSpec":
        name = d.get("class", d.get("mixing_class"))
        if name is None:
            raise ConfigurationError("mixing spec needs a 'class' entry")
        return cls(
            MixingClass.parse(name),
            b=float(d.get("b", 1.0)),
            c=float(d.get("c", 0.0)),
            gamma=float(d.get("gamma", 1.0)),
            process_params=dict(d.get("process_params", {})),
        )


TARGETS = ("sine", "piecewise_linear", "bump", "zero")


def _target_shape(name: str, frequency: float) -> Callable[[np.ndarray], np.ndarray]:
    if name == "sine":
        return lambda t: np.sin(np.pi * frequency * t)
    if name == "piecewise_linear":
        return lambda t: 1.0 - 2.0 * np.abs(t)
    if name == "bump":
        def bump(t):
            r2 = (2.0 * t) ** 2
            out = np.zeros_like(t, dtype=float)
            inside = r2 < 1.0
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
            return out
        return bump
    if name == "zero":
        return lambda t: np.zeros_like(t, dtype=float)
    raise ConfigurationError(f"unknown target {name!r}; expected one of {TARGETS}")


@dataclass(frozen=True)
class RegressionModel:
    """Synthetic regression law: ``y = amplitude * g(x_1) + u``, ``u ~ U[-noise, noise]``.

    All targets have ``sup |g| = 1`` and act on the first covariate.
    """

    target: str = "sine"
    amplitude: float = 0.6
    noise: float = 0.4
    M: float = 1.0
    tau: float = 0.5
    d: int = 1
    frequency: float = 1.0

    def __post_init__(self):
        _target_shape(self.target, self.frequency)
        if self.amplitude < 0 or self.noise < 0:
            raise ConfigurationError("amplitude and noise half-width must be nonnegative")
        if not self.M > 0:
            raise ConfigurationError("label bound M must be positive")
        if self.amplitude + self.noise > self.M:
            raise ConfigurationError(
                f"amplitude + noise = {self.amplitude + self.noise} exceeds M = {self.M}"
            )
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError("quantile level tau must lie in (0, 1)")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigurationError("d must be a positive integer")

    def regression_function(self, x: np.ndarray) -> np.ndarray:
        """Conditional mean ``E(Y | x)``, the least-squares Bayes function."""
        x = np.asarray(x, dtype=float)
        t = x[:, 0] if x.ndim == 2 else x
        return self.amplitude * _target_shape(self.target, self.frequency)(t)

    def quantile_function(self, x: np.ndarray) -> np.ndarray:
        """Conditional ``tau``-quantile, the pinball Bayes function."""
        return self.regression_function(x) + self.noise * (2.0 * self.tau - 1.0)

    def bayes_function(self, kind: str = "least_squares") -> Callable[[np.ndarray], np.ndarray]:
        return self.quantile_function if kind == "pinball" else self.regression_function

    def bayes_risk(self, kind: str = "least_squares") -> float:
        """Unscaled Bayes risk: ``s^2/3`` for least squares, ``s tau (1 - tau)`` for pinball."""
        if kind == "pinball":
            return self.noise * self.tau * (1.0 - self.tau)
        return self.noise**2 / 3.0

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "amplitude": self.amplitude,
            "noise": self.noise,
            "M": self.M,
            "tau": self.tau,
            "d": self.d,
            "frequency": self.frequency,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RegressionModel":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "noise_halfwidth" in d:
            known["noise"] = d["noise_halfwidth"]
        return cls(**known)


@dataclass(frozen=True)
class BayesInfo:
    tag: str
    params: dict
    risk: float


@dataclass(frozen=True)
class SamplePath:
    x: np.ndarray
    y: np.ndarray
    M: float
    seed: int
    bayes: BayesInfo
    spec: MixingSpec | None = None
    model: RegressionModel | None = None

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path) -> Path:
        """Write ``x1..xd,y`` rows plus a JSON sidecar next to ``path``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.d)] + ["y"])
            for xi, yi in zip(self.x, self.y):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
        meta = {
            "class": self.spec.mixing_class.value if self.spec else None,
            "params": self.spec.to_dict() if self.spec else {},
            "model": self.model.to_dict() if self.model else {},
            "seed": int(self.seed),
            "M": self.M,
            "bayes_tag": self.bayes.tag,
            "bayes_params": self.bayes.params,
            "bayes_risk": self.bayes.risk,
        }
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return sidecar

    @classmethod
    def from_csv(cls, path, M: float | None = None) -> "SamplePath":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1] != "y":
            raise ConfigurationError(f"{path}: expected header x1,...,xd,y")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        if data.size == 0:
            raise ConfigurationError(f"{path}: no observations")
        x, y = data[:, :-1], data[:, -1]
        sidecar = path.with_suffix(".json")
        spec = model = None
        seed, bayes = 0, BayesInfo("unknown", {}, float("nan"))
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            seed = int(meta.get("seed", 0))
            bayes = BayesInfo(meta.get("bayes_tag", "unknown"), meta.get("bayes_params", {}),
                              float(meta.get("bayes_risk", float("nan"))))
            if meta.get("params"):
                spec = MixingSpec.from_dict(meta["params"])
            if meta.get("model"):
                model = RegressionModel.from_dict(meta["model"])
            if M is None:
                M = float(meta["M"])
        if M is None:
            M = float(np.max(np.abs(y)))
        if np.any(np.abs(y) > M):
            raise ConfigurationError(f"{path}: labels exceed the bound M = {M}")
        return cls(x=x, y=y, M=float(M), seed=seed, bayes=bayes, spec=spec, model=model)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Latent covariate generators, batched over independent replications
# ---------------------------------------------------------------------------


def _ar1_batch(a: float, n: int, shape: tuple, rng) -> np.ndarray:
    xi = rng.standard_normal(shape + (n,))
    xi[..., 0] /= math.sqrt(1.0 - a * a)
    w = lfilter([1.0], [1.0, -a], xi, axis=-1)
    return np.tanh(w)


def _markov_batch(P: np.ndarray, n: int, shape: tuple, rng) -> np.ndarray:
    k = P.shape[0]
    pi = stationary_distribution(P)
    cum = np.cumsum(P, axis=1)
    cum_pi = np.cumsum(pi)
    u = rng.random((n,) + shape)
    states = np.empty((n,) + shape, dtype=np.intp)
    states[0] = np.minimum(np.searchsorted(cum_pi, u[0], side="right"), k - 1)
    for t in range(1, n):
        rows = cum[states[t - 1]]
        states[t] = np.minimum((u[t][..., None] >= rows).sum(axis=-1), k - 1)
    x = (2.0 * states - k + 1.0) / (k - 1.0)
    return np.moveaxis(x, 0, -1)


def _map_step(name: str, u: np.ndarray) -> np.ndarray:
    if name == "logistic4":
        return 4.0 * u * (1.0 - u)
    return np.where(u < 0.5, 2.0 * u, 2.0 * (1.0 - u))


def _map_batch(name: str, dither: float, u0, n: int, shape: tuple, rng) -> np.ndarray:
    if u0 is not None:
        u = np.full(shape, float(u0))
    elif name == "logistic4":
        u = np.sin(0.5 * np.pi * rng.random(shape)) ** 2
    else:
        u = rng.random(shape)
    out = np.empty(shape + (n,))
    out[..., 0] = u
    for t in range(1, n):
        u = _map_step(name, u)
        if dither > 0:
            u = u + dither * rng.random(shape)
            u = np.where(u > 1.0, u - 1.0, u)
        out[..., t] = u
    return 2.0 * out - 1.0


def covariate_paths(spec: MixingSpec, n: int, d: int, reps: int, rng) -> np.ndarray:
    """Covariates of ``reps`` independent stationary paths, shape ``(reps, n, d)``.

    The ``d`` coordinates are independent copies of the one-dimensional process.
    """
    kind = spec.sampler_kind
    shape = (reps, d)
    if kind == "iid":
        return rng.uniform(-1.0, 1.0, size=(reps, n, d))
    if kind == "ar1":
        lat = _ar1_batch(float(spec.process_params["a"]), n, shape, rng)
    elif kind == "markov":
        lat = _markov_batch(spec.transition_matrix, n, shape, rng)
    else:
        pp = spec.process_params
        lat = _map_batch(pp["map"], float(pp["dither"]), pp.get("u0"), n, shape, rng)
    return np.moveaxis(lat, -1, 1)


def sample_marginal(spec: MixingSpec, model: RegressionModel, m: int, rng) -> np.ndarray:
    """``m`` i.i.d. draws from the stationary covariate marginal, shape ``(m, d)``."""
    kind = spec.sampler_kind
    d = model.d
    if kind == "iid":
        return rng.uniform(-1.0, 1.0, size=(m, d))
    if kind == "ar1":
        a = float(spec.process_params["a"])
        return np.tanh(rng.standard_normal((m, d)) / math.sqrt(1.0 - a * a))
    if kind == "markov":
        P = spec.transition_matrix
        k = P.shape[0]
        states = rng.choice(k, size=(m, d), p=stationary_distribution(P))
        return (2.0 * states - k + 1.0) / (k - 1.0)
    if spec.process_params["map"] == "logistic4":
        return 2.0 * np.sin(0.5 * np.pi * rng.random((m, d))) ** 2 - 1.0
    return 2.0 * rng.random((m, d)) - 1.0


def marginal_expectation(spec: MixingSpec, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """``E g(X_1)`` for a scalar covariate under the stationary marginal, by
    exact summation (Markov) or adaptive quadrature (continuous marginals)."""
    kind = spec.sampler_kind
    f = lambda t: float(np.asarray(g(np.array([t], dtype=float)))[0])
    if kind == "markov":
        P = spec.transition_matrix
        k = P.shape[0]
        pts = (2.0 * np.arange(k) - k + 1.0) / (k - 1.0)
        return float(stationary_distribution(P) @ np.asarray(g(pts), dtype=float))
    if kind == "iid" or (kind == "cmixing_map" and spec.process_params["map"] == "tent"):
        return integrate.quad(f, -1.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-12)[0] / 2.0
    if kind == "ar1":
        a = float(spec.process_params["a"])
        s = 1.0 / math.sqrt(1.0 - a * a)
        dens = lambda w: math.exp(-0.5 * (w / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return integrate.quad(lambda w: f(math.tanh(w)) * dens(w), -np.inf, np.inf,
                              limit=200, epsabs=1e-13, epsrel=1e-12)[0]
    # arcsine law of 2u - 1 with u = sin^2(pi v / 2), v uniform
    return integrate.quad(lambda v: f(-math.cos(math.pi * v)), 0.0, 1.0,
                          limit=200, epsabs=1e-13, epsrel=1e-12)[0]


# ---------------------------------------------------------------------------
# Public samplers
# ---------------------------------------------------------------------------


def _labels(model: RegressionModel, x: np.ndarray, rng) -> np.ndarray:
    u = rng.uniform(-model.noise, model.noise, size=x.shape[:-1]) if model.noise > 0 else 0.0
    y = model.regression_function(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1]) + u
    # amplitude + noise <= M, so this only removes rounding
    return np.clip(y, -model.M, model.M)


def _build(spec, model, n, seed, expected_kind) -> SamplePath:
    if spec.sampler_kind != expected_kind:
        raise ConfigurationError(
            f"{spec.mixing_class.value} is not sampled by the {expected_kind} sampler"
        )
    if int(n) != n or n < 1:
        raise ConfigurationError("n must be a positive integer")
    rng = _rng(seed)
    x = covariate_paths(spec, int(n), model.d, 1, rng)[0]
    y = _labels(model, x, rng)
    bayes = BayesInfo(
        tag=model.target,
        params={**model.to_dict(), "pinball_bayes_risk": model.bayes_risk("pinball")},
        risk=model.bayes_risk("least_squares"),
    )
    return SamplePath(x=x, y=y, M=model.M, seed=int(seed), bayes=bayes, spec=spec, model=model)


def sample_iid(spec: MixingSpec, model: RegressionModel, n: int, seed: int) -> SamplePath:
    return _build(spec, model, n, seed, "iid")


def sample_ar1(spec: MixingSpec, model: RegressionModel, n: int, seed: int) -> SamplePath:
    """Stationary AR(1) latent ``W`` squashed to covariates ``X = tanh(W)``."""
    return _build(spec, model, n, seed, "ar1")


def sample_markov(spec: MixingSpec, model: RegressionModel, n: int, seed: int) -> SamplePath:
    """Finite-state chain started from its stationary law; state ``j`` of ``k``
    is embedded at ``(2j - k + 1)/(k - 1)``."""
    return _build(spec, model, n, seed, "markov")


def sample_cmixing_map(spec: MixingSpec, model: RegressionModel, n: int, seed: int) -> SamplePath:
    """Dithered logistic (r = 4) or tent map started from its invariant density."""
    return _build(spec, model, n, seed, "cmixing_map")


_SAMPLERS = {
    "iid": sample_iid,
    "ar1": sample_ar1,
    "markov": sample_markov,
    "cmixing_map": sample_cmixing_map,
}


def sample(spec: MixingSpec, model: RegressionModel, n: int, seed: int) -> SamplePath:
    return _SAMPLERS[spec.sampler_kind](spec, model, n, seed)


def sample_batch(spec: MixingSpec, model: RegressionModel, n: int, reps: int, seed: int):
    """``reps`` independent paths at once: ``x`` of shape ``(reps, n, d)`` and ``y``
    of shape ``(reps, n)``. Used by the Monte-Carlo tail checks."""
    rng = _rng(seed)
    x = covariate_paths(spec, int(n), model.d, int(reps), rng)
    return x, _labels(model, x, rng)
