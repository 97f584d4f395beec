"""Effective sample sizes, Bernstein constants per mixing class, exact mixing
coefficients of finite chains and a Monte-Carlo check of the tail bound

    P(n^-1 sum h(Z_i) >= eps) <= C exp(-eps^2 n_eff / (c_sigma sigma^2 + c_B eps B)).

Logarithms are natural throughout.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, DomainError
from .processes import (
    MixingClass,
    MixingSpec,
    RegressionModel,
    marginal_expectation,
    mix64,
    sample_batch,
    stationary_distribution,
    validate_transition_matrix,
    second_eigenvalue_modulus,
)

_LOG_CLASSES = frozenset(
    {MixingClass.RESTRICTED_GEO_ALPHA, MixingClass.GEO_ALPHA_MARKOV, MixingClass.GEO_C}
)


def effective_observations(mixing_class, gamma: float, n: float) -> float:
    """Effective number of observations ``n_eff(n)`` of a mixing class."""
    cls = MixingClass.parse(mixing_class)
    if cls in _LOG_CLASSES and n < 3:
        raise DomainError(f"{cls.value} needs n >= 3, got {n}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if cls in (MixingClass.IID, MixingClass.PHI):
        return float(n)
    if cls is MixingClass.GEO_ALPHA:
        return float(n) ** (gamma / (gamma + 1.0))
    if cls is MixingClass.RESTRICTED_GEO_ALPHA:
        return n / math.log(n) ** 2
    if cls is MixingClass.GEO_ALPHA_MARKOV:
        return n / math.log(n)
    if cls is MixingClass.GEO_C:
        return n / math.log(n) ** (2.0 / gamma)
    if not gamma > 2:
        raise DomainError("PolyC requires gamma > 2")
    return float(n) ** ((gamma - 2.0) / (gamma + 1.0))


@dataclass(frozen=True)
class HBounds:
    """Bounds on the centred test function ``h``: ``||h||_inf <= B``,
    ``E h^2 <= sigma2``, semi-norm ``||h|| <= A`` (C-mixing classes) and the
    free exponent of Davydov's covariance inequality."""

    B: float
    sigma2: float
    A: float = 0.0
    epsilon_dav: float = 1.0

    def __post_init__(self):
        if not self.B > 0:
            raise ConfigurationError("B must be positive")
        if self.sigma2 < 0:
            raise ConfigurationError("sigma2 must be nonnegative")
        if self.sigma2 > self.B**2 * (1 + 1e-12):
            raise ConfigurationError("sigma2 cannot exceed B^2")
        if self.A < 0:
            raise ConfigurationError("A must be nonnegative")
        if not self.epsilon_dav > 0:
            raise ConfigurationError("epsilon_dav must be positive")


@dataclass(frozen=True)
class BernsteinConstants:
    C: float
    c_sigma: float
    c_B: float
    n0: float
    mixing_class: MixingClass
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.C > 0 and self.c_sigma > 0 and self.c_B > 0 and self.n0 >= 1):
            raise DomainError(f"invalid Bernstein constants {self}")

    def n_eff(self, n: float) -> float:
        return effective_observations(self.mixing_class, self.gamma, n)

    def to_dict(self) -> dict:
        return {
            "class": self.mixing_class.value,
            "C": self.C,
            "c_sigma": self.c_sigma,
            "c_B": self.c_B,
            "n0": self.n0 if math.isfinite(self.n0) else "inf",
            "gamma": self.gamma,
        }


def _count(v: float) -> float:
    """Smallest admissible integer sample size ``>= v`` (``inf`` on overflow)."""
    if not math.isfinite(v):
        return math.inf
    return max(1, math.ceil(v - 1e-12))


def _safe_exp(v: float) -> float:
    return math.exp(v) if v < 709.0 else math.inf


def davydov_constant(b: float, c: float, B: float, epsilon_dav: float) -> float:
    """``16 c^(e/(2+e)) B^(2e/(2+e)) sum_{i>=1} exp(-b e i/(2+e))``, series in closed form."""
    r = epsilon_dav / (2.0 + epsilon_dav)
    q = math.exp(-b * r)
    return 16.0 * c**r * B ** (2.0 * r) * q / (1.0 - q)


def _cmixing_m0(c: float, A: float, B: float, gamma: float) -> int:
    """``min{m >= 3 : m^2 >= 808 c (3A + B)/B and m/(log m)^(2/gamma) >= 4}``."""
    m = max(3, math.ceil(math.sqrt(808.0 * c * (3.0 * A + B) / B) - 1e-12))
    g = lambda t: t / math.log(t) ** (2.0 / gamma) >= 4.0
    if g(m):
        return m
    # m/(log m)^(2/gamma) decreases up to e^(2/gamma) and increases afterwards
    lo = max(m, math.floor(math.exp(2.0 / gamma)))
    hi = max(lo + 1, 4)
    while not g(hi):
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if g(mid):
            hi = mid
        else:
            lo = mid
    return hi


def phi_mixing_sum(spec: MixingSpec) -> float:
    """``c_phi = sum_{k>=1} sqrt(phi(k))`` from a supplied sequence, a geometric
    majorant ``phi(k) <= phi_c exp(-phi_b k)``, or the exact coefficients of the
    spec's finite chain."""
    pp = spec.process_params
    if "phi_sequence" in pp:
        terms = np.sqrt(np.asarray(pp["phi_sequence"], dtype=float))
        if terms.size == 0 or np.any(~np.isfinite(terms)):
            raise DomainError("phi sequence must be a nonempty finite list")
        total = float(terms.sum())
        if terms[-1] > 1e-12 * max(total, 1e-300):
            raise DomainError("sum of sqrt(phi(k)) not shown to converge: last term above 1e-12 relative")
        return total
    if "phi_c" in pp or "phi_b" in pp:
        c, b = float(pp.get("phi_c", spec.c)), float(pp.get("phi_b", spec.b))
        if b <= 0:
            raise DomainError("geometric phi majorant needs a positive decay rate")
        q = math.exp(-b / 2.0)
        return math.sqrt(c) * q / (1.0 - q)
    if "P" in pp:
        P = spec.transition_matrix
        total, k = 0.0, 1
        while True:
            term = math.sqrt(markov_phi_coefficient(P, k))
            total += term
            if term <= 1e-12 * max(total, 1e-300) or k > 100000:
                break
            k += 1
        return total
    raise ConfigurationError("Phi class needs phi_sequence, phi_c/phi_b, or a transition matrix P")


def bernstein_constants(spec: MixingSpec, h: HBounds) -> BernsteinConstants:
    """Constants ``(C, c_sigma, c_B, n0)`` of the generalized Bernstein inequality."""
    cls, b, c, g = spec.mixing_class, spec.b, spec.c, spec.gamma
    B, sigma2 = h.B, h.sigma2
    if cls is MixingClass.IID:
        return BernsteinConstants(1.0, 2.0, 2.0 / 3.0, 1, cls, g)
    if cls is MixingClass.GEO_ALPHA:
        c_sigma = (8.0 ** (2.0 + g) / b) ** (1.0 / (1.0 + g))
        n0 = max(b / 8.0, 2.0 ** (2.0 + 5.0 / g) * b ** (-1.0 / g))
        return BernsteinConstants(1.0 + 4.0 * math.exp(-2.0) * c, c_sigma, c_sigma / 3.0,
                                  _count(n0), cls, g)
    if cls is MixingClass.RESTRICTED_GEO_ALPHA:
        if g < 1:
            raise DomainError("restricted geometric alpha-mixing requires gamma >= 1")
        if sigma2 < 1e-12:
            raise DomainError("n0 diverges as sigma -> 0; sigma2 must be >= 1e-12")
        pp = spec.process_params
        if "c_b" not in pp or "c_c" not in pp:
            raise ConfigurationError("RestrictedGeoAlpha needs the constants c_b and c_c")
        c_b, c_c = float(pp["c_b"]), float(pp["c_c"])
        r = h.epsilon_dav / (2.0 + h.epsilon_dav)
        c_eps = davydov_constant(b, c, B, h.epsilon_dav)
        sigma = math.sqrt(sigma2)
        n0 = max(3.0, _safe_exp(math.sqrt(c_eps) * sigma ** (-r)), B**2 / sigma2)
        return BernsteinConstants(c_c, 3.0 / c_b, 1.0 / c_b, _count(n0), cls, g)
    if cls is MixingClass.GEO_ALPHA_MARKOV:
        if sigma2 < 1e-12:
            raise DomainError("n0 diverges as sigma -> 0; sigma2 must be >= 1e-12")
        r = h.epsilon_dav / (2.0 + h.epsilon_dav)
        c_eps = davydov_constant(b, c, B, h.epsilon_dav)
        n0 = max(3.0, _safe_exp(c_eps * math.sqrt(sigma2) ** (-2.0 * r)))
        return BernsteinConstants(1.0, 2.0, 1.0, _count(n0), cls, g)
    if cls is MixingClass.PHI:
        c_phi = phi_mixing_sum(spec)
        if not c_phi > 0:
            raise DomainError("c_phi must be positive (phi-coefficients vanish identically)")
        return BernsteinConstants(1.0, 32.0 * c_phi, 8.0 * c_phi, 1, cls, g)
    if cls is MixingClass.GEO_C:
        n0 = max(_cmixing_m0(c, h.A, B, g), math.exp(3.0 / b))
        return BernsteinConstants(2.0, 8.0, 8.0 / 3.0, _count(n0), cls, g)
    n0 = max(math.sqrt(808.0 * c * (3.0 * h.A + B) / B), 4.0 ** ((g + 1.0) / (g - 2.0)))
    return BernsteinConstants(2.0, 8.0, 8.0 / 3.0, _count(n0), cls, g)


def _check_n(k: BernsteinConstants, n: float):
    if n < k.n0:
        raise DomainError(f"n = {n} is below n0 = {k.n0} of the {k.mixing_class.value} class")


def bernstein_bound(k: BernsteinConstants, h: HBounds, n: int, eps: float) -> float:
    """Right-hand side of the tail bound. Not clamped to 1."""
    _check_n(k, n)
    if not eps > 0:
        raise DomainError("eps must be positive")
    n_eff = k.n_eff(n)
    return k.C * math.exp(-eps * eps * n_eff / (k.c_sigma * h.sigma2 + k.c_B * eps * h.B))


def bernstein_bound_tau_form(k: BernsteinConstants, h: HBounds, n: int, tau: float) -> float:
    """Threshold ``t`` with ``P(n^-1 sum h >= t) <= C e^-tau``."""
    _check_n(k, n)
    if not tau > 0:
        raise DomainError("tau must be positive")
    n_eff = k.n_eff(n)
    return math.sqrt(tau * k.c_sigma * h.sigma2 / n_eff) + k.c_B * h.B * tau / n_eff


def bernstein_epsilon_for_tau(k: BernsteinConstants, h: HBounds, n: int, tau: float) -> float:
    """Exact inverse of :func:`bernstein_bound` in ``eps``: the ``eps`` at which
    the bound equals ``C e^-tau``. Never larger than the tau-form threshold."""
    _check_n(k, n)
    if not tau > 0:
        raise DomainError("tau must be positive")
    n_eff = k.n_eff(n)
    lin = tau * k.c_B * h.B
    return (lin + math.sqrt(lin * lin + 4.0 * n_eff * tau * k.c_sigma * h.sigma2)) / (2.0 * n_eff)


# ---------------------------------------------------------------------------
# Finite-state chains
# ---------------------------------------------------------------------------


def _deviation_matrix(P, n: int) -> tuple[np.ndarray, np.ndarray]:
    P = validate_transition_matrix(P)
    if n < 1:
        raise ConfigurationError("gap n must be >= 1")
    pi = stationary_distribution(P)
    return P - pi[None, :], pi


def markov_beta_coefficient(P, n: int) -> float:
    """``beta(n) = sum_x pi(x) TV(P^n(x, .), pi)`` from exact matrix powers.

    Uses ``P^n - 1 pi = (P - 1 pi)^n``, which keeps full relative precision
    where forming ``P^n`` first would cancel down to rounding noise.
    """
    D, pi = _deviation_matrix(P, n)
    Dn = np.linalg.matrix_power(D, int(n))
    return float(pi @ (0.5 * np.abs(Dn).sum(axis=1)))


def markov_log_beta_coefficient(P, n: int) -> float:
    """``log beta(n)`` without underflow, via powers of ``(P - 1 pi) / |lambda_2|``."""
    D, pi = _deviation_matrix(P, n)
    lam = second_eigenvalue_modulus(P)
    if lam < 1e-300:
        return float(np.log(markov_beta_coefficient(P, n)))
    Dn = np.linalg.matrix_power(D / lam, int(n))
    return float(n * math.log(lam) + np.log(pi @ (0.5 * np.abs(Dn).sum(axis=1))))


def markov_phi_coefficient(P, n: int) -> float:
    """``phi(n) = max_x TV(P^n(x, .), pi)``; dominates ``beta(n)``."""
    P = validate_transition_matrix(P)
    if n < 1:
        raise ConfigurationError("gap n must be >= 1")
    pi = stationary_distribution(P)
    Pn = np.linalg.matrix_power(P, int(n))
    return float(np.max(0.5 * np.abs(Pn - pi[None, :]).sum(axis=1)))


def markov_geometric_majorant(P, horizon: int = 200) -> tuple[float, float]:
    """``(b, c)`` with ``beta(n) <= c exp(-b n)`` for ``n <= horizon``, using
    ``b = -log |lambda_2|``."""
    P = validate_transition_matrix(P)
    lam = second_eigenvalue_modulus(P)
    if lam < 1e-12:
        return 1.0, 0.0
    b = -math.log(lam)
    c = max(markov_beta_coefficient(P, m) / lam**m for m in range(1, horizon + 1))
    return b, c


# ---------------------------------------------------------------------------
# Monte-Carlo verification
# ---------------------------------------------------------------------------


def wilson_interval(successes: int, trials: int, level: float = 0.999) -> tuple[float, float]:
    """One-sided Wilson score limits ``(lower, upper)``, each at confidence ``level``."""
    if trials <= 0:
        raise ConfigurationError("trials must be positive")
    z = float(norm.ppf(level))
    p = successes / trials
    z2n = z * z / trials
    centre = p + z2n / 2.0
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    denom = 1.0 + z2n
    return max(0.0, (centre - half) / denom), min(1.0, (centre + half) / denom)


@dataclass(frozen=True)
class TestFunction:
    """A built-in centred test function with its exact bounds."""

    name: str
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mean: float
    B: float
    sigma2: float


def builtin_test_function(spec: MixingSpec, model: RegressionModel, h_def: str) -> TestFunction:
    """``"x"``: ``h = x_1 - E x_1``; ``"y2"``: ``h = y^2 - E y^2``."""
    if h_def == "x":
        m1 = marginal_expectation(spec, lambda t: t)
        m2 = marginal_expectation(spec, lambda t: t * t)
        return TestFunction("x", lambda x, y: x[..., 0] - m1, m1,
                            B=max(1.0 - m1, 1.0 + m1), sigma2=max(m2 - m1 * m1, 0.0))
    if h_def == "y2":
        f = lambda t: model.regression_function(np.asarray(t).reshape(-1, 1))
        f2 = marginal_expectation(spec, lambda t: f(t) ** 2)
        f4 = marginal_expectation(spec, lambda t: f(t) ** 4)
        s = model.noise
        u2, u4 = s * s / 3.0, s**4 / 5.0
        ey2 = f2 + u2
        ey4 = f4 + 6.0 * f2 * u2 + u4
        top = (model.amplitude + s) ** 2
        return TestFunction("y2", lambda x, y: y * y - ey2, ey2,
                            B=max(top - ey2, ey2), sigma2=max(ey4 - ey2 * ey2, 0.0))
    raise ConfigurationError(f"unknown test function {h_def!r}; built-ins are 'x' and 'y2'")


@dataclass
class BernsteinTable:
    eps: np.ndarray
    empirical_tail: np.ndarray
    wilson_upper: np.ndarray
    bound: np.ndarray
    constants: BernsteinConstants
    h: HBounds
    n: int
    n_eff: float
    reps: int
    level: float
    meta: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.eps.tolist(), self.empirical_tail.tolist(),
                        self.wilson_upper.tolist(), self.bound.tolist()))

    def violations(self) -> list[int]:
        """Grid indices where the Wilson upper limit exceeds a non-vacuous bound."""
        return [i for i, (_, _, w, b) in enumerate(self.rows()) if b <= 1.0 and w > b]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "empirical_tail", "wilson_upper", "bound"])
        for row in self.rows():
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def eps_grid_for_bounds(k: BernsteinConstants, h: HBounds, n: int, targets: Sequence[float]) -> np.ndarray:
    """Deviation levels at which the bound takes the given values (each < C)."""
    out = []
    for t in targets:
        if not 0 < t < k.C:
            raise ConfigurationError(f"target bound {t} must lie in (0, C = {k.C})")
        out.append(bernstein_epsilon_for_tau(k, h, n, math.log(k.C / t)))
    return np.asarray(out)


def _chunk_means(spec, model, hf, n, size, seed):
    x, y = sample_batch(spec, model, n, size, seed)
    return hf(x, y).mean(axis=1)


def verify_bernstein_mc(
    spec: MixingSpec,
    model: RegressionModel,
    h_def: str,
    n: int,
    eps_grid: Sequence[float],
    reps: int,
    seed: int,
    *,
    A: float = 0.0,
    epsilon_dav: float = 1.0,
    level: float = 0.999,
    workers: int = 1,
    chunk: int = 10_000,
) -> BernsteinTable:
    """Empirical tail ``P(n^-1 sum h >= eps)`` over ``reps`` independent paths,
    its Wilson upper limit and the theoretical bound, per grid point.

    Replications are split into fixed-size chunks with seeds ``mix64(seed, j)``,
    so the result does not depend on ``workers``.
    """
    eps_grid = np.asarray(list(eps_grid), dtype=float)
    if eps_grid.size == 0:
        raise ConfigurationError("eps grid is empty")
    if np.any(eps_grid <= 0):
        raise ConfigurationError("eps values must be positive")
    if reps < 1000:
        raise ConfigurationError("reps must be >= 1000")
    tf = builtin_test_function(spec, model, h_def)
    hb = HBounds(B=tf.B, sigma2=tf.sigma2, A=A, epsilon_dav=epsilon_dav)
    k = bernstein_constants(spec, hb)
    _check_n(k, n)
    sizes = [min(chunk, reps - s) for s in range(0, reps, chunk)]
    jobs = [(spec, model, tf.func, n, size, mix64(seed, j)) for j, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _chunk_means(*a), jobs))
    else:
        parts = [_chunk_means(*a) for a in jobs]
    means = np.concatenate(parts)
    counts = (means[None, :] >= eps_grid[:, None]).sum(axis=1)
    tail = counts / reps
    upper = np.array([wilson_interval(int(c), reps, level)[1] for c in counts])
    bound = np.array([bernstein_bound(k, hb, n, e) for e in eps_grid])
    return BernsteinTable(
        eps=eps_grid, empirical_tail=tail, wilson_upper=upper, bound=bound,
        constants=k, h=hb, n=n, n_eff=k.n_eff(n), reps=reps, level=level,
        meta={"h": h_def, "h_mean": tf.mean, "class": spec.mixing_class.value,
              "seed": int(seed), "counts": counts.tolist()},
    )
