"""Oracle-inequality calculus and learning-rate formulas.

Covering-number models, the fixed-point radius of the oracle inequality, its
right-hand side and confidence, rate exponents and parameter schedules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError, DomainError
from .mixing import BernsteinConstants

GENERIC = "generic_power_law"
GAUSSIAN = "gaussian_rkhs"
FINITE = "finite_set"
_ALIASES = {
    "genericpowerlaw": GENERIC, "generic": GENERIC,
    "gaussianrkhs": GAUSSIAN, "gaussian": GAUSSIAN,
    "finiteset": FINITE, "finite": FINITE,
}


@dataclass(frozen=True)
class CoveringModel:
    """``ln N(F_r, sup-norm, eps) <= phi(eps) r^p``."""

    kind: str = GENERIC
    a: float = 1.0
    p: float = 0.5
    sigma: float = 1.0
    d: int = 1
    lam: float = 1.0
    cardinality: int = 1

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower().replace("_", ""), self.kind)
        if kind not in (GENERIC, GAUSSIAN, FINITE):
            raise ConfigurationError(f"unknown covering model {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == FINITE:
            if int(self.cardinality) != self.cardinality or self.cardinality < 1:
                raise ConfigurationError("cardinality must be a positive integer")
            return
        if not (self.a > 0 and self.lam > 0):
            raise ConfigurationError("a and lambda must be positive")
        if kind == GAUSSIAN:
            if not 0.0 < self.p < 1.0:
                raise ConfigurationError("Gaussian RKHS needs p in (0, 1)")
            if not self.sigma > 0 or self.d < 1:
                raise ConfigurationError("Gaussian RKHS needs sigma > 0 and d >= 1")
        elif not 0.0 < self.p <= 1.0:
            raise ConfigurationError("p must lie in (0, 1]")

    @property
    def exponent(self) -> float:
        """Power of ``r`` in the entropy bound (0 for finite sets)."""
        return 0.0 if self.kind == FINITE else self.p


def phi_of_eps(model: CoveringModel, eps: float) -> float:
    if not eps > 0:
        raise DomainError("eps must be positive")
    if model.kind == FINITE:
        return math.log(model.cardinality)
    val = model.a * model.lam ** (-model.p) * eps ** (-2.0 * model.p)
    if model.kind == GAUSSIAN:
        val *= model.sigma ** (-model.d)
    return val


@dataclass(frozen=True)
class OracleInputs:
    theta: float
    V: float
    B0: float
    tau: float
    eps: float
    delta: float
    r_star: float
    constants: BernsteinConstants
    n: int

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigurationError("theta must lie in [0, 1]")
        if not (self.V >= 1 and self.B0 >= 1 and self.tau >= 1):
            raise ConfigurationError("need V >= 1, B0 >= 1 and tau >= 1")
        if not (self.eps > 0 and self.delta >= 0 and 0.0 <= self.r_star <= 1.0):
            raise ConfigurationError("need eps > 0, delta >= 0 and r_star in [0, 1]")
        if self.n < 1:
            raise ConfigurationError("n must be positive")

    @property
    def n_eff(self) -> float:
        return self.constants.n_eff(self.n)

    @property
    def c_V(self) -> float:
        return 64.0 * (4.0 * self.constants.c_sigma * self.V + self.constants.c_B)


@dataclass
class RadiusResult:
    r: float
    terms: tuple[float, float, float]
    iterations: int
    flags: list[str] = field(default_factory=list)

    def __float__(self) -> float:
        return self.r


def radius_terms(model: CoveringModel, inputs: OracleInputs, r: float) -> tuple[float, float, float]:
    """The three branches of the radius condition evaluated at ``r``."""
    ne = inputs.n_eff
    p = model.exponent
    ent = phi_of_eps(model, inputs.eps / 2.0) * 2.0**p * (r**p if p > 0 else 1.0)
    t1 = (inputs.c_V * (inputs.tau + ent) / ne) ** (1.0 / (2.0 - inputs.theta))
    t2 = 8.0 * inputs.constants.c_B * inputs.B0 * inputs.tau / ne
    return t1, t2, inputs.r_star


def _combine(terms, sum_mode: bool) -> float:
    return sum(terms) if sum_mode else max(terms)


def solve_radius(model: CoveringModel, inputs: OracleInputs, sum_mode: bool = False,
                 max_iter: int = 500, rtol: float = 1e-12) -> RadiusResult:
    """Smallest ``r`` with ``r >= max(branches(r))`` (or ``sum`` in sum mode).

    Fixed-point iteration from ``r = 1``; the map is nondecreasing and the
    first branch is concave in ``r``, so the iterates decrease to the minimal
    solution. Bisection takes over if the iteration has not settled. A minimal
    solution above 1 is reported as ``r = 1`` with the ``out_of_regime`` flag.
    """
    if inputs.n < inputs.constants.n0:
        raise DomainError(f"n = {inputs.n} below n0 = {inputs.constants.n0}")
    flags = ["sum_mode"] if sum_mode else []

    def g(r):
        return _combine(radius_terms(model, inputs, r), sum_mode)

    if g(1.0) > 1.0:
        return RadiusResult(1.0, radius_terms(model, inputs, 1.0), 0, flags + ["out_of_regime"])
    r, it, settled = 1.0, 0, False
    for it in range(1, max_iter + 1):
        new = g(r)
        if abs(new - r) <= rtol * max(r, 1e-300):
            r, settled = new, True
            break
        r = new
    if not settled:
        flags.append("bisection_fallback")
        lo, hi = 0.0, 1.0  # g(lo) > lo since tau >= 1 makes branch one positive
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) > mid:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rtol * hi:
                break
        r = hi
    # guard against last-ulp infeasibility
    r = max(r, g(r))
    return RadiusResult(r, radius_terms(model, inputs, r), it, flags)


def oracle_confidence(inputs: OracleInputs) -> float:
    """Probability floor ``1 - 8 C exp(-tau)`` (may be negative, i.e. vacuous)."""
    return 1.0 - 8.0 * inputs.constants.C * math.exp(-inputs.tau)


def oracle_rhs(inputs: OracleInputs, upsilon_f0: float, excess_f0: float, r: float) -> float:
    """``2 Upsilon(f0) + 4 excess(f0) + 4 r + 5 eps + 2 delta``."""
    if excess_f0 < 0:
        raise DomainError("excess_f0 must be nonnegative")
    return 2.0 * upsilon_f0 + 4.0 * excess_f0 + 4.0 * float(r) + 5.0 * inputs.eps + 2.0 * inputs.delta


@dataclass
class OracleBound:
    r: float
    rhs: float
    confidence: float
    flags: list[str]

    def to_dict(self) -> dict:
        return {"r": self.r, "rhs": self.rhs, "confidence": self.confidence, "flags": list(self.flags)}


def oracle_bound(model: CoveringModel, inputs: OracleInputs, upsilon_f0: float = 0.0,
                 excess_f0: float = 0.0, sum_mode: bool = False) -> OracleBound:
    rad = solve_radius(model, inputs, sum_mode=sum_mode)
    flags = list(rad.flags)
    conf = oracle_confidence(inputs)
    if conf <= 0:
        flags.append("vacuous_confidence")
    return OracleBound(rad.r, oracle_rhs(inputs, upsilon_f0, excess_f0, rad.r), conf, flags)


def erm_oracle_rhs(constants: BernsteinConstants, n: int, tau: float, theta: float, V: float,
                   cardinality: int, inf_excess: float) -> float:
    """Finite-class ERM bound ``4 inf-excess + 4 (c_V (tau + ln|F|)/n_eff)^{1/(2-theta)}
    + 32 c_B tau / n_eff``."""
    if inf_excess < 0:
        raise DomainError("inf_excess must be nonnegative")
    if n < constants.n0:
        raise DomainError(f"n = {n} below n0 = {constants.n0}")
    ne = constants.n_eff(n)
    c_V = 64.0 * (4.0 * constants.c_sigma * V + constants.c_B)
    stoch = (c_V * (tau + math.log(cardinality)) / ne) ** (1.0 / (2.0 - theta))
    return 4.0 * inf_excess + 4.0 * stoch + 32.0 * constants.c_B * tau / ne


# ---------------------------------------------------------------------------
# Rates and schedules
# ---------------------------------------------------------------------------


def _unit_interval(name: str, v: float):
    if not 0.0 < v <= 1.0:
        raise DomainError(f"{name} must lie in (0, 1], got {v}")


def rate_exponent_generic(beta: float, p: float) -> float:
    """``min(beta, beta / (beta + p beta + p))``."""
    _unit_interval("beta", beta)
    _unit_interval("p", p)
    return min(beta, beta / (beta + p * beta + p))


def rate_exponent_previous(beta: float, p: float) -> float:
    """Earlier exponent ``min(beta, beta / (beta + 2 p beta + p))``, for comparison."""
    _unit_interval("beta", beta)
    _unit_interval("p", p)
    return min(beta, beta / (beta + 2.0 * p * beta + p))


def rate_exponent_smooth(s: float, d: int, m: float) -> float:
    """``2s / (2s + d + d s / m)`` for Sobolev-type kernels of smoothness ``m``."""
    if not m > d / 2.0:
        raise DomainError("need m > d/2")
    if not 0.0 < s <= m:
        raise DomainError("need 0 < s <= m")
    return 2.0 * s / (2.0 * s + d + d * s / m)


def gaussian_rate_exponent(t: float, d: int, xi: float = 0.0) -> float:
    return 2.0 * t / (2.0 * t + d) - xi


def gaussian_schedule(t: float, d: int, n_eff: float) -> tuple[float, float]:
    """``(lambda, sigma) = (n_eff^-1, n_eff^{-1/(2t+d)})``."""
    if t < 1:
        raise DomainError("t must be >= 1")
    if n_eff < 1:
        raise DomainError("n_eff must be >= 1")
    return 1.0 / n_eff, n_eff ** (-1.0 / (2.0 * t + d))


def generic_schedule(beta: float, p: float, n_eff: float) -> float:
    """``lambda = n_eff^{-rho/beta}``."""
    rho = rate_exponent_generic(beta, p)
    if n_eff < 1:
        raise DomainError("n_eff must be >= 1")
    return n_eff ** (-rho / beta)


def approximation_error_model(c: float, beta: float, lam: float) -> float:
    if not (c > 0 and lam > 0):
        raise DomainError("need c > 0 and lambda > 0")
    _unit_interval("beta", beta)
    return c * lam**beta


def smooth_kernel_B0(lam: float, beta: float, p: float) -> float:
    """Supremum bound ``B0 <= lambda^{(beta - 1) p}`` (at least 1)."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    _unit_interval("beta", beta)
    _unit_interval("p", p)
    return max(1.0, lam ** ((beta - 1.0) * p))
