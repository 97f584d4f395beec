import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixrates.bounds import (CoveringModel, OracleInputs, approximation_error_model,
                             erm_oracle_rhs, gaussian_rate_exponent, gaussian_schedule,
                             generic_schedule, oracle_bound, oracle_confidence, oracle_rhs,
                             phi_of_eps, radius_terms, rate_exponent_generic,
                             rate_exponent_previous, rate_exponent_smooth, smooth_kernel_B0,
                             solve_radius)
from mixrates.errors import ConfigurationError, DomainError
from mixrates.mixing import BernsteinConstants
from mixrates.processes import MixingClass

IIDK = BernsteinConstants(C=1.0, c_sigma=2.0, c_B=2 / 3, n0=1, mixing_class=MixingClass.IID)


def inputs(n=10_000, theta=1.0, V=1.0, B0=1.0, tau=1.0, eps=0.1, delta=0.0, r_star=0.0, k=IIDK):
    return OracleInputs(theta=theta, V=V, B0=B0, tau=tau, eps=eps, delta=delta, r_star=r_star,
                        constants=k, n=n)


def bisect(f, lo, hi, tol=1e-15):
    """Root of an increasing function by bisection."""
    while hi - lo > tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# --- covering models -----------------------------------------------------------

def test_phi_examples():
    assert phi_of_eps(CoveringModel("finite_set", cardinality=20), 0.3) == pytest.approx(math.log(20))
    assert phi_of_eps(CoveringModel("gaussian_rkhs", a=1, p=0.5, sigma=1, lam=1), 1.0) == 1.0
    m1 = CoveringModel("gaussian_rkhs", p=0.5, sigma=0.4, d=2, lam=0.1)
    m2 = CoveringModel("gaussian_rkhs", p=0.5, sigma=0.2, d=2, lam=0.1)
    assert phi_of_eps(m2, 0.3) == pytest.approx(4 * phi_of_eps(m1, 0.3))


def test_phi_generic_formula():
    m = CoveringModel("generic", a=2.0, p=0.25, lam=0.01)
    assert phi_of_eps(m, 0.5) == pytest.approx(2.0 * 0.01**-0.25 * 0.5**-0.5)


def test_phi_rejects_nonpositive_eps():
    with pytest.raises(DomainError):
        phi_of_eps(CoveringModel(), 0.0)


@pytest.mark.parametrize("kw", [dict(kind="gaussian_rkhs", p=1.0), dict(kind="generic", p=0.0),
                                dict(kind="generic", a=-1.0), dict(kind="finite_set", cardinality=0),
                                dict(kind="sobolev")])
def test_covering_model_validation(kw):
    with pytest.raises(ConfigurationError):
        CoveringModel(**kw)


def test_oracle_inputs_validation():
    with pytest.raises(ConfigurationError):
        inputs(tau=0.5)
    with pytest.raises(ConfigurationError):
        inputs(theta=1.5)
    with pytest.raises(ConfigurationError):
        inputs(r_star=2.0)


# --- radius ----------------------------------------------------------------------

def test_radius_without_self_reference():
    inp = inputs(tau=2.0, r_star=1e-3)
    res = solve_radius(CoveringModel("finite_set", cardinality=1), inp)
    expected = max(inp.c_V * 2.0 / 1e4, 8 * IIDK.c_B * 2.0 / 1e4, 1e-3)
    assert res.r == pytest.approx(expected, rel=1e-12)


def test_radius_matches_bisection_oracle():
    # c_V = 64 (4 * 0.375 + 0.0625) = 100; phi(eps/2) = 1 with a = lam = 1, p = 1/2, eps = 2
    k = BernsteinConstants(C=1.0, c_sigma=0.375, c_B=0.0625, n0=1, mixing_class=MixingClass.IID)
    inp = inputs(eps=2.0, k=k)
    assert inp.c_V == pytest.approx(100.0)
    model = CoveringModel("generic", a=1.0, p=0.5, lam=1.0)
    assert phi_of_eps(model, 1.0) == pytest.approx(1.0)
    res = solve_radius(model, inp)
    oracle = bisect(lambda r: r - 100 * (1 + math.sqrt(2) * math.sqrt(r)) / 1e4, 1e-12, 1.0)
    assert res.r == pytest.approx(oracle, rel=1e-10)
    assert "out_of_regime" not in res.flags


def test_radius_out_of_regime():
    res = solve_radius(CoveringModel("generic", p=0.5), inputs(n=50))
    assert res.r == 1.0 and "out_of_regime" in res.flags


def test_radius_below_n0():
    k = BernsteinConstants(C=1.0, c_sigma=1.0, c_B=1.0, n0=100, mixing_class=MixingClass.IID)
    with pytest.raises(DomainError):
        solve_radius(CoveringModel(), inputs(n=99, k=k))


def test_radius_linear_branch_uses_bisection():
    # theta = 0 and p = 1 make branch one proportional to sqrt(tau + c r)
    res = solve_radius(CoveringModel("generic", a=1e-3, p=1.0, lam=1.0), inputs(theta=0.0, n=10**9))
    assert max(res.terms) <= res.r + 1e-10


def test_sum_mode_dominates_max_mode():
    model = CoveringModel("gaussian_rkhs", p=0.3, sigma=0.5, lam=1e-2)
    inp = inputs(n=10**7, r_star=1e-4)
    r_max = solve_radius(model, inp).r
    r_sum = solve_radius(model, inp, sum_mode=True)
    assert r_sum.r >= r_max and "sum_mode" in r_sum.flags
    assert sum(radius_terms(model, inp, r_sum.r)) <= r_sum.r + 1e-10


@settings(max_examples=200, deadline=None)
@given(logn=st.floats(2, 12), theta=st.floats(0, 1), V=st.floats(1, 50), B0=st.floats(1, 50),
       tau=st.floats(1, 20), p=st.floats(0.01, 1.0), eps=st.floats(1e-3, 1),
       r_star=st.floats(0, 1))
def test_radius_feasible(logn, theta, V, B0, tau, p, eps, r_star):
    model = CoveringModel("generic", a=1.0, p=p, lam=1.0)
    inp = inputs(n=int(10**logn), theta=theta, V=V, B0=B0, tau=tau, eps=eps, r_star=r_star)
    res = solve_radius(model, inp)
    if "out_of_regime" in res.flags:
        assert max(radius_terms(model, inp, 1.0)) > 1.0
    else:
        assert all(t <= res.r + 1e-10 for t in radius_terms(model, inp, res.r))
        assert 0 < res.r <= 1


def test_radius_minimality():
    model = CoveringModel("generic", a=1.0, p=0.7, lam=0.1)
    inp = inputs(n=10**8, theta=0.5, eps=0.05)
    r = solve_radius(model, inp).r
    below = r * (1 - 1e-6)
    assert max(radius_terms(model, inp, below)) > below


MODEL = CoveringModel("gaussian_rkhs", a=1.0, p=0.4, sigma=0.5, lam=1e-3)


@pytest.mark.parametrize("field, grid, direction", [
    ("n", [10**k for k in range(5, 12)], -1),
    ("tau", [1, 2, 4, 8, 16, 32], 1),
    ("V", [1, 2, 4, 8, 16, 32], 1),
    ("B0", [1, 10, 100, 1e3, 1e4, 1e5], 1),
])
def test_radius_monotone(field, grid, direction):
    base = dict(n=10**9, theta=0.7, eps=0.05)
    rs = [solve_radius(MODEL, inputs(**{**base, field: v})).r for v in grid]
    diffs = direction * np.diff(rs)
    assert np.all(diffs >= -1e-12 * np.max(rs))


# --- right-hand side -----------------------------------------------------------

def test_oracle_rhs_examples():
    assert oracle_rhs(inputs(eps=1e-300), 0.0, 0.0, 0.0) == pytest.approx(0.0, abs=1e-290)
    assert oracle_rhs(inputs(eps=0.01), 0.1, 0.05, 0.02) == pytest.approx(0.53)
    assert oracle_rhs(inputs(eps=0.01, delta=0.1), 0.1, 0.05, 0.02) == pytest.approx(0.73)


def test_oracle_rhs_rejects_negative_excess():
    with pytest.raises(DomainError):
        oracle_rhs(inputs(), 0.0, -0.1, 0.1)


@pytest.mark.parametrize("tau", [1.0, 3.0, 10.0])
def test_confidence_formula(tau):
    k = BernsteinConstants(C=0.5, c_sigma=1.0, c_B=1.0, n0=1, mixing_class=MixingClass.IID)
    assert oracle_confidence(inputs(tau=tau, k=k)) == pytest.approx(1 - 4 * math.exp(-tau))


def test_oracle_bound_flags_vacuous_confidence():
    b = oracle_bound(CoveringModel("finite_set", cardinality=8), inputs(tau=1.0))
    assert b.confidence < 0 and "vacuous_confidence" in b.flags
    assert set(b.to_dict()) == {"r", "rhs", "confidence", "flags"}


def test_erm_rhs_formula():
    v = erm_oracle_rhs(IIDK, 500, tau=3.0, theta=1.0, V=4.0, cardinality=8, inf_excess=0.01)
    c_V = 64 * (4 * 2.0 * 4.0 + 2 / 3)
    expected = 0.04 + 4 * c_V * (3 + math.log(8)) / 500 + 32 * (2 / 3) * 3 / 500
    assert v == pytest.approx(expected, rel=1e-12)


def test_erm_rhs_theta_zero_takes_square_root():
    v = erm_oracle_rhs(IIDK, 10**6, tau=1.0, theta=0.0, V=1.0, cardinality=1, inf_excess=0.0)
    c_V = 64 * (4 * 2.0 + 2 / 3)
    assert v == pytest.approx(4 * math.sqrt(c_V / 1e6) + 32 * (2 / 3) / 1e6, rel=1e-12)


# --- rates and schedules -----------------------------------------------------------

@pytest.mark.parametrize("beta, p, expected", [(1.0, 0.5, 0.5), (0.5, 1.0, 0.25), (1.0, 1e-12, 1.0)])
def test_rate_exponent_generic_examples(beta, p, expected):
    assert rate_exponent_generic(beta, p) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("beta, p", [(0.0, 0.5), (1.5, 0.5), (0.5, 0.0), (0.5, 1.1)])
def test_rate_exponent_domain(beta, p):
    with pytest.raises(DomainError):
        rate_exponent_generic(beta, p)


def test_new_rate_never_worse_on_grid():
    g = np.linspace(0.01, 1.0, 100)
    for beta in g:
        for p in g:
            new, old = rate_exponent_generic(beta, p), rate_exponent_previous(beta, p)
            assert new >= old
            assert new == min(beta, beta / (beta + p * beta + p))
            assert new <= beta


@pytest.mark.parametrize("s, d, m, expected", [(1, 1, 1, 0.5), (1, 2, 2, 0.4)])
def test_rate_exponent_smooth_examples(s, d, m, expected):
    assert rate_exponent_smooth(s, d, m) == pytest.approx(expected)


def test_rate_exponent_smooth_limit():
    assert rate_exponent_smooth(1.0, 1, 1e12) == pytest.approx(2 / 3, rel=1e-9)


@pytest.mark.parametrize("s, d, m", [(2.0, 1, 1.0), (0.5, 2, 1.0), (0.0, 1, 1.0)])
def test_rate_exponent_smooth_domain(s, d, m):
    with pytest.raises(DomainError):
        rate_exponent_smooth(s, d, m)


def test_gaussian_schedule_examples():
    lam, sigma = gaussian_schedule(1.0, 1, 1000.0)
    assert lam == pytest.approx(1e-3) and sigma == pytest.approx(0.1)
    assert gaussian_schedule(1.0, 1, 1.0) == (1.0, 1.0)
    assert gaussian_rate_exponent(1.0, 1) == pytest.approx(2 / 3)
    assert gaussian_rate_exponent(1.0, 1, xi=0.1) == pytest.approx(2 / 3 - 0.1)


def test_gaussian_schedule_slope_recovery():
    ne = np.geomspace(10, 1e6, 25)
    lam = np.array([gaussian_schedule(1.0, 1, v)[0] for v in ne])
    sig = np.array([gaussian_schedule(1.0, 1, v)[1] for v in ne])
    assert np.polyfit(np.log(ne), np.log(lam), 1)[0] == pytest.approx(-1.0, abs=1e-12)
    assert np.polyfit(np.log(ne), np.log(sig), 1)[0] == pytest.approx(-1 / 3, abs=1e-12)


def test_generic_schedule_examples():
    assert generic_schedule(1.0, 0.5, 1e4) == pytest.approx(1e-2)
    assert generic_schedule(1.0, 0.5, 1.0) == 1.0
    # rho == beta when p is tiny, so lambda = 1/n_eff
    assert generic_schedule(0.5, 1e-9, 1e3) == pytest.approx(1e-3, rel=1e-6)


def test_approximation_error_model():
    assert approximation_error_model(1.0, 1.0, 0.1) == pytest.approx(0.1)
    vals = [approximation_error_model(2.0, 0.5, lam) for lam in np.geomspace(1e-12, 1, 20)]
    assert vals[0] < 1e-5 and np.all(np.diff(vals) > 0)


def test_smooth_kernel_B0():
    assert smooth_kernel_B0(1e-4, 1.0, 0.5) == 1.0
    assert smooth_kernel_B0(1e-4, 0.5, 0.5) == pytest.approx(1e-4 ** -0.25)
