import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mixrates.errors import ConfigurationError, DomainError
from mixrates.mixing import (BernsteinConstants, HBounds, bernstein_bound,
                             bernstein_bound_tau_form, bernstein_constants,
                             bernstein_epsilon_for_tau, davydov_constant, effective_observations,
                             markov_beta_coefficient, markov_log_beta_coefficient, markov_geometric_majorant,
                             markov_phi_coefficient, phi_mixing_sum, verify_bernstein_mc,
                             wilson_interval)
from mixrates.processes import MixingClass, MixingSpec, RegressionModel, second_eigenvalue_modulus

CHAIN = [[0.9, 0.1], [0.2, 0.8]]
IID_K = BernsteinConstants(1.0, 2.0, 2.0 / 3.0, 1, MixingClass.IID)
UNIT = HBounds(B=1.0, sigma2=1.0)
ALL = [(MixingClass.IID, 1.0), (MixingClass.PHI, 1.0), (MixingClass.GEO_ALPHA, 1.0),
       (MixingClass.GEO_ALPHA, 0.3), (MixingClass.RESTRICTED_GEO_ALPHA, 1.0),
       (MixingClass.GEO_ALPHA_MARKOV, 1.0), (MixingClass.GEO_C, 1.0), (MixingClass.GEO_C, 2.5),
       (MixingClass.POLY_C, 3.0), (MixingClass.POLY_C, 8.0)]


@pytest.mark.parametrize("cls, g, n, expected", [
    (MixingClass.IID, 1.0, 1000, 1000.0),
    (MixingClass.GEO_ALPHA, 1.0, 1e4, 100.0),
    (MixingClass.GEO_ALPHA_MARKOV, 1.0, 1000, 1000 / math.log(1000)),
    (MixingClass.RESTRICTED_GEO_ALPHA, 1.0, 1000, 1000 / math.log(1000) ** 2),
    (MixingClass.GEO_C, 2.0, 1000, 1000 / math.log(1000)),
    (MixingClass.POLY_C, 5.0, 4096, 4096 ** 0.5),
    (MixingClass.PHI, 1.0, 77, 77.0),
])
def test_effective_observations_table(cls, g, n, expected):
    assert effective_observations(cls, g, n) == pytest.approx(expected, rel=1e-12)


def test_effective_observations_markov_spot_value():
    assert effective_observations(MixingClass.GEO_ALPHA_MARKOV, 1.0, 1000) == pytest.approx(144.7648, abs=1e-4)


def test_effective_observations_domain():
    with pytest.raises(DomainError):
        effective_observations(MixingClass.POLY_C, 2.0, 100)
    with pytest.raises(DomainError):
        effective_observations(MixingClass.GEO_ALPHA_MARKOV, 1.0, 2)


@pytest.mark.parametrize("cls, g", ALL)
def test_effective_observations_bounded_and_monotone(cls, g):
    ns = np.unique(np.geomspace(8, 1e7, 400).astype(int))
    v = np.array([effective_observations(cls, g, n) for n in ns])
    assert np.all(v <= ns)
    if cls is MixingClass.GEO_C and g < 1:
        pytest.skip("n/(ln n)^{2/gamma} is not monotone near small n for gamma < 1")
    assert np.all(np.diff(v) >= 0)


def test_geoalpha_constants():
    spec = MixingSpec(MixingClass.GEO_ALPHA, b=8.0, c=0.5, gamma=1.0)
    k = bernstein_constants(spec, UNIT)
    assert k.c_sigma == pytest.approx(8.0)
    assert k.c_B == pytest.approx(8.0 / 3.0)
    assert k.C == pytest.approx(1 + 4 * math.exp(-2) * 0.5)
    assert k.n0 == 16


def test_geoc_constants():
    k = bernstein_constants(MixingSpec(MixingClass.GEO_C, b=1.0, c=1.0), HBounds(1.0, 0.5, A=1.0))
    assert (k.C, k.c_sigma, k.c_B) == (2.0, 8.0, pytest.approx(8.0 / 3.0))


def test_markov_n0_closed_form():
    spec = MixingSpec(MixingClass.GEO_ALPHA_MARKOV, b=1.0, c=1.0, process_params={"P": CHAIN})
    k = bernstein_constants(spec, HBounds(B=1.0, sigma2=0.25, epsilon_dav=1.0))
    c_eps = 16 * math.exp(-1 / 3) / (1 - math.exp(-1 / 3))
    assert davydov_constant(1.0, 1.0, 1.0, 1.0) == pytest.approx(c_eps, rel=1e-12)
    assert k.n0 == math.ceil(max(3.0, math.exp(c_eps * 0.5 ** (-2 / 3))))


def test_restricted_requires_gamma_at_least_one():
    spec = MixingSpec(MixingClass.RESTRICTED_GEO_ALPHA, gamma=0.5,
                      process_params={"P": CHAIN, "c_b": 1.0, "c_c": 1.0})
    with pytest.raises(DomainError):
        bernstein_constants(spec, UNIT)


def test_phi_sum_from_geometric_majorant():
    spec = MixingSpec(MixingClass.PHI, process_params={"P": CHAIN, "phi_c": 1.0, "phi_b": 2.0})
    q = math.exp(-1.0)
    assert phi_mixing_sum(spec) == pytest.approx(q / (1 - q))
    k = bernstein_constants(spec, UNIT)
    assert k.c_sigma == pytest.approx(32 * q / (1 - q))


def test_phi_divergent_sequence():
    spec = MixingSpec(MixingClass.PHI, process_params={"P": CHAIN,
                                                       "phi_sequence": [1.0 / (k + 1) ** 2 for k in range(50)]})
    with pytest.raises(DomainError):
        phi_mixing_sum(spec)


def test_hbounds_variance_invariant():
    with pytest.raises(ConfigurationError):
        HBounds(B=1.0, sigma2=2.0)


def test_bernstein_bound_substitution():
    assert bernstein_bound(IID_K, UNIT, 100, 0.5) == pytest.approx(math.exp(-75 / 7), rel=1e-14)
    assert bernstein_bound(IID_K, UNIT, 100, 1e6) < 1e-100
    assert bernstein_bound(IID_K, UNIT, 100, 0.2) > bernstein_bound(IID_K, UNIT, 100, 0.4)


def test_bernstein_bound_below_n0():
    k = BernsteinConstants(1.0, 2.0, 1.0, 50, MixingClass.GEO_ALPHA_MARKOV)
    with pytest.raises(DomainError, match="n0"):
        bernstein_bound(k, UNIT, 10, 0.1)


def test_tau_form_substitution():
    thr = bernstein_bound_tau_form(IID_K, UNIT, 100, 1.0)
    assert thr == pytest.approx(math.sqrt(2 / 100) + (2 / 3) / 100, rel=1e-14)
    assert thr == pytest.approx(0.148088, abs=1e-6)
    assert bernstein_bound_tau_form(IID_K, UNIT, 100, 1e-14) < 1e-6


@settings(max_examples=200, deadline=None)
@given(tau=st.floats(1e-3, 50), sigma2=st.floats(1e-3, 1.0), B=st.floats(1.0, 10.0),
       n=st.integers(10, 10**6))
def test_tau_form_round_trip_is_conservative(tau, sigma2, B, n):
    h = HBounds(B=B, sigma2=sigma2 * B * B)
    thr = bernstein_bound_tau_form(IID_K, h, n, tau)
    assert bernstein_bound(IID_K, h, n, thr) <= IID_K.C * math.exp(-tau) * (1 + 1e-9)


@settings(max_examples=200, deadline=None)
@given(tau=st.floats(1e-3, 50), sigma2=st.floats(1e-3, 1.0), B=st.floats(1.0, 10.0),
       n=st.integers(10, 10**6))
def test_exact_inverse_round_trip(tau, sigma2, B, n):
    h = HBounds(B=B, sigma2=sigma2 * B * B)
    eps = bernstein_epsilon_for_tau(IID_K, h, n, tau)
    assert bernstein_bound(IID_K, h, n, eps) == pytest.approx(math.exp(-tau), rel=1e-9)


@pytest.mark.parametrize("cls, g", [(MixingClass.IID, 1.0), (MixingClass.GEO_ALPHA, 1.0),
                                    (MixingClass.GEO_C, 1.0), (MixingClass.POLY_C, 4.0)])
def test_bound_monotonicity(cls, g):
    k = BernsteinConstants(2.0, 8.0, 8.0 / 3.0, 1, cls, g)
    eps = np.linspace(0.01, 2, 50)
    b = [bernstein_bound(k, UNIT, 1000, e) for e in eps]
    assert np.all(np.diff(b) < 0)
    s2 = np.linspace(0.01, 1, 50)
    b = [bernstein_bound(k, HBounds(1.0, s), 1000, 0.1) for s in s2]
    assert np.all(np.diff(b) > 0)
    ns = np.unique(np.geomspace(100, 5e4, 40).astype(int))
    b = [bernstein_bound(k, UNIT, n, 0.1) for n in ns]
    assert np.all(np.diff(b) < 0)


def test_beta_coefficient_uniform_rows():
    P = [[0.3, 0.7], [0.3, 0.7]]
    assert markov_beta_coefficient(P, 1) == pytest.approx(0.0, abs=1e-15)


def test_beta_coefficient_two_state_oracle():
    pi = np.array([2 / 3, 1 / 3])
    P = np.array(CHAIN)
    expected = sum(pi[x] * 0.5 * sum(abs(P[x, y] - pi[y]) for y in range(2)) for x in range(2))
    assert markov_beta_coefficient(CHAIN, 1) == pytest.approx(expected, rel=1e-12)
    # closed form for two states: lambda^n * 2 pi_0 pi_1
    assert markov_beta_coefficient(CHAIN, 5) == pytest.approx(0.7**5 * 2 * (2 / 9), rel=1e-10)


def random_chain(rng, k):
    P = rng.random((k, k)) + 0.05
    return (P / P.sum(axis=1, keepdims=True)).tolist()


def reversible_chain(rng, k):
    """Random reversible chain (real spectrum) whose lambda_2 is well separated."""
    while True:
        W = rng.random((k, k)) + 0.05
        W = W + W.T
        P = W / W.sum(axis=1, keepdims=True)
        mods = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
        if k == 2 or mods[2] <= 0.9 * mods[1]:
            return P.tolist(), mods


@pytest.mark.parametrize("seed", range(5))
def test_beta_monotone(seed):
    P = random_chain(np.random.default_rng(seed), 2 + seed)
    beta = np.array([markov_beta_coefficient(P, n) for n in range(1, 51)])
    assert np.all(np.diff(beta) <= 1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_beta_geometric_decay_rate(seed):
    rng = np.random.default_rng(seed)
    P, mods = reversible_chain(rng, 2 + seed % 5)
    # start where the lambda_3 mode is below 1e-12 relative to the lambda_2 mode
    start = 1 if len(mods) == 2 or mods[2] < 1e-12 else \
        max(1, math.ceil(math.log(1e-12) / math.log(mods[2] / mods[1])))
    ns = np.arange(start, start + 50)
    logb = np.array([markov_log_beta_coefficient(P, int(n)) for n in ns])
    slope = np.polyfit(ns, logb, 1)[0]
    assert slope <= math.log(second_eigenvalue_modulus(P)) + 1e-6


def test_beta_keeps_relative_precision():
    # two-state closed form far below the rounding floor of P^n - pi
    for n in (60, 120):
        assert markov_beta_coefficient(CHAIN, n) == pytest.approx(0.7**n * 4 / 9, rel=1e-10)
    assert markov_log_beta_coefficient(CHAIN, 3000) == pytest.approx(3000 * math.log(0.7) + math.log(4 / 9),
                                                                      rel=1e-10)


def test_phi_coefficient_dominates_beta():
    for n in range(1, 20):
        assert markov_phi_coefficient(CHAIN, n) >= markov_beta_coefficient(CHAIN, n) - 1e-15


def test_geometric_majorant():
    b, c = markov_geometric_majorant(CHAIN)
    assert b == pytest.approx(-math.log(0.7))
    for n in range(1, 60):
        assert markov_beta_coefficient(CHAIN, n) <= c * math.exp(-b * n) * (1 + 1e-9)


def test_wilson_interval_contains_estimate():
    lo, hi = wilson_interval(30, 1000, 0.999)
    assert lo < 0.03 < hi
    assert wilson_interval(0, 1000)[0] == 0.0
    with pytest.raises(ConfigurationError):
        wilson_interval(1, 0)


def test_mc_tail_zero_beyond_B():
    t = verify_bernstein_mc(MixingSpec(MixingClass.IID), RegressionModel(), "x", 50, [1.5], 2000, 1)
    assert t.empirical_tail[0] == 0.0


def test_mc_unknown_test_function():
    with pytest.raises(ConfigurationError):
        verify_bernstein_mc(MixingSpec(MixingClass.IID), RegressionModel(), "x3", 50, [0.1], 2000, 1)


def test_mc_tail_matches_clt():
    n, eps, reps = 200, 0.05, 100_000
    t = verify_bernstein_mc(MixingSpec(MixingClass.IID), RegressionModel(), "x", n, [eps], reps, 3)
    sd = math.sqrt(1 / 3 / n)
    # Berry-Esseen guard with constant 0.56 and rho / sigma^3 for uniform[-1,1]
    be = 0.56 * (1 / 4) / (1 / 3) ** 1.5 / math.sqrt(n)
    exact = stats.norm.sf(eps / sd)
    lo, hi = wilson_interval(int(t.meta["counts"][0]), reps, 0.999)
    assert lo - be <= exact <= hi + be


def test_mc_independent_of_workers():
    spec = MixingSpec(MixingClass.GEO_ALPHA, b=1.0, c=1.0, process_params={"a": 0.5})
    args = (spec, RegressionModel(), "x", 200, [0.05, 0.1], 5000, 9)
    a = verify_bernstein_mc(*args, workers=1, chunk=1000)
    b = verify_bernstein_mc(*args, workers=3, chunk=1000)
    assert a.to_csv() == b.to_csv()


def test_csv_header():
    t = verify_bernstein_mc(MixingSpec(MixingClass.IID), RegressionModel(), "y2", 50, [0.1], 1000, 1)
    assert t.to_csv().splitlines()[0] == "eps,empirical_tail,wilson_upper,bound"
