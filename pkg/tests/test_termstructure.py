from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ajk import termstructure as ts
from ajk.errors import ConfigError, InvalidTimes, OutOfDomain
from ajk.levy import check_admissible
from ajk.measure import DriverMeasure, integrate

ALPHA, BETA, SIGMA, R0 = 0.1, -0.5, 0.1, 0.05
JUMPS = (0.5, 1.25, 3.0)


def _model(family, gamma=0.05, beta=BETA, horizon=5.0):
    return ts.build_model(family, ALPHA, 0.0 if family == "gaussian" else beta, SIGMA, R0, horizon,
                          gamma=gamma, jump_times=JUMPS)


# ---------------------------------------------------------------------------
# loadings


@pytest.mark.parametrize("load", [ts.vasicek_loadings(0.05, -1.0, 0.2), ts.gaussian_loadings(0.05, 0.2),
                                  ts.discontinuous_loadings(0.05, -1.0, 0.2, 0.1, [0.5])])
def test_loadings_vanish_on_empty_interval(load):
    np.testing.assert_array_equal(load.A(0.7, 0.7), np.zeros(3))


def test_gaussian_first_component():
    # sigma=0.2, alpha=0.05, T-t=2: 4 * 0.02 - 0.1
    assert ts.gaussian_loadings(0.05, 0.2).A(1.0, 3.0)[0] == pytest.approx(-0.02, abs=1e-15)


def test_vasicek_substitution():
    load = ts.vasicek_loadings(0.05, -1.0, 0.2)
    A3 = 1.0 - np.exp(-1.0)
    np.testing.assert_allclose(load.A(0.0, 1.0), [0.02 * A3 ** 2 - 0.05 * A3, A3, A3], rtol=1e-14)


def test_zero_parameters_give_zero_first_component():
    assert ts.vasicek_loadings(0.0, -1.0, 0.0).A(0.0, 2.0)[0] == 0.0


def test_vasicek_rejects_beta_zero():
    with pytest.raises(ConfigError):
        ts.vasicek_loadings(0.05, 0.0, 0.2)


def test_discontinuous_without_jumps_is_vasicek():
    a = ts.discontinuous_loadings(0.05, -1.0, 0.2, 0.1, [])
    b = ts.vasicek_loadings(0.05, -1.0, 0.2)
    for t, T in [(0.0, 1.0), (0.3, 2.2)]:
        np.testing.assert_array_equal(a.A(t, T), b.A(t, T))


def test_discontinuous_at_jump_time():
    gamma = 0.1
    load = ts.discontinuous_loadings(0.05, -1.0, 0.2, gamma, [1.0])
    A = load.A(1.0, 2.5)
    A3 = np.expm1(-1.5) / -1.0 + 1.0
    assert A[2] == pytest.approx(A3)
    assert A[0] == pytest.approx(0.5 * (A3 * gamma) ** 2)
    assert A[1] == pytest.approx(1.0 * A3)
    # after the last jump the indicator is off
    np.testing.assert_array_equal(load.A(1.5, 2.5), ts.vasicek_loadings(0.05, -1.0, 0.2).A(1.5, 2.5))


@pytest.mark.parametrize("times", [[1.0, 1.0], [0.0], [-1.0]])
def test_bad_jump_times(times):
    with pytest.raises(InvalidTimes):
        ts.discontinuous_loadings(0.05, -1.0, 0.2, 0.1, times)


@pytest.mark.parametrize("family", ["vasicek", "gaussian", "discontinuous"])
@given(t=st.floats(0.0, 5.0), T=st.floats(0.0, 5.0))
def test_a_is_density_of_A(family, t, T):
    # A(t,T) = int_[t,T] a(t,v) dA_v
    t, T = sorted((t, T))
    m = _model(family)
    load = m.loadings
    lhs = load.A(t, T)
    cont = integrate(m.driver, lambda v: load.a(t, v), t, T, breaks=load.jump_times)
    at_t = load.a(t, t) * m.driver.atom_mass(t)
    np.testing.assert_allclose(lhs, np.real(cont) + at_t, atol=1e-9)


# ---------------------------------------------------------------------------
# drift condition


@pytest.mark.parametrize("family", ["vasicek", "gaussian", "discontinuous"])
def test_factor_parameters_admissible(family):
    assert check_admissible(_model(family).params).passed


@pytest.mark.parametrize("family", ["vasicek", "gaussian", "discontinuous"])
@given(t=st.floats(0.0, 5.0), T=st.floats(0.0, 5.0))
def test_drift_residual_vanishes(family, t, T):
    t, T = sorted((t, T))
    assert ts.drift_residual(_model(family), t, T) < 1e-10


@pytest.mark.parametrize("ti", JUMPS)
def test_atom_residual_gaussian_oracle(ti):
    # <A,b> - int (e^{-<A,x>} - 1 + <A,x>) K(dx) with K = delta_1 x N(0, g^2) collapses to
    # 1 - exp(-A^1 + g^2 (A^3)^2 / 2)
    m = _model("discontinuous", gamma=0.3)
    T = 5.0
    A = m.loadings.A(ti, T)
    oracle = 1.0 - np.exp(-A[0] + 0.5 * 0.09 * A[2] ** 2)
    assert abs(oracle) < 1e-14
    assert ts.drift_residual(m, ti, T) < 1e-12
    assert ts.drift_residual(m.with_loadings(m.loadings.perturbed(1.1)), ti, T) == pytest.approx(
        abs(1.0 - np.exp(-1.1 * A[0] + 0.5 * 0.09 * A[2] ** 2)), rel=1e-10)


def test_zero_loadings_zero_residual():
    m = _model("vasicek")
    zero = SimpleNamespace(A=lambda t, T: np.zeros(3))
    assert ts.drift_residual(m.with_loadings(zero), 0.3, 2.0) == 0.0


@pytest.mark.parametrize("family", ["vasicek", "gaussian", "discontinuous"])
def test_perturbation_breaks_drift(family):
    m = _model(family)
    bad = m.with_loadings(m.loadings.perturbed(1.1))
    assert ts.drift_residual(bad, 0.2, 3.0) > 1e-4


def test_drift_residual_domain():
    with pytest.raises(OutOfDomain):
        ts.drift_residual(_model("vasicek"), 2.0, 1.0)


# ---------------------------------------------------------------------------
# prices along paths


@pytest.fixture
def vasicek_path():
    m = _model("vasicek")
    grid = ts.state_grid(m, 3.0)
    return m, ts.simulate_state(m, grid, 6, np.random.default_rng(2))


def test_price_at_maturity_is_one(vasicek_path):
    m, path = vasicek_path
    np.testing.assert_array_equal(ts.bond_price(m, 1.0, 1.0, path), np.ones(6))


def test_flat_curve_zero_loadings():
    zero = SimpleNamespace(A=lambda t, T: np.zeros(3))
    params = ts.state_parameters(0.0, -1.0, 0.0, 3.0)
    m = ts.TermStructureModel(params, zero, lambda T: 0.04, 0.04)
    path = ts.simulate_state(_model("vasicek"), ts.state_grid(m, 1.0), 1, np.random.default_rng(0))
    assert ts.bond_price(m, 0.0, 2.5, path)[0] == pytest.approx(np.exp(-0.1), rel=1e-13)


@pytest.mark.parametrize("t", [0.0, 0.7, 1.5])
@pytest.mark.parametrize("T", [1.5, 2.0, 3.0])
def test_vasicek_price_matches_closed_form(vasicek_path, t, T):
    m, path = vasicek_path
    k = int(np.argmin(np.abs(path.times - t)))
    got = ts.bond_price(m, t, T, path)
    ref = ts.vasicek_bond_closed_form(ALPHA, BETA, SIGMA, T - t, path.X[:, k, 2])
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_vasicek_closed_form_textbook_value():
    # dr = (0.1 - 0.5 r) dt + 0.1 dW, r = 0.05, tau = 2
    b, tau = -0.5, 2.0
    e1 = np.expm1(b * tau) / b
    e2 = np.expm1(2 * b * tau) / (2 * b)
    phi = 0.1 * (e1 - tau) / b - 0.01 / (2 * b * b) * (e2 - 2 * e1 + tau)
    assert ts.vasicek_bond_closed_form(0.1, -0.5, 0.1, 2.0, 0.05) == pytest.approx(np.exp(-phi - e1 * 0.05))


@pytest.mark.parametrize("family", ["vasicek", "gaussian", "discontinuous"])
def test_short_rate_consistency(family):
    m = _model(family, gamma=0.2)
    path = ts.simulate_state(m, ts.state_grid(m, 4.0), 5, np.random.default_rng(8))
    for k, t in enumerate(path.times):
        if m.driver.is_atom(t) or k % 25:
            continue
        np.testing.assert_allclose(ts.forward_rate(m, t, t, path), path.X[:, k, 2], atol=1e-8)


def test_price_nonincreasing_when_forwards_positive():
    m = ts.build_model("vasicek", 0.1, -0.5, 0.01, 0.05, 5.0)
    path = ts.simulate_state(m, ts.state_grid(m, 1.0), 1, np.random.default_rng(1))
    Ts = np.linspace(1.0, 5.0, 17)
    assert all(ts.forward_rate(m, 1.0, T, path)[0] >= 0 for T in Ts)
    prices = [ts.bond_price(m, 1.0, T, path)[0] for T in Ts]
    assert np.all(np.diff(prices) <= 0)


def test_path_integral_needs_grid_time(vasicek_path):
    m, path = vasicek_path
    with pytest.raises(OutOfDomain):
        ts.bond_price(m, 0.123456, 2.0, path)


# ---------------------------------------------------------------------------
# martingale test


def test_martingale_zero_vol_exactly_flat():
    m = ts.build_model("vasicek", 0.1, -0.5, 0.0, 0.05, 3.0)
    rep = ts.martingale_test(m, 2.0, 2000, 0)
    assert rep["passed"]
    assert all(r["se"] < 1e-8 for r in rep["rows"])
    # the remaining deterministic error is second order in the step size
    bias = lambda dt: abs(ts.martingale_test(m, 2.0, 1000, 0, dt=dt)["rows"][-1]["mean"] - rep["P0"])  # noqa: E731
    b1, b2 = bias(0.02), bias(0.01)
    assert b1 < 2e-6
    assert 3.0 < b1 / b2 < 5.0


def test_martingale_small_run_and_control():
    m = ts.build_model("discontinuous", 0.1, -0.5, 0.1, 0.05, 3.0, gamma=0.2, jump_times=(0.5, 1.25))
    assert ts.martingale_test(m, 2.0, 20_000, 7)["passed"]
    bad = m.with_loadings(m.loadings.perturbed(1.1))
    with pytest.raises(ConfigError):
        ts.martingale_test(bad, 2.0, 1000, 7)
    assert not ts.martingale_test(bad, 2.0, 20_000, 7, check_drift=False)["passed"]


def test_state_parameters_driver():
    p = ts.state_parameters(0.1, -0.5, 0.1, 3.0, (1.0,), 0.2)
    assert p.driver == DriverMeasure.lebesgue(3.0, [(1.0, 1.0)])
