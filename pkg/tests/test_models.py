import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ajk.errors import InvalidNoise, InvalidProbability, InvalidRate, InvalidTimes
from ajk.models import (
    ar1_embed,
    cir_type,
    default_catalog,
    discontinuous_vasicek,
    discrete_poisson,
    gaussian_noise,
    poisson,
    poisson_with_normal_jump,
    vasicek,
)
from ajk.riccati import solve_backward

CATALOG = default_catalog()


def _mod2pi(z):
    # compare log-characteristic exponents up to the branch of the logarithm
    return complex(z.real, (z.imag + np.pi) % (2 * np.pi) - np.pi)


@pytest.mark.parametrize("name", sorted(CATALOG))
@given(a=st.floats(0.05, 1.0), b=st.floats(0.0, 1.0), re=st.floats(-1.0, 0.0), im=st.floats(-3.0, 3.0))
def test_closed_form_matches_solver(name, a, b, re, im):
    model = CATALOG[name]
    p = model.params
    T = a * p.driver.horizon
    s = b * T
    u = np.array([complex(re, im) if k < p.shape.m else 1j * im for k in range(p.d)])
    sol = solve_backward(p, T, u, checkpoints=(s,))
    phi, psi = model.closed_form(s, T, u)
    assert abs(_mod2pi(sol.phi_at(s) - phi)) < 1e-8
    np.testing.assert_allclose(sol.psi_at(s), psi, atol=1e-8)


def test_poisson_with_normal_jump_formula():
    lam, tau, u = 0.8, 1.0, 0.5j
    m = poisson_with_normal_jump(lam, tau, horizon=2.0)
    v = u + 0.5 * u * u
    phi, psi = m.closed_form(0.0, 2.0, [u])
    assert psi[0] == pytest.approx(v)
    assert phi == pytest.approx(lam * 1.0 * np.expm1(u) + np.log(np.cosh(u)) + lam * 1.0 * np.expm1(v))
    # no jump inside (s, t]
    phi, psi = m.closed_form(1.0, 2.0, [u])
    assert psi[0] == u and phi == pytest.approx(lam * np.expm1(u))


def test_discrete_poisson_formula():
    m = discrete_poisson([0.3, 0.6])
    phi, psi = m.closed_form(0.0, 2.0, [1j])
    expect = np.log((0.7 + 0.3 * np.exp(1j)) * (0.4 + 0.6 * np.exp(1j)))
    assert abs(np.exp(phi) - np.exp(expect)) < 1e-14
    assert psi[0] == 1j


def test_vasicek_moments():
    # E r_T = e^{bT} r0 + a (e^{bT}-1)/b, read off the derivative at u = 0
    a, b, s, T, r0 = 0.05, -0.5, 0.2, 2.0, 0.03
    m = vasicek(a, b, s)
    eps = 1e-6
    phi, psi = m.closed_form(0.0, T, [eps * 1j])
    mean = (phi + psi[0] * r0).imag / eps
    assert mean == pytest.approx(np.exp(b * T) * r0 + a * np.expm1(b * T) / b, rel=1e-6)


def test_discontinuous_vasicek_without_jumps_is_vasicek():
    a = discontinuous_vasicek(0.05, -0.5, 0.2, 0.1, [], horizon=3.0)
    b = vasicek(0.05, -0.5, 0.2, horizon=3.0)
    for u in (0.3j, -1j):
        pa, sa = a.closed_form(0.2, 2.5, [u])
        pb, sb = b.closed_form(0.2, 2.5, [u])
        assert pa == pytest.approx(pb) and sa[0] == pytest.approx(sb[0])


def test_cir_zero_vol_is_deterministic():
    m = cir_type(1.0, 0.0, 0.3, horizon=2.0)
    phi, psi = m.closed_form(0.0, 2.0, [1j])
    x = 1.0
    expect = x * np.exp(-2.0) + 0.3 * (1 - np.exp(-2.0))
    assert np.exp(phi + psi[0] * x) == pytest.approx(np.exp(1j * expect))


@pytest.mark.parametrize(
    "factory,exc",
    [
        (lambda: poisson(-1.0), InvalidRate),
        (lambda: discrete_poisson([0.2, 1.5]), InvalidProbability),
        (lambda: discrete_poisson([]), InvalidTimes),
        (lambda: poisson_with_normal_jump(1.0, 0.0), InvalidTimes),
        (lambda: poisson_with_normal_jump(1.0, 3.0, horizon=2.0), InvalidTimes),
        (lambda: discontinuous_vasicek(0.0, -1.0, 0.1, 0.1, [1.0, 1.0]), InvalidTimes),
        (lambda: cir_type(1.0, -0.1, 0.3), InvalidRate),
        (lambda: ar1_embed([0.5], lambda u: 1.0 + 0 * u), InvalidNoise),
        (lambda: ar1_embed([], gaussian_noise(1.0)[0]), InvalidTimes),
    ],
)
def test_constructor_errors(factory, exc):
    with pytest.raises(exc):
        factory()


def _recursion(F_of_step, R_of_step, n_target, u):
    """phi(m+1, u) = F(m, u) + phi(m, u + R(m, u)), psi likewise, from phi(0, u) = 0."""
    if n_target == 0:
        return 0j, u
    f = F_of_step(n_target, u)
    phi, psi = _recursion(F_of_step, R_of_step, n_target - 1, u + R_of_step(n_target, u))
    return f + phi, psi


@pytest.mark.parametrize("u", [0.4j, -1.3j, 2.5j])
def test_ar1_solver_reproduces_recursion(u):
    a = [0.9, 0.5, -0.7, 1.1, 0.3]
    sig = 0.5
    m = CATALOG["ar1_embed"]
    for n in range(1, 6):
        sol = solve_backward(m.params, float(n), [u])
        phi, psi = _recursion(lambda k, v: 0.5 * sig ** 2 * v * v, lambda k, v: (a[k - 1] - 1) * v, n, u)
        assert abs(sol.phi_at(0.0) - phi) < 1e-12
        assert abs(sol.psi_at(0.0)[0] - psi) < 1e-12


@pytest.mark.parametrize("name", ["poisson", "discrete_poisson", "vasicek", "cir_type", "ar1_embed",
                                  "discontinuous_vasicek", "poisson_with_normal_jump", "zero"])
def test_sampler_shapes(name, rng):
    m = CATALOG[name]
    grid = np.array(sorted(set([0.0, 0.5] + m.params.driver.breakpoints(0.0, 1.0))))
    X, L = m.sampler(grid, np.asarray(m.x0, float), rng, 7)
    assert X.shape == L.shape == (7, len(grid), m.d)
    np.testing.assert_array_equal(X[:, 0], np.broadcast_to(m.x0, (7, m.d)))


def test_cir_sampler_mean(rng):
    kappa, sigma, a0, x0, T = 1.0, 0.5, 0.3, 1.0, 1.0
    m = cir_type(kappa, sigma, a0)
    X, _ = m.sampler(np.array([0.0, 0.5, 1.0]), np.array([x0]), rng, 200_000)
    mean = x0 * np.exp(-kappa * T) + a0 / kappa * (1 - np.exp(-kappa * T))
    assert abs(X[:, -1, 0].mean() - mean) < 4 * X[:, -1, 0].std() / np.sqrt(200_000)
    assert X.min() >= 0
