import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ajk.errors import ConfigError, DomainViolation, NotAnAtom, OutOfDomain
from ajk.levy import (
    AffineParameterSet,
    BlackBoxJump,
    Const,
    EnhancedJump,
    ExponentialDensity,
    F_eval,
    GaussianDensity,
    JumpMeasureSpec,
    NumericDensity,
    PointMass,
    R_eval,
    StateSpaceShape,
    _ConstMu,
    check_admissible,
    gamma_eval,
    levy_khintchine_exponent,
    params_from_dict,
    params_to_dict,
    riccati_bound_constant,
)
from ajk.measure import DriverMeasure
from ajk.models import default_catalog


# ---------------------------------------------------------------------------
# state space


@pytest.mark.parametrize(
    "x,inside", [((0.0, -3.0), True), ((2.0, 5.0), True), ((-1e-9, 0.0), False)]
)
def test_in_D(x, inside):
    assert StateSpaceShape(1, 1).in_D(np.array(x)) is inside


@pytest.mark.parametrize(
    "u,inside",
    [((-1.0 + 2j, 3j), True), ((0j, 0j), True), ((0.5, 0j), False), ((-1.0, 0.2 + 1j), False)],
)
def test_in_U(u, inside):
    assert StateSpaceShape(1, 1).in_U(np.array(u)) is inside


def test_negative_dims_rejected():
    with pytest.raises(ConfigError):
        StateSpaceShape(-1, 2)


# ---------------------------------------------------------------------------
# jump-measure components: closed forms against direct quadrature


def _gauss_numeric(mean, var, lower=-12.0):
    sd = np.sqrt(var)
    return NumericDensity(
        lambda x: np.exp(-0.5 * ((x[0] - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi)),
        (mean + lower * sd,), (mean + 12.0 * sd,),
    )


@pytest.mark.parametrize("mean,var", [(0.0, 1.0), (0.7, 0.09), (-1.5, 2.0)])
@pytest.mark.parametrize("u", [0.3j, -0.5 + 1j, 1.2])
def test_gaussian_against_quadrature(mean, var, u):
    g = GaussianDensity((mean,), (var,))
    ref = _gauss_numeric(mean, var)
    assert abs(g.exp_integral([u]) - ref.exp_integral([u])) < 1e-9
    np.testing.assert_allclose(g.h_moment(), ref.h_moment(), atol=1e-9)
    np.testing.assert_allclose(g.h_sq_moment(), ref.h_sq_moment(), atol=1e-9)
    np.testing.assert_allclose(g.first_moment(), ref.first_moment(), atol=1e-9)


@pytest.mark.parametrize("mean,var", [(0.5, 1.0), (-0.2, 0.25)])
def test_restricted_gaussian_against_quadrature(mean, var):
    g = GaussianDensity((mean,), (var,), restricted=True, m=1)
    sd = np.sqrt(var)
    ref = NumericDensity(
        lambda x: np.exp(-0.5 * ((x[0] - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi)),
        (0.0,), (mean + 12 * sd,),
    )
    assert g.mass() == pytest.approx(ref.mass(), abs=1e-10)
    assert abs(g.exp_integral([-0.7 + 0.4j]) - ref.exp_integral([-0.7 + 0.4j])) < 1e-9
    np.testing.assert_allclose(g.h_moment(), ref.h_moment(), atol=1e-9)
    np.testing.assert_allclose(g.h_sq_moment(), ref.h_sq_moment(), atol=1e-9)


@pytest.mark.parametrize("rate", [0.5, 2.0, 7.0])
def test_exponential_against_quadrature(rate):
    e = ExponentialDensity(rate, 0, 1)
    ref = NumericDensity(lambda x: rate * np.exp(-rate * x[0]), (0.0,), (60.0 / rate,))
    u = [-0.3 + 0.8j]
    assert abs(e.exp_integral(u) - ref.exp_integral(u)) < 1e-9
    np.testing.assert_allclose(e.h_moment(), ref.h_moment(), atol=1e-9)
    np.testing.assert_allclose(e.h_sq_moment(), ref.h_sq_moment(), atol=1e-9)
    np.testing.assert_allclose(e.first_moment(), ref.first_moment(), atol=1e-9)


def test_point_mass_moments():
    pm = PointMass((2.0, -0.5), 3.0)
    np.testing.assert_allclose(pm.h_moment(), [0.0, -1.5])
    np.testing.assert_allclose(pm.first_moment(), [6.0, -1.5])
    assert pm.exp_integral([0.1j, 0.2]) == pytest.approx(3.0 * (np.exp(0.2j - 0.1) - 1.0))


def test_lk_brownian_and_poisson():
    # Brownian: 1/2 sigma^2 u^2; Poisson(lam) with h cut at 1: lam (e^u - 1 - u)
    u = np.array([0.4j])
    assert levy_khintchine_exponent([0.0], [[0.25]], JumpMeasureSpec(), u) == pytest.approx(0.125 * (0.4j) ** 2)
    lam = 1.3
    val = levy_khintchine_exponent([0.0], [[0.0]], JumpMeasureSpec((PointMass((1.0,), lam),)), u)
    assert val == pytest.approx(lam * (np.exp(0.4j) - 1 - 0.4j))


def test_validate_support():
    spec = JumpMeasureSpec((PointMass((-1.0,), 1.0),))
    with pytest.raises(DomainViolation):
        spec.validate(StateSpaceShape(1, 0))
    spec.validate(StateSpaceShape(0, 1))


def test_divergent_numeric_density_flagged():
    shape = StateSpaceShape(1, 0)
    mu = JumpMeasureSpec((NumericDensity(lambda x: x[0] ** -2.5, (0.0,), (1.0,)),))
    p = AffineParameterSet.build(shape, DriverMeasure.lebesgue(1.0), beta=[[5.0], [0.0]], mu=(mu, JumpMeasureSpec()))
    rep = check_admissible(p)
    assert "mu_integrable" in rep.failed()


# ---------------------------------------------------------------------------
# admissibility fixtures


def _params(m, n, beta=None, alpha=None, mu=None, atoms=(), gamma=None):
    shape = StateSpaceShape(m, n)
    driver = DriverMeasure.lebesgue(2.0, [(t, 1.0) for t in atoms])
    return AffineParameterSet.build(shape, driver, beta, alpha, mu, gamma)


def _base_11(**over):
    # m = 1, n = 1: a CIR-type factor next to an OU factor
    beta = np.array([[0.3, 0.1], [-1.0, 0.2], [0.0, -0.5]])
    alpha = np.zeros((3, 2, 2))
    alpha[0] = np.diag([0.0, 0.1])
    alpha[1] = np.diag([0.2, 0.05])
    mu = [JumpMeasureSpec((ExponentialDensity(3.0, 0, 2, 0.5),)), JumpMeasureSpec(), JumpMeasureSpec()]
    for k, v in over.items():
        if k == "beta":
            beta = v(beta.copy())
        elif k == "alpha":
            alpha = v(alpha.copy())
        elif k == "mu":
            mu = v(list(mu))
    return _params(1, 1, beta, alpha, mu)


def _base_20(**over):
    beta = np.array([[0.3, 0.1], [-1.0, 0.2], [0.1, -0.5]])
    alpha = np.zeros((3, 2, 2))
    alpha[1] = np.diag([0.2, 0.0])
    alpha[2] = np.diag([0.0, 0.3])
    if "beta" in over:
        beta = over["beta"](beta.copy())
    if "alpha" in over:
        alpha = over["alpha"](alpha.copy())
    return _params(2, 0, beta, alpha)


def _set(idx, val):
    def f(a):
        a[idx] = val
        return a
    return f


def _atom_fixture(beta1=0.0, alpha1=0.0):
    jb = np.zeros((2, 1))
    jb[0, 0] = 0.2
    jb[1, 0] = beta1
    ja = np.zeros((2, 1, 1))
    ja[1, 0, 0] = alpha1
    jump = EnhancedJump(jb, ja, (JumpMeasureSpec(), JumpMeasureSpec()))
    return _params(1, 0, [[0.1], [-0.5]], [[[0.0]], [[0.1]]], atoms=(1.0,), gamma={1.0: jump})


FAIL_FIXTURES = {
    "alpha_psd": lambda: _base_11(alpha=_set((0, 1, 1), -0.1)),
    "alpha0_II_zero": lambda: _base_11(alpha=_set((0, 0, 0), 0.1)),
    "alpha_i_offdiag_zero": lambda: _base_20(alpha=_set((1, 1, 1), 0.1)),
    "alpha_J_zero": lambda: _base_11(alpha=_set((2, 1, 1), 0.1)),
    "beta0_in_D": lambda: _base_11(beta=_set((0, 0), -0.1)),
    "beta_IJ_zero": lambda: _base_11(beta=_set((2, 0), 0.5)),
    "beta_cross_I": lambda: _base_20(beta=_set((2, 0), -0.2)),
    "mu_support": lambda: _base_11(mu=lambda mu: [JumpMeasureSpec((PointMass((-1.0, 0.0), 1.0),))] + mu[1:]),
    "mu_J_zero": lambda: _base_11(mu=lambda mu: mu[:2] + [JumpMeasureSpec((PointMass((1.0, 0.0), 1.0),))]),
    "jump_alpha_i_II_zero": lambda: _atom_fixture(alpha1=0.1),
    "jump_beta_II": lambda: _atom_fixture(beta1=-1.5),
    "gamma_zero_at_zero": lambda: _params(
        1, 0, atoms=(1.0,), gamma={1.0: BlackBoxJump(lambda u: 0.1 + 0 * u[0])}),
}


@pytest.mark.parametrize("clause", sorted(FAIL_FIXTURES))
def test_fixture_fails_exactly_its_clause(clause):
    rep = check_admissible(FAIL_FIXTURES[clause]())
    assert not rep.passed
    assert rep.failed() == [clause]


@pytest.mark.parametrize(
    "make",
    [_base_11, _base_20, _atom_fixture, lambda: _atom_fixture(beta1=-0.9, alpha1=0.0)],
)
def test_pass_fixtures(make):
    rep = check_admissible(make())
    assert rep.passed, rep.failed()


def test_gamma_outside_atoms_rejected_by_build_and_checker():
    with pytest.raises(NotAnAtom):
        _params(1, 0, atoms=(1.0,), gamma={0.5: BlackBoxJump(lambda u: 0j)})
    shape = StateSpaceShape(1, 0)
    d = 1
    raw = AffineParameterSet(shape, DriverMeasure.lebesgue(1.0), Const(np.zeros((2, 1))),
                             Const(np.zeros((2, 1, 1))),
                             _ConstMu(tuple(JumpMeasureSpec() for _ in range(d + 1))),
                             {0.5: BlackBoxJump(lambda u: 0j)})
    assert "gamma_at_atoms" in check_admissible(raw).failed()


def test_black_box_reports_unverified():
    rep = check_admissible(default_catalog()["discrete_poisson"].params)
    assert rep.passed
    assert rep.unverified() == ["jump_fourier_positivity"]


@pytest.mark.parametrize("name", sorted(default_catalog()))
def test_catalog_admissible(name):
    assert check_admissible(default_catalog()[name].params).passed


# ---------------------------------------------------------------------------
# evaluation helpers


def test_F_R_gamma_eval():
    p = default_catalog()["cir_type"].params  # kappa=1, sigma=.5, a0=.3
    u = np.array([-0.2 + 1j])
    assert F_eval(p, 0.5, u) == pytest.approx(0.3 * u[0])
    np.testing.assert_allclose(R_eval(p, 0.5, u), [-u[0] + 0.125 * u[0] ** 2])
    with pytest.raises(NotAnAtom):
        gamma_eval(p, 0.5, u)
    with pytest.raises(OutOfDomain):
        F_eval(p, 0.5, np.array([0.5 + 0j]))


def test_gamma_eval_requires_atom():
    p = default_catalog()["poisson_with_normal_jump"].params
    g0, gb = gamma_eval(p, 1.0, np.array([0.3j]))
    assert g0 == pytest.approx(np.log(np.cosh(0.3j)))
    np.testing.assert_allclose(gb, [0.5 * (0.3j) ** 2])
    with pytest.raises(NotAnAtom):
        gamma_eval(p, 0.5, np.array([0.3j]))


@given(re=st.floats(-5.0, 0.0), im=st.floats(-5.0, 5.0), t=st.floats(0.0, 2.0))
def test_riccati_bound(re, im, t):
    p = _base_11()
    C = riccati_bound_constant(p, t)
    u = np.array([re + 1j * im, 0.3j])
    R = R_eval(p, t, u)
    assert R[0].real <= C[0] * (re * re - re) + 1e-9


# ---------------------------------------------------------------------------
# JSON


@pytest.mark.parametrize("name", ["zero", "poisson", "vasicek", "cir_type", "discontinuous_vasicek",
                                  "poisson_with_normal_jump", "discrete_poisson"])
def test_json_roundtrip(name):
    p = default_catalog()[name].params
    data = json.loads(json.dumps(params_to_dict(p)))
    q = params_from_dict(data)
    u = np.full(p.d, 0.4j)
    for t in (0.25, 1.0):
        np.testing.assert_allclose(q.lk_all(t, u), p.lk_all(t, u))
    for t in p.gamma:
        a, b = gamma_eval(p, t, u)
        c, d = gamma_eval(q, t, u)
        # equal up to the branch of the logarithm
        assert abs(np.exp(a) - np.exp(c)) < 1e-14
        np.testing.assert_allclose(b, d)


def test_params_from_dict_errors():
    with pytest.raises(ConfigError):
        params_from_dict({"driver": {}})
    with pytest.raises(ConfigError):
        params_from_dict({"shape": {"m": 1, "n": 0},
                          "driver": DriverMeasure.lebesgue(1.0).to_dict(), "beta": [[1, 2, 3]]})
