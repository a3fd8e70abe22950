import numpy as np
import pytest
from scipy.integrate._ivp import rk

from ajk import _dopri


def test_tableau_matches_scipy():
    ref = rk.RK45
    np.testing.assert_allclose(_dopri.C, ref.C, rtol=0, atol=1e-15)
    A = np.zeros(ref.A.shape)
    for i, row in enumerate(_dopri.A):
        A[i, : len(row)] = row
    np.testing.assert_allclose(A, ref.A, rtol=0, atol=1e-15)
    np.testing.assert_allclose(_dopri.B, ref.B, rtol=0, atol=1e-15)
    np.testing.assert_allclose(_dopri.E, ref.E, rtol=0, atol=1e-15)
    np.testing.assert_allclose(_dopri.P, ref.P, rtol=0, atol=1e-15)


@pytest.mark.parametrize("t0,t1", [(0.0, 2.0), (2.0, 0.0)])
def test_linear_complex_exact(t0, t1):
    lam = -0.7 + 2.0j
    res = _dopri.integrate(lambda t, y: lam * y, t0, np.array([1.0 + 0j]), t1)
    assert res.ts[-1] == t1
    assert abs(res.ys[-1][0] - np.exp(lam * (t1 - t0))) < 1e-8


def test_dense_output_between_steps():
    res = _dopri.integrate(lambda t, y: np.array([np.cos(t)], dtype=complex), 0.0, np.array([0j]), 3.0)
    for step in res.dense:
        tm = step.t_old + 0.37 * step.h
        assert abs(step(tm)[0] - np.sin(tm)) < 1e-7


def test_post_step_sees_accepted_states():
    seen = []

    def hook(t, y):
        seen.append(t)
        return y

    _dopri.integrate(lambda t, y: -y, 0.0, np.array([1.0 + 0j]), 1.0, post_step=hook)
    assert seen and seen[-1] == 1.0
    assert all(b > a for a, b in zip(seen, seen[1:]))
