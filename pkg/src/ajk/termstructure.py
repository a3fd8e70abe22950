"""Forward-rate term structures driven by an affine factor on a general time scale.

Bond prices are ``P(t,T) = exp(-int_(t,T] f(t,u) dA_u)`` with forward rates
``f(t,T) = f(0,T) + int_0^t a(s,T) . dX_s``.  The factor is
``X = (A_t, R_t, r_t)``: the clock itself, the integrated short rate and the
short rate, an affine process with ``m = 0`` and ``n = 3``.  The loadings
enter through ``A(t,T) = int_[t,T] a(t,u) dA_u``.

Rewriting the discounted bond price with Fubini gives

    P(t,T) exp(-int_(0,t] r dA) = P(0,T) exp(-int_0^t A(s,T) . dX_s),

which is what the martingale test samples.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, InvalidTimes, OutOfDomain
from .levy import (
    AffineParameterSet,
    EnhancedJump,
    GaussianDensity,
    JumpMeasureSpec,
    StateSpaceShape,
)
from .measure import DriverMeasure, eval_A, integrate
from .models import _expm1_ratio, _ou_step
from .simulate import block_rng

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


# ---------------------------------------------------------------------------
# loading families


@dataclass(frozen=True)
class Loadings:
    """Loadings ``A(t,T)`` and ``a(t,u)`` for the factor ``(A_t, R_t, r_t)``.

    ``scale1`` multiplies the first component; values other than 1 break
    the drift condition and serve as a negative control.
    """

    alpha: float
    beta: float
    sigma: float
    jump_times: tuple = ()
    gamma: float = 0.0
    scale1: float = 1.0
    kind: str = "vasicek"

    def __post_init__(self):
        times = tuple(sorted(float(t) for t in self.jump_times))
        if len(set(times)) != len(times) or any(t <= 0 for t in times):
            raise InvalidTimes(f"jump times must be distinct and positive, got {self.jump_times}")
        object.__setattr__(self, "jump_times", times)
        if self.kind != "gaussian" and self.beta == 0:
            raise ConfigError("beta = 0 is the Gaussian case; use gaussian_loadings")
        if self.kind == "discontinuous" and not self.gamma > 0:
            raise ConfigError("the jump volatility gamma must be positive")

    # third component ----------------------------------------------------
    def _A3_cont(self, tau):
        if self.kind == "gaussian":
            return tau
        return _expm1_ratio(self.beta, tau)

    def _a3_cont(self, tau):
        return 1.0 if self.kind == "gaussian" else np.exp(self.beta * tau)

    def _count(self, t, T):
        return sum(1 for ti in self.jump_times if t <= ti <= T)

    def _is_jump(self, t):
        return t in self.jump_times

    def _g(self, t, x):
        """First component as a function of the third, ``A^1 = g(A^3)``."""
        if self._is_jump(t):
            return 0.5 * (self.gamma * x) ** 2
        return 0.5 * self.sigma ** 2 * x * x - self.alpha * x

    def _dg(self, t, x):
        if self._is_jump(t):
            return self.gamma ** 2 * x
        return self.sigma ** 2 * x - self.alpha

    def A(self, t: float, T: float) -> np.ndarray:
        """``A(t,T) = int_[t,T] a(t,u) dA_u``."""
        if T < t:
            raise OutOfDomain(f"need t <= T, got t={t}, T={T}")
        a3 = self._A3_cont(T - t) + self._count(t, T)
        return np.array([self.scale1 * self._g(t, a3), -self.beta * a3, a3])

    def a(self, t: float, u: float) -> np.ndarray:
        """Density of ``A(t, .)`` w.r.t. ``dA``: derivative off atoms, jump over ``Delta A`` at atoms."""
        if u < t:
            raise OutOfDomain(f"need t <= u, got t={t}, u={u}")
        a3_right = self._A3_cont(u - t) + self._count(t, u)
        if self._is_jump(u):
            a3_left = a3_right - 1.0
            a3 = 1.0
            a1 = self._g(t, a3_right) - self._g(t, a3_left)
        else:
            a3 = self._a3_cont(u - t)
            a1 = self._dg(t, a3_right) * a3
        return np.array([self.scale1 * a1, -self.beta * a3, a3])

    def perturbed(self, factor: float = 1.1) -> "Loadings":
        return dataclasses.replace(self, scale1=self.scale1 * factor)


def vasicek_loadings(alpha: float, beta: float, sigma: float) -> Loadings:
    """``A^3 = (e^{beta tau} - 1)/beta``, ``A^2 = -beta A^3``, ``A^1 = sigma^2 (A^3)^2/2 - alpha A^3``."""
    return Loadings(alpha, beta, sigma, kind="vasicek")


def gaussian_loadings(alpha: float, sigma: float, beta: float = 0.0) -> Loadings:
    """``A^3 = T - t``, ``A^2 = -beta (T - t)``, ``A^1 = sigma^2 (T-t)^2/2 - alpha (T - t)``."""
    return Loadings(alpha, beta, sigma, kind="gaussian")


def discontinuous_loadings(alpha: float, beta: float, sigma: float, gamma: float, jump_times) -> Loadings:
    """Vasicek loadings plus one unit of ``A^3`` per jump time in ``[t, T]``.

    At a jump time ``t_i`` the first component is ``(A^3(t_i,T) gamma)^2 / 2``.
    """
    return Loadings(alpha, beta, sigma, tuple(jump_times), gamma, kind="discontinuous")


# ---------------------------------------------------------------------------
# factor model


def state_parameters(alpha: float, beta: float, sigma: float, horizon: float,
                     jump_times=(), gamma: float = 0.0) -> AffineParameterSet:
    """Affine parameters of ``X = (A_t, R_t, r_t)`` with Vasicek short rate.

    Each jump time is a unit atom of ``A`` where the clock component moves
    by one and ``r`` receives an independent ``N(0, gamma^2)`` shock.
    """
    d = 3
    beta_arr = np.zeros((d + 1, d))
    beta_arr[0] = [1.0, 0.0, alpha]
    beta_arr[3] = [0.0, 1.0, beta]
    alpha_arr = np.zeros((d + 1, d, d))
    alpha_arr[0, 2, 2] = sigma ** 2
    driver = DriverMeasure.lebesgue(horizon, [(float(t), 1.0) for t in jump_times])
    jb = np.zeros((d + 1, d))
    jb[0, 0] = 1.0
    ja = np.zeros((d + 1, d, d))
    ja[0, 2, 2] = gamma ** 2
    shock = EnhancedJump(jb, ja, tuple(JumpMeasureSpec() for _ in range(d + 1)))
    return AffineParameterSet.build(StateSpaceShape(0, 3), driver, beta_arr, alpha_arr,
                                    gamma={float(t): shock for t in jump_times})


@dataclass(frozen=True)
class TermStructureModel:
    """Factor parameters, loadings, initial forward curve and initial short rate.

    ``kernels`` maps each atom time to ``(b, K)``: the drift and the law of
    the factor jump there, used for the atom version of the drift condition.
    """

    params: AffineParameterSet
    loadings: Loadings
    f0: Callable
    r0: float
    kernels: dict = field(default_factory=dict)

    @property
    def driver(self) -> DriverMeasure:
        return self.params.driver

    @property
    def x0(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.r0])

    def with_loadings(self, loadings: Loadings) -> "TermStructureModel":
        return dataclasses.replace(self, loadings=loadings)


def consistent_f0(loadings: Loadings, driver: DriverMeasure, r0: float) -> Callable:
    """Initial curve with ``f(t,t) = r_t``: ``f0(T) = e^{beta T} r0 - int_(0,T] a^1(s,T) dA_s``."""
    b = loadings.beta
    if loadings.kind == "vasicek" and loadings.scale1 == 1.0:
        def f0(T):
            e1 = _expm1_ratio(b, T)
            return np.exp(b * T) * r0 + loadings.alpha * e1 - 0.5 * loadings.sigma ** 2 * e1 * e1
        return f0

    def f0(T):
        if T == 0:
            return r0
        return float(np.exp(b * T) * r0 - np.real(integrate(driver, lambda s: loadings.a(s, T)[0], 0.0, T,
                                                             breaks=loadings.jump_times)))
    return f0


def build_model(family: str, alpha: float, beta: float, sigma: float, r0: float, horizon: float,
                gamma: float = 0.0, jump_times=()) -> TermStructureModel:
    """Term-structure model for ``family`` in {vasicek, gaussian, discontinuous}."""
    if family == "vasicek":
        load = vasicek_loadings(alpha, beta, sigma)
        jump_times = ()
    elif family == "gaussian":
        load = gaussian_loadings(alpha, sigma, beta)
        jump_times = ()
    elif family == "discontinuous":
        load = discontinuous_loadings(alpha, beta, sigma, gamma, jump_times)
    else:
        raise ConfigError(f"unknown loading family {family!r}")
    if any(t > horizon for t in jump_times):
        raise InvalidTimes("jump time beyond the horizon")
    params = state_parameters(alpha, beta, sigma, horizon, jump_times, gamma)
    kernel = JumpMeasureSpec((GaussianDensity((1.0, 0.0, 0.0), (0.0, 0.0, gamma ** 2)),))
    kernels = {float(t): (np.array([1.0, 0.0, 0.0]), kernel) for t in jump_times}
    f0 = consistent_f0(load, params.driver, r0)
    return TermStructureModel(params, load, f0, r0, kernels)


# ---------------------------------------------------------------------------
# drift condition


def drift_residuals(m: TermStructureModel, t: float, T: float, sign: int = -1) -> np.ndarray:
    """Residual of the drift condition for every index ``i = 0..d`` at ``(t, T)``.

    Off atoms: ``<A,beta_i> - 1/2 <A, alpha_i A> - int (e^{s<A,x>} - 1 - s<A,h(x)>) mu_i(dx)``
    with ``s = sign``.  At an atom ``t`` the jump law ``K`` replaces the
    triplet: ``<A,b> - int (e^{s<A,x>} - 1 - s<A,x>) K(dx)`` for index 0 and
    zero for the others.  ``sign = -1`` is the convention under which
    ``exp(-int A dX)`` is a martingale.
    """
    if not 0.0 <= t <= T <= m.driver.horizon:
        raise OutOfDomain(f"need 0 <= t <= T <= {m.driver.horizon}")
    Avec = m.loadings.A(t, T)
    d = m.params.d
    if m.driver.is_atom(t):
        out = np.zeros(d + 1)
        if t in m.kernels:
            b, K = m.kernels[t]
            integral = K.exp_integral(sign * Avec) - sign * np.dot(Avec, K.first_moment(d))
            out[0] = np.real(np.dot(Avec, b) - integral)
        return out
    beta = np.asarray(m.params.beta(t))
    alpha = np.asarray(m.params.alpha(t))
    mu = m.params.mu(t)
    out = np.empty(d + 1)
    for i in range(d + 1):
        jump = mu[i].exp_integral(sign * Avec) - sign * np.dot(Avec, mu[i].h_moment(d)) if mu[i].components else 0.0
        out[i] = np.real(np.dot(Avec, beta[i]) - 0.5 * Avec @ alpha[i] @ Avec - jump)
    return out


def drift_residual(m: TermStructureModel, t: float, T: float, sign: int = -1) -> float:
    """Largest absolute drift-condition residual over all indices."""
    return float(np.max(np.abs(drift_residuals(m, t, T, sign))))


# ---------------------------------------------------------------------------
# factor paths and bond prices


@dataclass(frozen=True)
class StatePath:
    """Factor values ``X`` (right limits) and ``left`` (left limits) on ``times``.

    Arrays have shape ``(..., len(times), 3)``; leading axes index paths.
    """

    times: np.ndarray
    X: np.ndarray
    left: np.ndarray


def state_grid(m: TermStructureModel, T: float, dt: float = 1e-2, extra=()) -> np.ndarray:
    pts = set(m.driver.breakpoints(0.0, T))
    n = max(1, int(np.ceil(T / dt)))
    pts.update(np.linspace(0.0, T, n + 1).tolist())
    pts.update(float(e) for e in extra if 0.0 <= e <= T)
    return np.array(sorted(pts))


def simulate_state(m: TermStructureModel, grid, n_paths: int, rng) -> StatePath:
    """Exact short-rate transitions; ``R`` follows the piecewise-linear interpolant of ``r``."""
    grid = np.asarray(grid, dtype=float)
    lo = m.loadings
    jumps = set(m.kernels)
    X = np.empty((n_paths, len(grid), 3))
    L = np.empty_like(X)
    r = np.full(n_paths, float(m.r0))
    R = np.zeros(n_paths)
    X[:, 0] = L[:, 0] = [0.0, 0.0, m.r0]
    for k in range(1, len(grid)):
        dt = grid[k] - grid[k - 1]
        r_new = _ou_step(r, dt, lo.alpha, lo.beta, lo.sigma, rng.standard_normal(n_paths))
        R = R + 0.5 * dt * (r + r_new)
        r = r_new
        clock = eval_A(m.driver, grid[k])
        L[:, k, 0] = clock - m.driver.atom_mass(grid[k])
        L[:, k, 1] = R
        L[:, k, 2] = r
        if float(grid[k]) in jumps:
            r = r + abs(lo.gamma) * rng.standard_normal(n_paths)
        X[:, k, 0] = clock
        X[:, k, 1] = R
        X[:, k, 2] = r
    return StatePath(grid, X, L)


def _step_weights(g: Callable, times: np.ndarray, driver: DriverMeasure):
    """Per-step averages of ``g`` and ``g * theta`` (``theta`` the position in the step), and ``g`` at atoms."""
    n = len(times) - 1
    avg = np.empty((n, 3))
    avg_theta = np.empty((n, 3))
    atom = np.zeros((len(times), 3))
    theta = 0.5 * (_GL_X + 1.0)
    for k in range(n):
        a, b = times[k], times[k + 1]
        vals = np.array([g(a + (b - a) * th) for th in theta])
        avg[k] = 0.5 * _GL_W @ vals
        avg_theta[k] = 0.5 * (_GL_W * theta) @ vals
        if driver.is_atom(b):
            atom[k + 1] = g(b)
    return avg, avg_theta, atom


def _increments(X, left, times, weights) -> np.ndarray:
    """Per-step contributions to ``int g . dX``.

    ``A`` and ``r`` move linearly inside a step; ``R`` is the exact integral
    of the linear interpolant of ``r``, so ``dR = r(s) ds`` within the step.
    """
    avg, avg_theta, atom = weights
    h = np.diff(times)
    d_lin = left[..., 1:, :] - X[..., :-1, :]
    out = d_lin[..., 0] * avg[:, 0] + d_lin[..., 2] * avg[:, 2]
    r0, r1 = X[..., :-1, 2], left[..., 1:, 2]
    out = out + h * (r0 * (avg[:, 1] - avg_theta[:, 1]) + r1 * avg_theta[:, 1])
    return out + np.einsum("...kj,kj->...k", (X - left)[..., 1:, :], atom[1:])


def _grid_index(times: np.ndarray, t: float) -> int:
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-12 * max(1.0, abs(t)):
        raise OutOfDomain(f"t={t} is not a grid time of the path")
    return k


def path_integral(g: Callable, path: StatePath, driver: DriverMeasure, t_end: float) -> np.ndarray:
    """``int_(0, t_end] g(s) . dX_s`` along ``path``."""
    k_end = _grid_index(path.times, t_end)
    if k_end == 0:
        return np.zeros(path.X.shape[:-2])
    sub = path.times[: k_end + 1]
    inc = _increments(path.X[..., : k_end + 1, :], path.left[..., : k_end + 1, :], sub,
                      _step_weights(g, sub, driver))
    return inc.sum(axis=-1)


def bond_price(m: TermStructureModel, t: float, T: float, path: StatePath):
    """``P(t,T)`` from the initial curve and the factor path up to ``t``."""
    if not 0.0 <= t <= T <= m.driver.horizon:
        raise OutOfDomain(f"need 0 <= t <= T <= {m.driver.horizon}")
    if t == T:
        return np.ones(path.X.shape[:-2]) if path.X.ndim > 2 else 1.0
    init = float(np.real(integrate(m.driver, m.f0, t, T)))
    stoch = path_integral(lambda s: m.loadings.A(s, T) - m.loadings.A(s, t), path, m.driver, t)
    return np.exp(-init - stoch)


def forward_rate(m: TermStructureModel, t: float, T: float, path: StatePath):
    """``f(t,T) = f(0,T) + int_0^t a(s,T) . dX_s``."""
    return m.f0(T) + path_integral(lambda s: m.loadings.a(s, T), path, m.driver, t)


def vasicek_bond_closed_form(alpha: float, beta: float, sigma: float, tau: float, r):
    """``exp(-phi(tau) - psi(tau) r)`` for ``dr = (alpha + beta r) dt + sigma dW``."""
    e1 = _expm1_ratio(beta, tau)
    if beta == 0:
        phi = 0.5 * alpha * tau ** 2 - sigma ** 2 * tau ** 3 / 6.0
    else:
        e2 = _expm1_ratio(2.0 * beta, tau)
        phi = alpha * (e1 - tau) / beta - 0.5 * sigma ** 2 * (e2 - 2.0 * e1 + tau) / beta ** 2
    return np.exp(-phi - e1 * np.asarray(r))


def martingale_test(m: TermStructureModel, T: float, n_paths: int, seed: int, *, times=None,
                    dt: float = 1e-2, z_max: float = 4.0, check_drift: bool = True, block: int = 8192,
                    bias_tol: float = 1e-6) -> dict:
    """Monte Carlo check that discounted bond prices ``P(t,T)/N_t`` have constant mean.

    The mean at each ``t`` in ``times`` is compared with ``P(0,T)``; the
    test passes when every z-score is at most ``z_max``.  Deviations up to
    ``bias_tol * P(0,T)`` are attributed to the O(dt^2) time discretisation
    of the path integrals and do not count towards the z-score.
    """
    if not 0 < T <= m.driver.horizon:
        raise OutOfDomain(f"T={T} outside (0, {m.driver.horizon}]")
    times = np.linspace(0.0, T, 11) if times is None else np.asarray(times, dtype=float)
    grid = state_grid(m, T, dt, times)
    worst = max(drift_residual(m, float(t), T) for t in grid)
    if check_drift and worst > 1e-8:
        raise ConfigError(f"drift condition violated (residual {worst:.3g}); pass check_drift=False to run anyway")
    weights = _step_weights(lambda s: m.loadings.A(s, T), grid, m.driver)
    P0 = float(np.exp(-np.real(integrate(m.driver, m.f0, 0.0, T))))
    idx = np.array([_grid_index(grid, float(t)) for t in times])
    n_blocks = -(-n_paths // block)
    rngs = block_rng(seed, n_blocks)
    sums = np.zeros(len(times))
    sq = np.zeros(len(times))
    for b in range(n_blocks):
        size = min(block, n_paths - b * block)
        path = simulate_state(m, grid, size, rngs[b])
        dJ = _increments(path.X, path.left, grid, weights)
        J = np.concatenate([np.zeros((size, 1)), np.cumsum(dJ, axis=1)], axis=1)
        disc = P0 * np.exp(-J[:, idx])
        sums += disc.sum(axis=0)
        sq += (disc ** 2).sum(axis=0)
    mean = sums / n_paths
    var = np.maximum(sq / n_paths - mean ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
    se = np.sqrt(var / n_paths)
    excess = np.maximum(np.abs(mean - P0) - bias_tol * P0, 0.0)
    z = np.where(se > 0, excess / np.where(se > 0, se, 1.0), np.where(excess > 0, np.inf, 0.0))
    return {
        "T": T, "P0": P0, "n_paths": n_paths, "seed": seed, "drift_residual": worst,
        "bias_tol": bias_tol,
        "rows": [{"t": float(t), "mean": float(mu), "se": float(s), "z": float(zz)}
                 for t, mu, s, zz in zip(times, mean, se, z)],
        "max_z": float(np.max(z)), "passed": bool(np.max(z) <= z_max),
    }
