"""Catalogue of concrete affine models with closed-form exponents and samplers.

Each constructor returns a :class:`ModelSpec` holding the parameter set, the
closed-form ``(phi_s(t,u), psi_s(t,u))`` where one is known, and an exact
sampler ``sample(grid, x0, rng, n)`` returning right values and left limits
on ``grid`` (which must contain every atom of the driver up to its end).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidNoise, InvalidProbability, InvalidRate, InvalidTimes
from .levy import (
    AffineParameterSet,
    BlackBoxJump,
    EnhancedJump,
    JumpMeasureSpec,
    PointMass,
    StateSpaceShape,
)
from .measure import DriverMeasure


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: AffineParameterSet
    closed_form: Callable | None = None
    sampler: Callable | None = None
    x0: tuple = (0.0,)
    settings: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.params.d


def _expm1_ratio(x, tau):
    """``(exp(x tau) - 1) / x`` with the limit ``tau`` at ``x = 0``."""
    return tau if x == 0 else np.expm1(x * tau) / x


def _empty_mu(d):
    return tuple(JumpMeasureSpec() for _ in range(d + 1))


def _check_horizon(horizon):
    if not horizon > 0:
        raise InvalidTimes(f"horizon must be positive, got {horizon}")


def _atoms_between(times, lo, hi):
    return [t for t in times if lo < t <= hi]


# ---------------------------------------------------------------------------
# zero model


def zero(m: int = 0, n: int = 1, horizon: float = 10.0) -> ModelSpec:
    """All parameters zero: ``X`` is constant, ``phi = 0`` and ``psi = u``."""
    _check_horizon(horizon)
    shape = StateSpaceShape(m, n)
    p = AffineParameterSet.build(shape, DriverMeasure.lebesgue(horizon))

    def closed(s, t, u):
        return 0j, np.atleast_1d(np.asarray(u, dtype=complex)).copy()

    def sample(grid, x0, rng, n_paths):
        X = np.broadcast_to(np.asarray(x0, float), (n_paths, len(grid), shape.d)).copy()
        return X, X.copy()

    return ModelSpec("zero", p, closed, sample, tuple([0.0] * shape.d))


# ---------------------------------------------------------------------------
# Poisson process


def poisson(lam: float, horizon: float = 10.0) -> ModelSpec:
    """Poisson counting process with intensity ``lam`` on ``A = Lebesgue``."""
    if not lam >= 0:
        raise InvalidRate(f"intensity must be nonnegative, got {lam}")
    _check_horizon(horizon)
    shape = StateSpaceShape(1, 0)
    mu = (JumpMeasureSpec((PointMass((1.0,), lam),)), JumpMeasureSpec())
    p = AffineParameterSet.build(shape, DriverMeasure.lebesgue(horizon), beta=[[lam], [0.0]], mu=mu)

    def closed(s, t, u):
        u = complex(np.ravel(u)[0])
        return lam * (t - s) * np.expm1(u), np.array([u])

    def sample(grid, x0, rng, n_paths):
        inc = rng.poisson(lam * np.diff(grid), size=(n_paths, len(grid) - 1))
        X = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1) + x0[0]
        X = X[:, :, None].astype(float)
        return X, X.copy()

    return ModelSpec("poisson", p, closed, sample, (0.0,), {"lam": lam})


# ---------------------------------------------------------------------------
# discrete-time Poisson (Bernoulli counts at integer times)


def _bernoulli_gamma0(p):
    return lambda u: u[0] + np.log(p + np.exp(-u[0]) * (1.0 - p))


def discrete_poisson(p: Sequence[float] | float, n_steps: int | None = None) -> ModelSpec:
    """Counts ``X_n = sum_{k<=n} xi_k`` with independent ``xi_k ~ Bernoulli(p_k)``.

    ``A`` has unit atoms at ``1, ..., N`` and no continuous part.
    """
    probs = np.atleast_1d(np.asarray(p, dtype=float))
    if n_steps is not None:
        probs = np.broadcast_to(probs, (n_steps,)) if probs.size == 1 else probs
    if probs.size == 0:
        raise InvalidTimes("need at least one step")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
        raise InvalidProbability(f"probabilities must lie in [0, 1], got {probs}")
    N = probs.size
    times = [float(k) for k in range(1, N + 1)]
    driver = DriverMeasure.pure_atoms(times, 1.0, horizon=float(N))
    gamma = {t: BlackBoxJump(_bernoulli_gamma0(float(pk)), None, "bernoulli",
                             {"name": "bernoulli", "p": float(pk), "axis": 0})
             for t, pk in zip(times, probs)}
    params = AffineParameterSet.build(StateSpaceShape(1, 0), driver, gamma=gamma)

    def closed(s, t, u):
        u = complex(np.ravel(u)[0])
        phi = 0j
        for k in range(1, N + 1):
            if s < k <= t:
                pk = probs[k - 1]
                phi += u + np.log(pk + np.exp(-u) * (1.0 - pk))
        return phi, np.array([u])

    def sample(grid, x0, rng, n_paths):
        X = np.empty((n_paths, len(grid), 1))
        L = np.empty_like(X)
        cur = np.full(n_paths, float(x0[0]))
        for k, t in enumerate(grid):
            L[:, k, 0] = cur
            if k > 0 and float(t) in gamma:
                cur = cur + (rng.random(n_paths) < probs[int(round(t)) - 1])
            X[:, k, 0] = cur
        return X, L

    return ModelSpec("discrete_poisson", params, closed, sample, (0.0,), {"p": probs.tolist()})


# ---------------------------------------------------------------------------
# Poisson process with a mixed jump at a fixed time


def _sign_gaussian_jump():
    return BlackBoxJump(lambda u: np.log(np.cosh(u[0])), lambda u: 0.5 * u ** 2, "sign_gaussian",
                        {"name": "sign_gaussian", "axis": 0})


def poisson_with_normal_jump(lam: float, tau: float, horizon: float | None = None) -> ModelSpec:
    """Poisson process that at time ``tau`` jumps by ``alpha + beta sqrt(X_{tau-})``.

    ``alpha`` is +-1 with equal probability and ``beta`` standard normal,
    independent of each other and of the past.  ``A`` is Lebesgue measure
    plus a unit atom at ``tau``.
    """
    if not lam >= 0:
        raise InvalidRate(f"intensity must be nonnegative, got {lam}")
    if not tau > 0:
        raise InvalidTimes(f"tau must be positive, got {tau}")
    horizon = max(2.0 * tau, tau + 1.0) if horizon is None else float(horizon)
    if not tau <= horizon:
        raise InvalidTimes("tau beyond the horizon")
    tau = float(tau)
    driver = DriverMeasure.lebesgue(horizon, [(tau, 1.0)])
    mu = (JumpMeasureSpec((PointMass((1.0,), lam),)), JumpMeasureSpec())
    params = AffineParameterSet.build(StateSpaceShape(1, 0), driver, beta=[[lam], [0.0]], mu=mu,
                                      gamma={tau: _sign_gaussian_jump()})

    def closed(s, t, u):
        u = complex(np.ravel(u)[0])
        if not s < tau <= t:
            return lam * (t - s) * np.expm1(u), np.array([u])
        v = u + 0.5 * u * u
        phi = lam * (t - tau) * np.expm1(u) + np.log(np.cosh(u)) + lam * (tau - s) * np.expm1(v)
        return phi, np.array([v])

    def sample(grid, x0, rng, n_paths):
        X = np.empty((n_paths, len(grid), 1))
        L = np.empty_like(X)
        cur = np.full(n_paths, float(x0[0]))
        X[:, 0, 0] = L[:, 0, 0] = cur
        for k in range(1, len(grid)):
            cur = cur + rng.poisson(lam * (grid[k] - grid[k - 1]), size=n_paths)
            L[:, k, 0] = cur
            if grid[k] == tau:
                sign = np.where(rng.random(n_paths) < 0.5, -1.0, 1.0)
                cur = cur + sign + rng.standard_normal(n_paths) * np.sqrt(np.maximum(cur, 0.0))
            X[:, k, 0] = cur
        return X, L

    return ModelSpec("poisson_with_normal_jump", params, closed, sample, (0.0,), {"lam": lam, "tau": tau})


# ---------------------------------------------------------------------------
# Vasicek and its discontinuous variant


def _vasicek_exponents(alpha, beta, sigma, tau, u):
    e1 = _expm1_ratio(beta, tau)
    e2 = _expm1_ratio(2.0 * beta, tau)
    phi = alpha * u * e1 + 0.5 * sigma ** 2 * u * u * e2
    return phi, u * np.exp(beta * tau)


def _ou_step(r, dt, alpha, beta, sigma, z):
    """Exact transition of ``dr = (alpha + beta r) dt + sigma dW`` over ``dt``."""
    mean = r * np.exp(beta * dt) + alpha * _expm1_ratio(beta, dt)
    sd = sigma * np.sqrt(_expm1_ratio(2.0 * beta, dt))
    return mean + sd * z


def _ou_sampler(alpha, beta, sigma, jump_times=(), jump_sd=0.0):
    jumps = set(float(t) for t in jump_times)

    def sample(grid, x0, rng, n_paths):
        X = np.empty((n_paths, len(grid), 1))
        L = np.empty_like(X)
        cur = np.full(n_paths, float(x0[0]))
        X[:, 0, 0] = L[:, 0, 0] = cur
        for k in range(1, len(grid)):
            cur = _ou_step(cur, grid[k] - grid[k - 1], alpha, beta, sigma, rng.standard_normal(n_paths))
            L[:, k, 0] = cur
            if float(grid[k]) in jumps:
                cur = cur + jump_sd * rng.standard_normal(n_paths)
            X[:, k, 0] = cur
        return X, L

    return sample


def vasicek(alpha: float, beta: float, sigma: float, horizon: float = 10.0) -> ModelSpec:
    """``dr = (alpha + beta r) dt + sigma dW`` on ``D = R``."""
    _check_horizon(horizon)
    params = AffineParameterSet.build(
        StateSpaceShape(0, 1), DriverMeasure.lebesgue(horizon),
        beta=[[alpha], [beta]], alpha=[[[sigma ** 2]], [[0.0]]],
    )

    def closed(s, t, u):
        u = complex(np.ravel(u)[0])
        phi, psi = _vasicek_exponents(alpha, beta, sigma, t - s, u)
        return phi, np.array([psi])

    return ModelSpec("vasicek", params, closed, _ou_sampler(alpha, beta, sigma), (0.0,),
                     {"alpha": alpha, "beta": beta, "sigma": sigma})


def discontinuous_vasicek(alpha: float, beta: float, sigma: float, gamma: float,
                          jump_times: Sequence[float], horizon: float | None = None) -> ModelSpec:
    """Vasicek short rate with an extra ``N(0, gamma^2)`` shock at each time in ``jump_times``.

    ``A`` is Lebesgue measure plus a unit atom at each jump time.
    """
    times = sorted(float(t) for t in jump_times)
    if len(set(times)) != len(times) or any(t <= 0 for t in times):
        raise InvalidTimes(f"jump times must be distinct and positive, got {list(jump_times)}")
    horizon = (max(times) + 1.0 if times else 10.0) if horizon is None else float(horizon)
    if times and times[-1] > horizon:
        raise InvalidTimes("jump time beyond the horizon")
    driver = DriverMeasure.lebesgue(horizon, [(t, 1.0) for t in times])
    shock = EnhancedJump(np.zeros((2, 1)), np.array([[[gamma ** 2]], [[0.0]]]), _empty_mu(1))
    params = AffineParameterSet.build(
        StateSpaceShape(0, 1), driver,
        beta=[[alpha], [beta]], alpha=[[[sigma ** 2]], [[0.0]]],
        gamma={t: shock for t in times},
    )

    def closed(s, t, u):
        u = complex(np.ravel(u)[0])
        phi, psi = _vasicek_exponents(alpha, beta, sigma, t - s, u)
        for ti in _atoms_between(times, s, t):
            phi += 0.5 * gamma ** 2 * (u * np.exp(beta * (t - ti))) ** 2
        return phi, np.array([psi])

    return ModelSpec("discontinuous_vasicek", params, closed,
                     _ou_sampler(alpha, beta, sigma, times, abs(gamma)), (0.0,),
                     {"alpha": alpha, "beta": beta, "sigma": sigma, "gamma": gamma, "jump_times": times})


# ---------------------------------------------------------------------------
# square-root (CIR type) process


def cir_type(kappa: float, sigma: float, a0: float, horizon: float = 10.0) -> ModelSpec:
    """``dX = (a0 - kappa X) dt + sigma sqrt(X) dW`` on ``D = R_{>=0}``."""
    if not (sigma >= 0 and a0 >= 0):
        raise InvalidRate("need sigma >= 0 and a0 >= 0")
    _check_horizon(horizon)
    params = AffineParameterSet.build(
        StateSpaceShape(1, 0), DriverMeasure.lebesgue(horizon),
        beta=[[a0], [-kappa]], alpha=[[[0.0]], [[sigma ** 2]]],
    )

    def closed(s, t, u):
        u = complex(np.ravel(u)[0])
        tau = t - s
        if sigma == 0:
            return a0 * u * _expm1_ratio(-kappa, tau), np.array([u * np.exp(-kappa * tau)])
        ratio = np.exp(kappa * tau) - 0.5 * sigma ** 2 * _expm1_ratio(kappa, tau) * u
        psi = u / ratio
        phi = 2.0 * a0 / sigma ** 2 * (kappa * tau - np.log(ratio))
        return phi, np.array([psi])

    def sample(grid, x0, rng, n_paths):
        X = np.empty((n_paths, len(grid), 1))
        cur = np.full(n_paths, float(x0[0]))
        X[:, 0, 0] = cur
        df = 4.0 * a0 / sigma ** 2 if sigma > 0 else 0.0
        for k in range(1, len(grid)):
            dt = grid[k] - grid[k - 1]
            if sigma == 0:
                cur = cur * np.exp(-kappa * dt) + a0 * _expm1_ratio(-kappa, dt)
            else:
                c = 0.25 * sigma ** 2 * _expm1_ratio(-kappa, dt)
                nonc = cur * np.exp(-kappa * dt) / c
                N = rng.poisson(0.5 * nonc)
                cur = c * rng.gamma(0.5 * df + N, 2.0)
            X[:, k, 0] = cur
        return X, X.copy()

    return ModelSpec("cir_type", params, closed, sample, (1.0,), {"kappa": kappa, "sigma": sigma, "a0": a0})


# ---------------------------------------------------------------------------
# AR(1) embedded on integer atoms


def gaussian_noise(sigma: float):
    """Log-characteristic function and sampler of ``N(0, sigma^2)`` noise."""
    return (lambda u: 0.5 * sigma ** 2 * u * u,
            lambda rng, n, step: sigma * rng.standard_normal(n))


def ar1_embed(alpha_schedule: Sequence[float], noise_logcf: Callable | Sequence[Callable],
              noise_sampler: Callable | None = None) -> ModelSpec:
    """``X_n = alpha_n X_{n-1} + eps_n`` with independent noise, embedded at unit atoms.

    ``noise_logcf`` is ``u -> log E exp(u eps)`` (or one per step);
    ``noise_sampler(rng, n, step)`` draws ``n`` noise values for step ``step``.
    """
    a = [float(v) for v in alpha_schedule]
    N = len(a)
    if N == 0:
        raise InvalidTimes("need at least one step")
    logcfs = list(noise_logcf) if isinstance(noise_logcf, (list, tuple)) else [noise_logcf] * N
    if len(logcfs) != N:
        raise InvalidNoise("one noise law per step is required")
    for k, f in enumerate(logcfs):
        if abs(complex(f(0j))) > 1e-14:
            raise InvalidNoise(f"noise log-characteristic function of step {k + 1} is nonzero at 0")
    times = [float(k) for k in range(1, N + 1)]
    driver = DriverMeasure.pure_atoms(times, 1.0, horizon=float(N))

    def make(k):
        return BlackBoxJump(lambda u: logcfs[k](u[0]), lambda u: (a[k] - 1.0) * u, "ar1")

    gamma = {t: make(k) for k, t in enumerate(times)}
    params = AffineParameterSet.build(StateSpaceShape(0, 1), driver, gamma=gamma)

    def closed(s, t, u):
        # forward recursion in the terminal time: phi_s(k+1, u) = F(k, u) + phi_s(k, u + R(k, u))
        u = complex(np.ravel(u)[0])
        lo = int(np.floor(s))
        hi = int(np.floor(t))

        def rec(k, v):
            if k <= lo:
                return 0j, v
            f = logcfs[k - 1](v)
            phi, psi = rec(k - 1, v + (a[k - 1] - 1.0) * v)
            return f + phi, psi

        phi, psi = rec(hi, u)
        return phi, np.array([psi])

    sample = None
    if noise_sampler is not None:
        def sample(grid, x0, rng, n_paths):
            X = np.empty((n_paths, len(grid), 1))
            L = np.empty_like(X)
            cur = np.full(n_paths, float(x0[0]))
            for k, t in enumerate(grid):
                L[:, k, 0] = cur
                if k > 0 and float(t) in gamma:
                    step = int(round(t))
                    cur = a[step - 1] * cur + noise_sampler(rng, n_paths, step)
                X[:, k, 0] = cur
            return X, L

    return ModelSpec("ar1_embed", params, closed, sample, (0.0,), {"alpha": a})


CATALOG = {
    "zero": zero,
    "poisson": poisson,
    "discrete_poisson": discrete_poisson,
    "poisson_with_normal_jump": poisson_with_normal_jump,
    "vasicek": vasicek,
    "discontinuous_vasicek": discontinuous_vasicek,
    "cir_type": cir_type,
    "ar1_embed": ar1_embed,
}


def default_catalog() -> dict:
    """One representative instance of every catalogue model."""
    noise, sampler = gaussian_noise(0.5)
    return {
        "zero": zero(m=1, n=1, horizon=5.0),
        "poisson": poisson(1.0, horizon=5.0),
        "discrete_poisson": discrete_poisson([0.2, 0.5, 0.7, 0.4, 0.9]),
        "poisson_with_normal_jump": poisson_with_normal_jump(1.0, 1.0, horizon=2.0),
        "vasicek": vasicek(0.05, -0.5, 0.2, horizon=5.0),
        "discontinuous_vasicek": discontinuous_vasicek(0.05, -0.5, 0.2, 0.1, [0.5, 1.5, 2.5], horizon=3.0),
        "cir_type": cir_type(1.0, 0.5, 0.3, horizon=5.0),
        "ar1_embed": ar1_embed([0.9, 0.5, -0.7, 1.1, 0.3], noise, sampler),
    }
