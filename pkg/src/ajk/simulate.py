"""Monte Carlo paths and empirical characteristic functions.

Randomness is organised in blocks of :data:`BLOCK` paths.  Block ``b`` draws
from ``Philox`` seeded by the ``b``-th child of ``SeedSequence(seed)``, so a
path depends only on ``(seed, path index)`` and the ensemble is identical
whatever the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import ConfigError, InsufficientPaths, OutOfDomain
from .levy import (
    AffineParameterSet,
    EnhancedJump,
    ExponentialDensity,
    GaussianDensity,
    JumpMeasureSpec,
    PointMass,
)
from .models import ModelSpec
from .riccati import solve_backward

BLOCK = 8192
MIN_PATHS = 1000


def n_threads(requested: int | None = None) -> int:
    """Worker count from the argument, else ``AJK_THREADS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("AJK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"AJK_THREADS must be an integer, got {env!r}") from exc
    return 1


def block_rng(seed: int, n_blocks: int) -> list:
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass
class PathEnsemble:
    """Simulated paths: ``paths[p, k]`` is ``X`` at ``times[k]``, ``left`` its left limit."""

    model: str
    times: np.ndarray
    paths: np.ndarray
    left: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.paths.shape[2]
        w.writerow(["t", "path_id"] + [f"x_{k}" for k in range(1, d + 1)])
        for p in range(self.n_paths):
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t)), p] + [repr(float(v)) for v in self.paths[p, k]])
        return buf.getvalue()


def simulation_grid(model: ModelSpec, T: float, grid=None, n_points: int = 11) -> np.ndarray:
    horizon = model.params.driver.horizon
    if not 0 < T <= horizon:
        raise OutOfDomain(f"T={T} outside (0, {horizon}]")
    pts = set(model.params.driver.breakpoints(0.0, float(T)))
    if grid is None:
        pts.update(np.linspace(0.0, T, n_points).tolist())
    else:
        for g in grid:
            if not 0.0 <= g <= T:
                raise OutOfDomain(f"grid time {g} outside [0, {T}]")
            pts.add(float(g))
    return np.array(sorted(pts))


def simulate(model: ModelSpec, x0, T: float, n_paths: int, seed: int, *, grid=None,
             threads: int | None = None, euler_dt: float = 1e-2) -> PathEnsemble:
    """Sample ``n_paths`` paths of ``model`` started at ``x0`` on a grid ending at ``T``.

    Uses the model's exact sampler when it has one and an Euler scheme with
    full truncation otherwise.  The grid always contains ``0``, ``T`` and
    every atom of ``A`` in ``(0, T]``.
    """
    if n_paths < 1:
        raise InsufficientPaths("need at least one path")
    x0 = np.asarray(model.x0 if x0 is None else x0, dtype=float)
    if not model.params.shape.in_D(x0):
        raise OutOfDomain(f"x0={x0} not in the state space")
    times = simulation_grid(model, T, grid)
    sampler = model.sampler or euler_sampler(model.params, euler_dt)
    n_blocks = -(-n_paths // BLOCK)
    rngs = block_rng(seed, n_blocks)
    sizes = [min(BLOCK, n_paths - b * BLOCK) for b in range(n_blocks)]

    def run(b):
        return sampler(times, x0, rngs[b], sizes[b])

    workers = n_threads(threads)
    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(run, range(n_blocks)))
    else:
        out = [run(b) for b in range(n_blocks)]
    X = np.concatenate([o[0] for o in out])
    L = np.concatenate([o[1] for o in out])
    return PathEnsemble(model.name, times, X, L, seed)


# ---------------------------------------------------------------------------
# generic Euler scheme


def _sample_jumps(spec: JumpMeasureSpec, counts: np.ndarray, d: int, rng) -> np.ndarray:
    """Sum of ``counts[p]`` iid draws from the normalised measure ``spec``."""
    out = np.zeros((counts.size, d))
    total = counts.sum()
    if total == 0:
        return out
    comps = spec.components
    w = np.array([c.mass() for c in comps])
    owner = np.repeat(np.arange(counts.size), counts)
    which = rng.choice(len(comps), size=total, p=w / w.sum())
    draws = np.zeros((total, d))
    for j, c in enumerate(comps):
        idx = np.nonzero(which == j)[0]
        if idx.size == 0:
            continue
        if isinstance(c, PointMass):
            draws[idx] = np.array(c.location)
        elif isinstance(c, ExponentialDensity):
            draws[idx, c.axis] = rng.exponential(1.0 / c.rate, idx.size)
        elif isinstance(c, GaussianDensity):
            for k in range(d):
                s = np.sqrt(c.var[k])
                if c.restricted and k < c.m and s > 0:
                    a = -c.mean[k] / s
                    draws[idx, k] = stats.truncnorm.rvs(a, np.inf, loc=c.mean[k], scale=s,
                                                        size=idx.size, random_state=rng)
                else:
                    draws[idx, k] = c.mean[k] + s * rng.standard_normal(idx.size)
        else:
            raise ConfigError(f"cannot sample from {type(c).__name__}")
    np.add.at(out, owner, draws)
    return out


def _infinitely_divisible_step(x, beta, alpha, mu, dt, rng, I):
    """One draw from the law with triplet ``(beta(x), alpha(x), mu(x)) * dt``."""
    n, d = x.shape
    weights = np.concatenate([np.ones((n, 1)), x[:, list(I)]], axis=1)
    idx = [0] + [1 + i for i in I]
    H = np.column_stack([mu[i].h_moment(d) for i in idx])
    drift = weights @ (beta[idx] - H.T)
    cov = np.einsum("pi,ijk->pjk", weights, alpha[idx])
    step = drift * dt
    if np.any(cov):
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))[:, None, :]
        step += np.einsum("pjk,pk->pj", root, rng.standard_normal((n, d))) * np.sqrt(dt)
    for w, i in zip(weights.T, idx):
        mass = mu[i].mass()
        if mass > 0:
            counts = rng.poisson(np.clip(w, 0.0, None) * mass * dt)
            step += _sample_jumps(mu[i], counts, d, rng)
    return step


def euler_sampler(p: AffineParameterSet, dt_max: float = 1e-2):
    """Euler scheme with full truncation of the nonnegative coordinates."""
    I, d, m = list(p.shape.I), p.d, p.shape.m

    def sample(grid, x0, rng, n_paths):
        X = np.empty((n_paths, len(grid), d))
        L = np.empty_like(X)
        cur = np.broadcast_to(x0, (n_paths, d)).astype(float).copy()
        X[:, 0] = L[:, 0] = cur
        for k in range(1, len(grid)):
            a, b = grid[k - 1], grid[k]
            n_sub = max(1, int(np.ceil((b - a) / dt_max)))
            sub = np.linspace(a, b, n_sub + 1)
            seg = p.driver.segment_over(a, b)
            for s0, s1 in zip(sub[:-1], sub[1:]):
                if seg.is_zero:
                    break
                mid = 0.5 * (s0 + s1)
                h = seg.density(mid) * (s1 - s0)
                pos = cur.copy()
                pos[:, :m] = np.clip(pos[:, :m], 0.0, None)
                cur = cur + _infinitely_divisible_step(pos, np.asarray(p.beta(mid)), np.asarray(p.alpha(mid)),
                                                       p.mu(mid), h, rng, I)
            L[:, k] = cur
            if p.driver.is_atom(b):
                tr = p.gamma.get(float(b))
                if isinstance(tr, EnhancedJump):
                    pos = cur.copy()
                    pos[:, :m] = np.clip(pos[:, :m], 0.0, None)
                    cur = cur + _infinitely_divisible_step(pos, np.asarray(tr.beta), np.asarray(tr.alpha),
                                                           tr.mu, 1.0, rng, I)
                elif tr is not None:
                    raise ConfigError(f"no sampler for the black-box jump transform at t={b}")
            X[:, k] = cur
        return X, L

    return sample


# ---------------------------------------------------------------------------
# empirical characteristic functions


def _complex_mean_se(y: np.ndarray):
    n = y.size
    est = complex(np.mean(y))
    var = np.var(y.real, ddof=1) + np.var(y.imag, ddof=1)
    return est, float(np.sqrt(var / n))


def empirical_charfn(e: PathEnsemble, s_index: int, u, x=None):
    """Estimate ``E[exp<u, X_T> | X_s = x]`` with ``T`` the last grid time.

    For ``s_index = 0`` (or when ``X_s`` is the same on every path) this is
    the plain sample mean with its standard error.  Otherwise
    ``exp<u, X_T>`` is regressed on ``X_s`` with the log-affine model
    ``exp(a + <b, X_s>)`` by nonlinear least squares, and the fitted value at
    ``x`` (default: the sample mean of ``X_s``) is returned together with a
    heteroscedasticity-robust delta-method standard error.
    """
    if e.n_paths < MIN_PATHS:
        raise InsufficientPaths(f"need at least {MIN_PATHS} paths, got {e.n_paths}")
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    Y = np.exp(e.paths[:, -1, :] @ u)
    if not np.all(np.isfinite(Y)):
        raise OutOfDomain("exp<u, X_T> overflowed; u is outside the Fourier domain of the sample")
    Z = e.paths[:, s_index, :]
    spread = np.ptp(Z, axis=0)
    if s_index == 0 or np.all(spread == 0):
        return _complex_mean_se(Y)
    x = Z.mean(axis=0) if x is None else np.asarray(x, dtype=float)
    return _log_affine_fit(Y, Z, x)


def _log_affine_fit(Y, Z, x):
    n, d = Z.shape
    # linear start, then exp(a + <b, z>) by least squares on real parameters
    design = np.column_stack([np.ones(n), Z - x])
    coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
    c0 = coef[0] if abs(coef[0]) > 1e-12 else 1e-12
    a0 = np.log(complex(c0))
    b0 = coef[1:] / c0

    def unpack(th):
        a = th[0] + 1j * th[1]
        b = th[2:2 + d] + 1j * th[2 + d:]
        return a, b

    def resid(th):
        a, b = unpack(th)
        r = Y - np.exp(a + (Z - x) @ b)
        return np.concatenate([r.real, r.imag])

    th0 = np.concatenate([[a0.real, a0.imag], np.real(b0), np.imag(b0)])
    sol = optimize.least_squares(resid, th0, method="lm", xtol=1e-12, ftol=1e-12)
    a, b = unpack(sol.x)
    est = complex(np.exp(a))
    J = sol.jac
    r = sol.fun
    bread = np.linalg.pinv(J.T @ J)
    # per-path score contributions: rows p and n+p belong to path p
    scores = J[:n] * r[:n, None] + J[n:] * r[n:, None]
    meat = scores.T @ scores
    cov = bread @ meat @ bread
    # gradient of exp(a) w.r.t. (Re a, Im a, ...) at centred x
    g_re = np.zeros(sol.x.size)
    g_im = np.zeros(sol.x.size)
    g_re[0], g_im[0] = est.real, est.imag
    g_re[1], g_im[1] = -est.imag, est.real
    se = np.sqrt(max(g_re @ cov @ g_re + g_im @ cov @ g_im, 0.0))
    return est, float(se)


def _zscore(diff, se, scale=1.0):
    """``|diff| / se``, treating differences at rounding level as exact agreement."""
    if abs(diff) <= 1e-12 * max(1.0, scale):
        return 0.0
    if se == 0:
        return float("inf")
    return float(abs(diff) / se)


def compare_charfn(model: ModelSpec, x0, T: float, u_grid, n_paths: int, seed: int, *,
                   s: float = 0.0, threads: int | None = None, z_max: float = 4.0) -> dict:
    """Compare solver and Monte Carlo values of ``E[exp<u, X_T> | X_s]`` on ``u_grid``."""
    x0 = np.asarray(model.x0 if x0 is None else x0, dtype=float)
    grid = [0.0, s, T] if s > 0 else None
    ens = simulate(model, x0, T, n_paths, seed, grid=grid, threads=threads)
    s_index = int(np.searchsorted(ens.times, s))
    rows = []
    for u in u_grid:
        u = np.atleast_1d(np.asarray(u, dtype=complex))
        sol = solve_backward(model.params, T, u)
        xs = x0 if s == 0 else ens.paths[:, s_index, :].mean(axis=0)
        exact = complex(np.exp(sol.phi_at(s) + sol.psi_at(s) @ xs))
        est, se = empirical_charfn(ens, s_index, u, xs)
        rows.append({"u": [_c(v) for v in u], "solver": _c(exact), "mc": _c(est), "se": se,
                     "z": _zscore(exact - est, se, abs(exact))})
    zmax = max(r["z"] for r in rows) if rows else 0.0
    return {"model": model.name, "T": T, "s": s, "n_paths": n_paths, "seed": seed,
            "rows": rows, "max_z": zmax, "passed": bool(zmax <= z_max)}


def martingale_check(model: ModelSpec, x0, T: float, u, n_paths: int, seed: int, *,
                     times=None, threads: int | None = None, z_max: float = 4.0) -> dict:
    """Check that ``exp(phi_s(T,u) + <psi_s(T,u), X_s>)`` has constant mean in ``s``."""
    x0 = np.asarray(model.x0 if x0 is None else x0, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    ens = simulate(model, x0, T, n_paths, seed, grid=times, threads=threads)
    sol = solve_backward(model.params, T, u, checkpoints=tuple(ens.times))
    target = complex(np.exp(sol.phi_at(0.0) + sol.psi_at(0.0) @ x0))
    rows = []
    for k, s in enumerate(ens.times):
        M = np.exp(sol.phi_at(s) + ens.paths[:, k, :] @ sol.psi_at(s))
        est, se = _complex_mean_se(M)
        rows.append({"s": float(s), "mean": _c(est), "se": se, "z": _zscore(est - target, se, abs(target))})
    zmax = max(r["z"] for r in rows)
    return {"model": model.name, "T": T, "u": [_c(v) for v in u], "target": _c(target),
            "rows": rows, "max_z": zmax, "passed": bool(zmax <= z_max)}


def _c(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}
