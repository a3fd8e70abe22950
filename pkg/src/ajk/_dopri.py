"""Embedded Dormand-Prince 5(4) stepper for complex-valued systems.

Written out rather than borrowed from ``scipy.integrate.solve_ivp`` because
the solvers in this package need three things at once: complex state,
per-step hooks (projection, blow-up and domain checks) and an accumulated
local-error estimate that is reported alongside the solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between the 5th and embedded 4th order weights (7 stages, FSAL)
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# quartic continuous extension (Shampine's dense output for DOPRI5)
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@dataclass(frozen=True)
class DenseStep:
    """Continuous extension of one accepted step from ``t_old`` to ``t_old + h``."""

    t_old: float
    h: float
    y_old: np.ndarray
    Q: np.ndarray

    def __call__(self, t: float) -> np.ndarray:
        x = (t - self.t_old) / self.h
        p = np.cumprod(np.full(4, x))
        return self.y_old + self.h * (self.Q @ p)


@dataclass
class SegmentResult:
    ts: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    dense: list = field(default_factory=list)
    error_estimate: float = 0.0
    n_steps: int = 0


def _rms(x):
    return np.sqrt(np.mean(np.abs(x) ** 2))


def _initial_step(fun, t0, y0, f0, direction, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def integrate(
    fun: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: np.ndarray,
    t1: float,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    max_steps: int = 200_000,
    post_step: Callable[[float, np.ndarray], np.ndarray] | None = None,
) -> SegmentResult:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` (either direction).

    The returned step list includes ``t0`` and ends exactly at ``t1``.
    ``post_step`` is applied to every accepted state; it may modify the
    state (projection) or raise to abort the integration.
    """
    y = np.array(y0, dtype=complex)
    res = SegmentResult(ts=[t0], ys=[y.copy()])
    if t1 == t0:
        return res
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    t = t0
    f = fun(t, y)
    h_abs = _initial_step(fun, t, y, f, direction, rtol, atol, span)
    K = np.empty((7, y.size), dtype=complex)
    while direction * (t1 - t) > 0:
        if res.n_steps >= max_steps:
            raise RuntimeError(f"step limit reached at t={t}")
        min_step = 10 * abs(np.nextafter(t, direction * np.inf) - t)
        if h_abs < min_step:
            h_abs = min_step
        rejected = False
        while True:
            h = direction * h_abs
            t_new = t + h
            if direction * (t_new - t1) >= 0 or abs(t1 - t_new) < min_step:
                t_new = t1
                h = t_new - t
                h_abs = abs(h)
            K[0] = f
            for s in range(1, 6):
                dy = K[:s].T @ A[s] * h
                K[s] = fun(t + C[s] * h, y + dy)
            y_new = y + h * (K[:6].T @ B)
            f_new = fun(t_new, y_new)
            K[6] = f_new
            err_vec = h * (K.T @ E)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(err_vec / scale)
            if err < 1.0:
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
                if rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                break
            if h_abs <= min_step:
                raise RuntimeError(f"step size underflow at t={t}")
            h_abs *= max(MIN_FACTOR, SAFETY * err ** -0.2)
            rejected = True
        Q = K.T @ P
        res.dense.append(DenseStep(t, h, y.copy(), Q))
        res.error_estimate += float(np.max(np.abs(err_vec)))
        res.n_steps += 1
        if post_step is not None:
            y_proj = post_step(t_new, y_new)
            if y_proj is not y_new and not np.array_equal(y_proj, y_new):
                y_new = y_proj
                f_new = fun(t_new, y_new)
        t, y, f = t_new, y_new, f_new
        res.ts.append(t)
        res.ys.append(y.copy())
    return res
