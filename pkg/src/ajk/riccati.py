"""Backward solution of the generalised measure Riccati equations.

For terminal time ``T`` and ``u`` in ``U`` the pair ``(phi, psi)`` solves

    dpsi/dt = -a(t) R(t, psi),   dphi/dt = -a(t) F(t, psi)

between atoms (``a`` the density of ``A^c``), with

    psi(t-) = psi(t) + gammabar(t, psi(t)),   phi(t-) = phi(t) + gamma_0(t, psi(t))

at every atom ``t <= T`` and ``phi(T) = 0``, ``psi(T) = u``.  An atom at
``T`` itself is crossed first, so ``phi_s(T, u)`` collects every atom in
``(s, T]``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, DomainExit, OutOfDomain
from .levy import AffineParameterSet, _check_u
from .measure import StieltjesTrajectory, solve_measure_ode

BLOWUP_CAP = 1e8
PROJECT_TOL = 1e-13


@dataclass(frozen=True)
class JumpRecord:
    """Crossing of the atom at ``t``: right values and increments ``X(t) - X(t-)``."""

    t: float
    phi: complex
    psi: np.ndarray
    dphi: complex
    dpsi: np.ndarray

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "phi": _cjson(self.phi),
            "psi": [_cjson(v) for v in self.psi],
            "dphi": _cjson(self.dphi),
            "dpsi": [_cjson(v) for v in self.dpsi],
        }


def _cjson(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}


@dataclass
class RiccatiSolution:
    """``phi_s(T, u)`` and ``psi_s(T, u)`` for ``s`` in ``[0, T]``.

    ``trajectory`` holds the stacked vector ``(phi, psi_1..psi_d)``.
    """

    T: float
    u: np.ndarray
    trajectory: StieltjesTrajectory
    jump_log: list
    error_estimate: float
    n_steps: int
    shape: object = None

    @property
    def phi(self) -> StieltjesTrajectory:
        return self.trajectory.component(0)

    @property
    def psi(self) -> StieltjesTrajectory:
        return self.trajectory.component(slice(1, None))

    def phi_at(self, s: float) -> complex:
        return complex(self.trajectory(s)[0])

    def psi_at(self, s: float) -> np.ndarray:
        return np.array(self.trajectory(s)[1:])

    def to_csv(self) -> str:
        """Rows ``t, Re phi, Im phi, Re psi_1, Im psi_1, ...`` at the breakpoints."""
        d = self.u.size
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t", "re_phi", "im_phi"]
        for k in range(1, d + 1):
            header += [f"re_psi_{k}", f"im_psi_{k}"]
        w.writerow(header)
        for t, y in zip(self.trajectory.times, self.trajectory.values):
            row = [repr(float(t))]
            for v in y:
                row += [repr(float(v.real)), repr(float(v.imag))]
            w.writerow(row)
        return buf.getvalue()

    def jumps_json(self) -> str:
        return json.dumps({"T": self.T, "u": [_cjson(v) for v in self.u],
                           "jump_log": [j.to_dict() for j in self.jump_log],
                           "error_estimate": self.error_estimate}, sort_keys=True, indent=1)


def solve_backward(
    p: AffineParameterSet,
    T: float,
    u,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    checkpoints=(),
    cap: float = BLOWUP_CAP,
    domain_tol: float = 1e-10,
) -> RiccatiSolution:
    """Solve the Riccati system backwards from ``T`` to ``0``.

    Raises :class:`OutOfDomain` for ``T`` outside ``(0, T_max]`` or ``u``
    outside ``U``, :class:`BlowUp` when ``|psi|`` exceeds ``cap`` and
    :class:`DomainExit` when ``psi`` leaves ``U`` by more than
    ``domain_tol``.
    """
    if not 0.0 < T <= p.driver.horizon:
        raise OutOfDomain(f"T={T} outside (0, {p.driver.horizon}]")
    u = _check_u(p, u)
    m, d = p.shape.m, p.d

    def rhs(t, y):
        return p.lk_all(t, y[1:])

    def jump(t, y, _dA):
        tr = p.gamma.get(t)
        if tr is None:
            return y.copy()
        g0, gb = tr(y[1:])
        out = y.copy()
        out[0] += g0
        out[1:] += gb
        return out

    def guard(t, y):
        psi = y[1:]
        if np.max(np.abs(psi)) > cap:
            raise BlowUp(f"|psi| exceeded {cap:g} at t={t}", t=t)
        re = psi.real
        if np.any(re[:m] > domain_tol) or np.any(np.abs(re[m:]) > domain_tol):
            raise DomainExit(f"psi={psi} left U at t={t}", t=t)
        small = np.zeros(d + 1, dtype=bool)
        small[1 + m:] = np.abs(y.real[1 + m:]) < PROJECT_TOL
        if np.any(small & (y.real != 0)):
            y = y.copy()
            y.real[small] = 0.0
        return y

    y0 = np.concatenate([[0j], u])
    res = solve_measure_ode(p.driver, rhs, y0, T, jump=jump, rtol=rtol, atol=atol,
                            checkpoints=checkpoints, cap=np.inf, post_step=guard)
    log = [
        JumpRecord(t, complex(right[0]), right[1:].copy(),
                   complex(right[0] - left[0]), right[1:] - left[1:])
        for t, right, left in res.jumps
    ]
    return RiccatiSolution(T, u, res.trajectory, log, res.error_estimate, res.n_steps, p.shape)


def char_fn(sol: RiccatiSolution, s: float, x) -> complex:
    """``E[exp<u, X_T> | X_s = x] = exp(phi_s + <psi_s, x>)``."""
    if not 0.0 <= s <= sol.T:
        raise OutOfDomain(f"s={s} outside [0, {sol.T}]")
    x = np.asarray(x, dtype=float)
    if sol.shape is not None and not sol.shape.in_D(x):
        raise OutOfDomain(f"x={x} not in the state space")
    y = sol.trajectory(s)
    return complex(np.exp(y[0] + np.dot(y[1:], x)))


@dataclass(frozen=True)
class SemiflowResiduals:
    phi: float
    psi: float

    @property
    def max(self) -> float:
        return max(self.phi, self.psi)


def semiflow_check(p: AffineParameterSet, T: float, u, r: float, s: float = 0.0, **kw) -> SemiflowResiduals:
    """Compare one solve from ``T`` with a solve to ``r`` restarted from ``psi_r``.

    Checks ``phi_s(T,u) = phi_r(T,u) + phi_s(r, psi_r(T,u))`` and
    ``psi_s(T,u) = psi_s(r, psi_r(T,u))`` at ``s <= r <= T``.
    """
    if not 0.0 <= s <= r <= T:
        raise OutOfDomain(f"need 0 <= s <= r <= T, got s={s}, r={r}, T={T}")
    full = solve_backward(p, T, u, checkpoints=(r, s), **kw)
    if r == 0.0:
        rest_phi, rest_psi = 0j, full.psi_at(0.0)
    else:
        rest = solve_backward(p, r, full.psi_at(r), checkpoints=(s,), **kw)
        rest_phi, rest_psi = rest.phi_at(s), rest.psi_at(s)
    phi_res = abs(full.phi_at(s) - (full.phi_at(r) + rest_phi))
    psi_res = float(np.max(np.abs(full.psi_at(s) - rest_psi)))
    return SemiflowResiduals(float(phi_res), psi_res)


@dataclass
class ConservativenessReport:
    verdict: str
    zero_residual: float
    perturbations: dict = field(default_factory=dict)

    @property
    def conservative(self) -> bool:
        return self.verdict == "conservative (numerically)"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "zero_residual": self.zero_residual,
                "perturbations": self.perturbations}


def conservativeness_check(p: AffineParameterSet, T: float | None = None,
                           eps=(1e-6, 1e-4), n_samples: int = 7) -> ConservativenessReport:
    """Numerical check that ``g = 0`` is the only solution of ``dg/dA = -Re R^I(t, g)``, ``g_T = 0``.

    First the residual of ``g = 0`` is measured (it must vanish).  Then the
    equation is solved from ``g_T = -eps * 1`` for each ``eps``; the model
    is reported conservative when every perturbed solution stays in
    ``[-eps, 0]`` up to rounding, i.e. does not drift away from zero.  A
    perturbation that grows is reported as ``inconclusive`` and one that
    explodes as ``blow-up``.
    """
    T = p.driver.horizon if T is None else T
    m, d = p.shape.m, p.d
    if m == 0:
        return ConservativenessReport("conservative (numerically)", 0.0, {"note": "no nonnegative coordinates"})

    def embed(g):
        u = np.zeros(d, dtype=complex)
        u[:m] = np.real(g)
        return u

    resid = 0.0
    for seg in p.driver.segments:
        if seg.is_zero:
            continue
        for k in range(n_samples):
            t = seg.t0 + (k + 0.5) / n_samples * (seg.t1 - seg.t0)
            resid = max(resid, float(np.max(np.abs(p.lk_all(t, np.zeros(d))[1:1 + m].real))))
    for t, _ in p.driver.atoms_in(0.0, T):
        tr = p.gamma.get(t)
        if tr is not None:
            resid = max(resid, float(np.max(np.abs(tr(np.zeros(d, dtype=complex))[1][:m].real))))

    def rhs(t, g):
        return p.lk_all(t, embed(g))[1:1 + m].real.astype(complex)

    def jump(t, g, _dA):
        tr = p.gamma.get(t)
        if tr is None:
            return g.copy()
        return g + tr(embed(g))[1][:m].real

    verdict = "conservative (numerically)" if resid <= 1e-12 else "inconclusive"
    details = {}
    for e in eps:
        try:
            res = solve_measure_ode(p.driver, rhs, -e * np.ones(m), T, jump=jump, cap=BLOWUP_CAP)
        except BlowUp as exc:
            details[repr(e)] = {"status": "blow-up", "t": exc.t}
            verdict = "blow-up"
            continue
        vals = np.real(res.trajectory.values)
        lefts = np.real(np.array(list(res.trajectory.left.values()))) if res.trajectory.left else np.zeros((0, m))
        allv = np.concatenate([vals.reshape(-1, m), lefts.reshape(-1, m)])
        worst = float(np.max(np.abs(allv)))
        positive = float(np.max(allv))
        ok = worst <= e * (1 + 1e-6) and positive <= 1e-12
        details[repr(e)] = {"status": "non-expanding" if ok else "expanding",
                            "max_abs": worst, "g0": np.real(res.trajectory.values[0]).tolist()}
        if not ok and verdict != "blow-up":
            verdict = "inconclusive"
    return ConservativenessReport(verdict, resid, details)
