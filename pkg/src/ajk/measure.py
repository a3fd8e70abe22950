"""The driving measure ``A`` and Lebesgue-Stieltjes calculus against it.

``A`` is a nondecreasing cadlag function on ``[0, T_max]`` with ``A(0) = 0``.
It is stored as a piecewise-polynomial density for the continuous part plus
a finite list of atoms.  All integrals over ``(s, t]`` follow the usual
convention: an atom at ``s`` is excluded, an atom at ``t`` is included.
Atom times are compared exactly, so callers should reuse the floats stored
in :attr:`DriverMeasure.atom_times`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import quad_vec
from scipy.linalg import expm

from . import _dopri
from .errors import (
    BlowUp,
    ConfigError,
    OutOfDomain,
    PreconditionViolated,
    QuadratureFailure,
)

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10


@dataclass(frozen=True)
class Segment:
    """Density ``a(t) = sum_k coeffs[k] t**k`` of ``dA^c/dt`` on ``[t0, t1]``."""

    t0: float
    t1: float
    coeffs: tuple = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.t1 > self.t0:
            raise ConfigError(f"segment [{self.t0}, {self.t1}] is empty")
        if not self.is_zero and self._min_density() < -1e-14:
            raise ConfigError(f"density on [{self.t0}, {self.t1}] takes negative values")

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)

    def _min_density(self) -> float:
        pts = [self.t0, self.t1]
        if len(self.coeffs) > 2:
            crit = npoly.polyroots(npoly.polyder(self.coeffs))
            pts += [r.real for r in np.atleast_1d(crit)
                    if abs(r.imag) < 1e-12 and self.t0 < r.real < self.t1]
        return float(np.min(npoly.polyval(np.array(pts), self.coeffs)))

    def density(self, t):
        return npoly.polyval(t, self.coeffs)

    def mass(self, s: float, t: float) -> float:
        """``A^c(t) - A^c(s)`` restricted to this segment."""
        lo, hi = max(s, self.t0), min(t, self.t1)
        if hi <= lo or self.is_zero:
            return 0.0
        anti = npoly.polyint(self.coeffs)
        return float(npoly.polyval(hi, anti) - npoly.polyval(lo, anti))


@dataclass(frozen=True)
class DriverMeasure:
    """Continuous density segments covering ``[0, T_max]`` plus atoms in ``(0, T_max]``."""

    segments: tuple
    atoms: tuple = ()

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ConfigError("driver needs at least one segment")
        if segs[0].t0 != 0.0:
            raise ConfigError("first segment must start at 0")
        for a, b in zip(segs, segs[1:]):
            if a.t1 != b.t0:
                raise ConfigError("segments must be contiguous")
        atoms = tuple(sorted((float(t), float(m)) for t, m in self.atoms))
        horizon = segs[-1].t1
        for i, (t, m) in enumerate(atoms):
            if not 0.0 < t <= horizon:
                raise ConfigError(f"atom at {t} outside (0, {horizon}]")
            if not m > 0.0:
                raise ConfigError(f"atom at {t} has non-positive mass {m}")
            if i and atoms[i - 1][0] == t:
                raise ConfigError(f"duplicate atom at {t}")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "atoms", atoms)

    # constructors -------------------------------------------------------
    @classmethod
    def lebesgue(cls, horizon: float, atoms: Iterable = ()) -> "DriverMeasure":
        return cls((Segment(0.0, float(horizon)),), tuple(atoms))

    @classmethod
    def pure_atoms(cls, times: Sequence[float], sizes=1.0, horizon=None) -> "DriverMeasure":
        times = [float(t) for t in times]
        sizes = np.broadcast_to(np.asarray(sizes, dtype=float), (len(times),))
        horizon = float(max(times)) if horizon is None else float(horizon)
        return cls((Segment(0.0, horizon, (0.0,)),), tuple(zip(times, sizes)))

    # basic queries ------------------------------------------------------
    @property
    def horizon(self) -> float:
        return self.segments[-1].t1

    @property
    def atom_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.atoms])

    @property
    def atom_sizes(self) -> np.ndarray:
        return np.array([m for _, m in self.atoms])

    def atom_mass(self, t: float) -> float:
        """``Delta A_t``; zero if ``t`` carries no atom."""
        for ta, m in self.atoms:
            if ta == t:
                return m
        return 0.0

    def is_atom(self, t: float) -> bool:
        return any(ta == t for ta, _ in self.atoms)

    def atoms_in(self, s: float, t: float) -> list:
        """Atoms with ``s < t_j <= t``, in increasing time order."""
        return [(ta, m) for ta, m in self.atoms if s < ta <= t]

    def breakpoints(self, s: float = 0.0, t: float | None = None) -> list:
        """Sorted segment boundaries and atom times in ``[s, t]``."""
        t = self.horizon if t is None else t
        pts = {s, t}
        pts.update(seg.t0 for seg in self.segments if s < seg.t0 < t)
        pts.update(ta for ta, _ in self.atoms if s < ta < t)
        return sorted(pts)

    def segment_over(self, lo: float, hi: float) -> Segment:
        """The segment containing the open interval ``(lo, hi)``."""
        mid = 0.5 * (lo + hi)
        for seg in self.segments:
            if seg.t0 <= mid <= seg.t1:
                return seg
        raise OutOfDomain(f"({lo}, {hi}) not inside [0, {self.horizon}]")

    def density(self, t: float) -> float:
        """Right-continuous density of ``A^c`` at ``t``."""
        for seg in self.segments:
            if seg.t0 <= t < seg.t1:
                return float(seg.density(t))
        return float(self.segments[-1].density(t))

    def _check_time(self, t):
        if not 0.0 <= t <= self.horizon:
            raise OutOfDomain(f"time {t} outside [0, {self.horizon}]")

    def __call__(self, t: float) -> float:
        return eval_A(self, t)

    # serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        segs = []
        for seg in self.segments:
            if len(seg.coeffs) == 1:
                dens = {"kind": "const", "coeffs": [seg.coeffs[0]]}
            else:
                dens = {"kind": "poly", "coeffs": list(seg.coeffs)}
            segs.append({"t0": seg.t0, "t1": seg.t1, "density": dens})
        return {"segments": segs, "atoms": [{"t": t, "dA": m} for t, m in self.atoms]}

    @classmethod
    def from_dict(cls, data: dict) -> "DriverMeasure":
        try:
            segs = []
            for s in data["segments"]:
                dens = s.get("density", {"kind": "const", "coeffs": [1.0]})
                if dens["kind"] not in ("const", "poly"):
                    raise ConfigError(f"unknown density kind {dens['kind']!r}")
                coeffs = dens["coeffs"]
                if dens["kind"] == "const" and len(coeffs) != 1:
                    raise ConfigError("const density takes exactly one coefficient")
                segs.append(Segment(float(s["t0"]), float(s["t1"]), tuple(coeffs)))
            atoms = [(a["t"], a["dA"]) for a in data.get("atoms", [])]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed driver description: {exc}") from exc
        return cls(tuple(segs), tuple(atoms))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DriverMeasure":
        return cls.from_dict(json.loads(text))


def eval_A(A: DriverMeasure, t: float) -> float:
    """Cadlag value ``A(t)``, including an atom sitting at ``t``."""
    A._check_time(t)
    cont = sum(seg.mass(0.0, t) for seg in A.segments)
    return cont + sum(m for ta, m in A.atoms if ta <= t)


def _as_vector_fn(g):
    """Wrap ``g`` so quadrature sees a real vector; returns the wrapper and output shape."""
    def wrapped(t):
        v = np.asarray(g(t), dtype=complex)
        return np.concatenate([v.real.ravel(), v.imag.ravel()])
    return wrapped


def _partition(A: DriverMeasure, s: float, t: float, breaks=()) -> list:
    pts = set(A.breakpoints(s, t))
    pts.update(b for b in breaks if s < b < t)
    return sorted(pts)


def integrate_continuous(A: DriverMeasure, g: Callable, s: float, t: float, breaks=()) -> complex | np.ndarray:
    """``int_(s,t] g dA^c`` by adaptive Gauss-Kronrod on each smooth piece.

    ``breaks`` lists extra points where ``g`` is not smooth.
    """
    A._check_time(s)
    A._check_time(t)
    if t < s:
        raise OutOfDomain(f"integration bounds reversed: ({s}, {t}]")
    shape = np.shape(g(s))
    fn = _as_vector_fn(g)
    total = np.zeros(2 * int(np.prod(shape, dtype=int)))
    for seg in A.segments:
        lo, hi = max(s, seg.t0), min(t, seg.t1)
        if hi <= lo or seg.is_zero:
            continue
        inner = [b for b in breaks if lo < b < hi]
        res, _err, info = quad_vec(
            lambda r: fn(r) * seg.density(r), lo, hi,
            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
            points=inner or None, full_output=True,
        )
        if info.status != 0:
            raise QuadratureFailure(f"quadrature on [{lo}, {hi}] did not converge: {info.message}")
        total += res
    k = total.size // 2
    out = (total[:k] + 1j * total[k:]).reshape(shape)
    return out if shape else complex(out)


def integrate(A: DriverMeasure, g: Callable, s: float, t: float, breaks=()) -> complex | np.ndarray:
    """``int_(s,t] g dA``: continuous part by quadrature plus ``sum g(t_j) Delta A_j``."""
    total = integrate_continuous(A, g, s, t, breaks)
    for ta, m in A.atoms_in(s, t):
        total = total + np.asarray(g(ta), dtype=complex) * m
    if np.ndim(total) == 0:
        total = complex(total)
        return total.real if total.imag == 0 else total
    return total if np.iscomplexobj(total) and np.any(total.imag) else np.real(total)


def pseudo_exponential(A: DriverMeasure, L: Callable, t: float, T: float, breaks=()) -> complex | float:
    """``exp(int_(t,T] L dA^c) * prod_{t < t_j <= T} (1 + L(t_j) Delta A_j)``.

    Raises :class:`PreconditionViolated` if a real factor ``1 + L Delta A``
    is negative.
    """
    if t > T:
        raise OutOfDomain(f"need t <= T, got t={t}, T={T}")
    cont = integrate_continuous(A, L, t, T, breaks)
    value = np.exp(cont)
    for ta, m in A.atoms_in(t, T):
        factor = 1.0 + complex(L(ta)) * m
        if factor.imag == 0 and factor.real < 0:
            raise PreconditionViolated(f"1 + L dA = {factor.real} < 0 at atom t={ta}")
        value = value * factor
    value = complex(value)
    return value.real if value.imag == 0 else value


def gronwall_bound(A: DriverMeasure, delta: float, L: Callable | float, t: float, T: float) -> float:
    """Gronwall-type bound ``delta * exp(int_(t,T] L dA)`` for measure equations."""
    Lf = L if callable(L) else (lambda _s, c=float(L): c)
    return float(delta * np.exp(np.real(integrate(A, Lf, t, T))))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class StieltjesTrajectory:
    """Cadlag path known at breakpoints, with left limits at atoms.

    ``values[k]`` is the right value at ``times[k]``; ``left`` maps each atom
    time to the left limit there.  Between consecutive breakpoints the path
    is evaluated with the stored continuous extension ``dense[k]``, a
    callable on ``[times[k], times[k+1]]``; when it is ``None`` the path is
    interpolated linearly.
    """

    times: np.ndarray
    values: np.ndarray
    left: dict = field(default_factory=dict)
    dense: tuple = ()

    def _interval(self, t):
        if not self.times[0] <= t <= self.times[-1]:
            raise OutOfDomain(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def __call__(self, t: float) -> np.ndarray:
        k = self._interval(t)
        if self.times[k] == t:
            return self.values[k]
        piece = self.dense[k] if self.dense else None
        if piece is not None:
            return piece(t)
        t0, t1 = self.times[k], self.times[k + 1]
        y0 = self.values[k]
        y1 = self.left.get(float(t1), self.values[k + 1])
        w = (t - t0) / (t1 - t0)
        return (1 - w) * y0 + w * y1

    def left_limit(self, t: float) -> np.ndarray:
        if float(t) in self.left:
            return self.left[float(t)]
        k = self._interval(t)
        if self.times[k] == t and k > 0:
            piece = self.dense[k - 1] if self.dense else None
            if piece is not None:
                return piece(t)
            return self.values[k]
        return self(t)

    def component(self, index) -> "StieltjesTrajectory":
        """Trajectory of ``values[..., index]``."""
        dense = tuple(None if d is None else _Sliced(d, index) for d in self.dense)
        return StieltjesTrajectory(
            self.times,
            self.values[:, index],
            {t: v[index] for t, v in self.left.items()},
            dense,
        )


@dataclass(frozen=True)
class _Sliced:
    fn: Callable
    index: object

    def __call__(self, t):
        return self.fn(t)[self.index]


@dataclass(frozen=True)
class _Piecewise:
    """Several dense pieces glued together on one breakpoint interval."""

    starts: np.ndarray
    pieces: tuple

    def __call__(self, t):
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        k = min(max(k, 0), len(self.pieces) - 1)
        return self.pieces[k](t)


@dataclass
class MeasureODEResult:
    trajectory: StieltjesTrajectory
    error_estimate: float
    n_steps: int
    jumps: list


def _ode_nodes(A: DriverMeasure, T: float, checkpoints=()) -> list:
    nodes = set(A.breakpoints(0.0, T))
    nodes.update(float(c) for c in checkpoints if 0.0 < c < T)
    return sorted(nodes)


def solve_measure_ode(
    A: DriverMeasure,
    F: Callable[[float, np.ndarray], np.ndarray],
    u,
    T: float,
    *,
    jump: Callable[[float, np.ndarray, float], np.ndarray] | None = None,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    checkpoints: Iterable[float] = (),
    cap: float = np.inf,
    post_step: Callable[[float, np.ndarray], np.ndarray] | None = None,
) -> MeasureODEResult:
    """Solve ``dg/dA = -F(t, g)`` on ``[0, T]`` with ``g(T) = u``.

    Equivalently ``g(t) = u + int_(t,T] F(s, g(s)) dA_s``.  Between atoms the
    equation is the ODE ``g' = -a(t) F(t, g)``; at an atom ``t_j`` the left
    limit is ``jump(t_j, g(t_j), Delta A)``, by default
    ``g(t_j) + F(t_j, g(t_j)) Delta A``.  ``post_step`` sees every accepted
    state (including left limits) and may project it or raise.
    """
    A._check_time(T)
    y = np.atleast_1d(np.asarray(u, dtype=complex)).copy()
    scalar = np.ndim(u) == 0
    if jump is None:
        def jump(t, g, m):
            return g + np.asarray(F(t, g), dtype=complex) * m

    def guard(t, g):
        if post_step is not None:
            g = post_step(t, g)
        if not np.all(np.isfinite(g)) or np.max(np.abs(g)) > cap:
            raise BlowUp(f"solution exceeded {cap:g} in norm at t={t}", t=t)
        return g

    nodes = _ode_nodes(A, T, checkpoints)
    times, values, dense = [T], [y.copy()], []
    left, jumps = {}, []
    err_total, n_steps = 0.0, 0
    t = T
    for lo in reversed(nodes[:-1]):
        m = A.atom_mass(t)
        if m > 0:
            y_left = guard(t, np.asarray(jump(t, y, m), dtype=complex))
            jumps.append((t, y.copy(), y_left.copy()))
            left[t] = y_left
            y = y_left
        seg = A.segment_over(lo, t)
        if seg.is_zero:
            piece = _Const(y.copy())
        else:
            def rhs(s, g, seg=seg):
                return -seg.density(s) * np.asarray(F(s, g), dtype=complex)
            seg_res = _dopri.integrate(rhs, t, y, lo, rtol=rtol, atol=atol, post_step=guard)
            err_total += seg_res.error_estimate
            n_steps += seg_res.n_steps
            y = seg_res.ys[-1]
            # dense pieces run backwards; store them ordered by start time
            steps = seg_res.dense[::-1]
            starts = np.array([d.t_old + d.h for d in steps])
            piece = _Piecewise(starts, tuple(steps)) if steps else _Const(y.copy())
        times.append(lo)
        values.append(y.copy())
        dense.append(piece)
        t = lo
    order = slice(None, None, -1)
    vals = np.array(values[order])
    traj = StieltjesTrajectory(
        np.array(times[order]),
        vals[:, 0] if scalar else vals,
        {k: (v[0] if scalar else v) for k, v in left.items()},
        tuple(_Sliced(d, 0) if scalar else d for d in dense[order]),
    )
    return MeasureODEResult(traj, err_total, n_steps, jumps[::-1])


@dataclass(frozen=True)
class _Const:
    value: np.ndarray

    def __call__(self, t):
        return self.value


# ---------------------------------------------------------------------------
# linear equation dg/dA = -L g by backward product integration

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_SQ3 = np.sqrt(3.0)


@dataclass(frozen=True)
class _Propagate:
    """Exact-order continuous extension on one panel, recomputed on demand."""

    A: DriverMeasure
    L: Callable
    t_hi: float
    g_hi: np.ndarray

    def __call__(self, t):
        return _panel_propagator(self.A, self.L, t, self.t_hi) @ self.g_hi


def _panel_propagator(A, L, lo, hi):
    """Map ``g(hi) -> g(lo)`` over an atom-free panel (4th order Magnus)."""
    h = hi - lo
    if h == 0:
        return np.eye(np.shape(np.atleast_2d(L(hi)))[0])
    seg = A.segment_over(lo, hi)
    nodes = lo + 0.5 * h * (_GL_X + 1.0)
    vals = [seg.density(s) * np.atleast_2d(np.asarray(L(s), dtype=complex)) for s in nodes]
    omega = 0.5 * h * sum(w * v for w, v in zip(_GL_W, vals))
    if omega.shape[0] == 1:
        return np.exp(omega)
    t1 = lo + 0.5 * h * (1 - 1 / _SQ3)
    t2 = lo + 0.5 * h * (1 + 1 / _SQ3)
    M1 = seg.density(t1) * np.asarray(L(t1), dtype=complex)
    M2 = seg.density(t2) * np.asarray(L(t2), dtype=complex)
    omega = omega - (_SQ3 * h * h / 12.0) * (M2 @ M1 - M1 @ M2)
    return expm(omega)


def solve_linear(
    A: DriverMeasure,
    L: Callable,
    terminal,
    T: float,
    *,
    breaks: Iterable[float] = (),
    panel: float = 0.05,
) -> StieltjesTrajectory:
    """Solve ``dg/dA = -L g`` with ``g(T) = terminal`` on ``[0, T]``.

    ``L`` returns a scalar or a square matrix.  The continuous part is
    propagated panel by panel with a 4th order Magnus step whose first
    term is integrated by 10-point Gauss-Legendre (exact when ``L`` and
    the density are polynomials of moderate degree on each panel, and the
    commutator term vanishes for scalar or commuting ``L``).  Atoms apply
    ``g(t-) = (1 + L(t) Delta A) g(t)``.  ``breaks`` marks points where
    ``L`` is not smooth; they become panel boundaries.
    """
    A._check_time(T)
    scalar = np.ndim(terminal) == 0
    g = np.atleast_1d(np.asarray(terminal, dtype=complex)).copy()
    d = g.size
    nodes = set(A.breakpoints(0.0, T))
    nodes.update(float(b) for b in breaks if 0.0 < b < T)
    nodes = sorted(nodes)
    grid = [nodes[0]]
    for a, b in zip(nodes, nodes[1:]):
        n = max(1, int(np.ceil((b - a) / panel)))
        grid.extend(np.linspace(a, b, n + 1)[1:-1].tolist())
        grid.append(b)
    times, values, dense, left = [T], [g.copy()], [], {}
    t = T
    for lo in reversed(grid[:-1]):
        m = A.atom_mass(t)
        if m > 0 and t not in left:
            Lt = np.atleast_2d(np.asarray(L(t), dtype=complex))
            factor = np.eye(d) + Lt * m
            diag = np.diag(factor)
            if np.allclose(factor, np.diag(diag)) and np.any((diag.imag == 0) & (diag.real < 0)):
                raise PreconditionViolated(f"1 + L dA < 0 at atom t={t}")
            g = factor @ g
            left[t] = g.copy()
        if A.segment_over(lo, t).is_zero:
            dense.append(_Const(g.copy()))
        else:
            dense.append(_Propagate(A, L, t, g.copy()))
            g = _panel_propagator(A, L, lo, t) @ g
        times.append(lo)
        values.append(g.copy())
        t = lo
    vals = np.array(values[::-1])
    dense = dense[::-1]
    if scalar:
        return StieltjesTrajectory(
            np.array(times[::-1]), vals[:, 0],
            {k: v[0] for k, v in left.items()},
            tuple(_Sliced(p, 0) for p in dense),
        )
    return StieltjesTrajectory(np.array(times[::-1]), vals, left, tuple(dense))
