"""Parameter sets of Levy-Khintchine type and their admissibility.

The state space is ``D = R_{>=0}^m x R^n`` and the Fourier-Laplace domain is
``U = C_{<=0}^m x iR^n``.  A parameter set bundles, for each index
``i = 0..d``, a drift ``beta_i``, a diffusion matrix ``alpha_i`` and a jump
measure ``mu_i`` (all possibly time dependent), together with the jump
transforms ``gamma`` acting at the atoms of the driver.

The truncation function is componentwise, ``h_k(x) = x_k 1{|x_k| <= 1}``,
with the boundary included.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate as sint
from scipy.special import erfc, ndtr

from .errors import (
    ConfigError,
    DivergentIntegral,
    DomainViolation,
    NotAnAtom,
    OutOfDomain,
    QuadratureFailure,
)
from .measure import DriverMeasure

DOMAIN_TOL = 1e-10
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class StateSpaceShape:
    """``m`` nonnegative coordinates followed by ``n`` real ones."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 0 or self.n < 0 or self.m + self.n < 1:
            raise ConfigError(f"invalid state space shape (m={self.m}, n={self.n})")

    @property
    def d(self) -> int:
        return self.m + self.n

    @property
    def I(self) -> range:  # noqa: E743
        return range(self.m)

    @property
    def J(self) -> range:
        return range(self.m, self.d)

    def in_D(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == (self.d,) and bool(np.all(np.isfinite(x))) and bool(np.all(x[: self.m] >= -tol))

    def in_U(self, u, tol: float = DOMAIN_TOL) -> bool:
        u = np.asarray(u, dtype=complex)
        if u.shape != (self.d,) or not np.all(np.isfinite(u)):
            return False
        return bool(np.all(u.real[: self.m] <= tol) and np.all(np.abs(u.real[self.m:]) <= tol))


# ---------------------------------------------------------------------------
# jump measure components


def _h(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1.0, x, 0.0)


@dataclass(frozen=True)
class PointMass:
    """``weight * delta_location``."""

    location: tuple
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(v) for v in np.atleast_1d(self.location)))
        if self.weight < 0:
            raise ConfigError("point mass weight must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.location)

    def mass(self) -> float:
        return self.weight

    def exp_integral(self, u) -> complex:
        return self.weight * (np.exp(np.dot(self.location, u)) - 1.0)

    def h_moment(self) -> np.ndarray:
        return self.weight * _h(self.location)

    def h_sq_moment(self) -> np.ndarray:
        return self.weight * _h(self.location) ** 2

    def first_moment(self) -> np.ndarray:
        return self.weight * np.array(self.location)

    def supported_in(self, shape: StateSpaceShape) -> bool:
        x = np.array(self.location)
        return self.weight == 0 or (shape.in_D(x) and bool(np.any(x != 0)))


def _phi(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _moments_1d(m, s, lo, hi):
    """Mass, first and second moment of ``N(m, s^2)`` on ``[lo, hi]``."""
    if s == 0:
        inside = float(lo <= m <= hi)
        return inside, inside * m, inside * m * m
    a, b = (lo - m) / s, (hi - m) / s
    Pa, Pb = ndtr(a), ndtr(b)
    pa = 0.0 if np.isinf(a) else _phi(a)
    pb = 0.0 if np.isinf(b) else _phi(b)
    P = Pb - Pa
    m1 = m * P + s * (pa - pb)
    lo_term = 0.0 if np.isinf(a) else (lo + m) * pa
    hi_term = 0.0 if np.isinf(b) else (hi + m) * pb
    m2 = (m * m + s * s) * P + s * (lo_term - hi_term)
    return P, m1, m2


@dataclass(frozen=True)
class GaussianDensity:
    """``weight * N(mean, diag(var))``, optionally restricted to ``D``.

    Zero variances are allowed and give a point mass along that axis.  When
    ``restricted`` is set the measure is the Gaussian density multiplied by
    the indicator of ``x_k >= 0`` for the first ``m`` axes (not
    renormalised).
    """

    mean: tuple
    var: tuple
    weight: float = 1.0
    restricted: bool = False
    m: int = 0

    def __post_init__(self):
        mean = tuple(float(v) for v in np.atleast_1d(self.mean))
        var = tuple(float(v) for v in np.atleast_1d(self.var))
        if len(mean) != len(var):
            raise ConfigError("mean and var must have the same length")
        if any(v < 0 for v in var):
            raise ConfigError("variances must be nonnegative")
        if self.weight < 0:
            raise ConfigError("gaussian weight must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def _region(self, k):
        lo = 0.0 if (self.restricted and k < self.m) else -np.inf
        return lo, np.inf

    def _axis_masses(self):
        return np.array([
            _moments_1d(mk, np.sqrt(vk), *self._region(k))[0]
            for k, (mk, vk) in enumerate(zip(self.mean, self.var))
        ])

    def mass(self) -> float:
        return self.weight * float(np.prod(self._axis_masses()))

    def exp_integral(self, u) -> complex:
        u = np.asarray(u, dtype=complex)
        total = 1.0 + 0j
        for k, (mk, vk) in enumerate(zip(self.mean, self.var)):
            base = np.exp(mk * u[k] + 0.5 * vk * u[k] ** 2)
            lo, _ = self._region(k)
            if lo == 0.0:
                if vk == 0:
                    base = base if mk >= 0 else 0.0
                else:
                    s = np.sqrt(vk)
                    base = base * 0.5 * erfc(-(mk + vk * u[k]) / (s * _SQRT2))
            total *= base
        return self.weight * total - self.mass()

    def _axis_moments(self, hi_cut):
        out = []
        for k, (mk, vk) in enumerate(zip(self.mean, self.var)):
            lo, hi = self._region(k)
            if hi_cut:
                lo, hi = max(lo, -1.0), 1.0
            out.append(_moments_1d(mk, np.sqrt(vk), lo, hi))
        return out

    def _product_moment(self, order, truncated):
        masses = self._axis_masses()
        mom = self._axis_moments(truncated)
        res = np.empty(self.dim)
        for k in range(self.dim):
            others = np.prod(np.delete(masses, k))
            res[k] = mom[k][order] * others
        return self.weight * res

    def h_moment(self) -> np.ndarray:
        return self._product_moment(1, True)

    def h_sq_moment(self) -> np.ndarray:
        return self._product_moment(2, True)

    def first_moment(self) -> np.ndarray:
        return self._product_moment(1, False)

    def supported_in(self, shape: StateSpaceShape) -> bool:
        if self.weight == 0:
            return True
        for k in shape.I:
            if self.restricted and k < self.m:
                continue
            if self.var[k] > 0 or self.mean[k] < 0:
                return False
        if all(v == 0 for v in self.var) and all(v == 0 for v in self.mean):
            return False
        return True


@dataclass(frozen=True)
class ExponentialDensity:
    """``weight * rate * exp(-rate x) dx`` on the positive half of ``axis``."""

    rate: float
    axis: int
    dim: int
    weight: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("exponential rate must be positive")
        if not 0 <= self.axis < self.dim:
            raise ConfigError("exponential axis out of range")

    def mass(self) -> float:
        return self.weight

    def exp_integral(self, u) -> complex:
        z = complex(np.asarray(u, dtype=complex)[self.axis])
        if z.real >= self.rate:
            raise DivergentIntegral(f"exponential moment diverges for Re u = {z.real} >= {self.rate}")
        return self.weight * (self.rate / (self.rate - z) - 1.0)

    def _axis_vec(self, value):
        v = np.zeros(self.dim)
        v[self.axis] = value
        return self.weight * v

    def h_moment(self) -> np.ndarray:
        r = self.rate
        return self._axis_vec((1.0 - np.exp(-r) * (1.0 + r)) / r)

    def h_sq_moment(self) -> np.ndarray:
        r = self.rate
        return self._axis_vec((2.0 - np.exp(-r) * (r * r + 2 * r + 2)) / (r * r))

    def first_moment(self) -> np.ndarray:
        return self._axis_vec(1.0 / self.rate)

    def supported_in(self, shape: StateSpaceShape) -> bool:
        return True


@dataclass(frozen=True)
class NumericDensity:
    """``weight * f(x) dx`` on the box ``[lower, upper]``, integrated numerically.

    Meant for one- or two-dimensional densities; higher dimensions work but
    are slow.
    """

    density: Callable
    lower: tuple
    upper: tuple
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _integrate(self, g):
        def f(*x):
            return g(np.array(x)) * self.density(np.array(x))

        opts = []
        for lo, hi in zip(self.lower, self.upper):
            pts = [p for p in (-1.0, 0.0, 1.0) if lo < p < hi]
            opts.append({"points": pts or None, "limit": 200, "epsabs": 1e-14, "epsrel": 1e-12})
        ranges = list(zip(self.lower, self.upper))
        try:
            if self.dim == 1:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", sint.IntegrationWarning)
                    out = sint.quad(f, *ranges[0], full_output=1, **opts[0])
                val, err = out[0], out[1]
                if len(out) > 3:
                    if "divergent" in out[3]:
                        raise DivergentIntegral("numeric jump-measure integral diverges")
                    if err > 1e-8 * max(1.0, abs(val)):
                        raise QuadratureFailure(out[3].splitlines()[0])
            else:
                val, _err = sint.nquad(f, ranges, opts=opts)
        except (DivergentIntegral, QuadratureFailure):
            raise
        except Exception as exc:  # scipy raises plain errors on bad integrands
            raise QuadratureFailure(str(exc)) from exc
        if not np.isfinite(val):
            raise DivergentIntegral("numeric jump-measure integral is not finite")
        return self.weight * val

    def mass(self) -> float:
        return self._integrate(lambda x: 1.0)

    def exp_integral(self, u) -> complex:
        u = np.asarray(u, dtype=complex)
        re = self._integrate(lambda x: np.real(np.expm1(x @ u)))
        im = self._integrate(lambda x: np.imag(np.exp(x @ u)))
        return complex(re, im)

    def h_moment(self) -> np.ndarray:
        return np.array([self._integrate(lambda x, k=k: _h(x[k])) for k in range(self.dim)])

    def h_sq_moment(self) -> np.ndarray:
        return np.array([self._integrate(lambda x, k=k: _h(x[k]) ** 2) for k in range(self.dim)])

    def first_moment(self) -> np.ndarray:
        return np.array([self._integrate(lambda x, k=k: x[k]) for k in range(self.dim)])

    def supported_in(self, shape: StateSpaceShape) -> bool:
        return all(self.lower[k] >= 0 for k in shape.I)


@dataclass(frozen=True)
class JumpMeasureSpec:
    """Finite sum of jump-measure components on ``R^d``."""

    components: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def is_zero(self) -> bool:
        return all(c.mass() == 0 for c in self.components) if self.components else True

    def lk_integral(self, u) -> complex:
        """``int (exp<x,u> - 1 - <h(x),u>) mu(dx)``."""
        if not self.components:
            return 0j
        u = np.asarray(u, dtype=complex)
        total = 0j
        for c in self.components:
            total += c.exp_integral(u) - np.dot(c.h_moment(), u)
        if not np.isfinite(total):
            raise DivergentIntegral("Levy-Khintchine integral is not finite")
        return complex(total)

    def exp_integral(self, u) -> complex:
        return complex(sum(c.exp_integral(u) for c in self.components))

    def _sum(self, attr, d):
        out = np.zeros(d)
        for c in self.components:
            out = out + getattr(c, attr)()
        return out

    def h_moment(self, d: int) -> np.ndarray:
        return self._sum("h_moment", d)

    def h_sq_moment(self, d: int) -> np.ndarray:
        return self._sum("h_sq_moment", d)

    def first_moment(self, d: int) -> np.ndarray:
        return self._sum("first_moment", d)

    def mass(self) -> float:
        return float(sum(c.mass() for c in self.components))

    def supported_in(self, shape: StateSpaceShape) -> bool:
        return all(c.supported_in(shape) for c in self.components)

    def validate(self, shape: StateSpaceShape) -> "JumpMeasureSpec":
        """Raise :class:`DomainViolation` unless every component lives on ``D minus {0}``."""
        for c in self.components:
            if not c.supported_in(shape):
                raise DomainViolation(f"{type(c).__name__} puts mass outside the state space")
        return self


def levy_khintchine_exponent(beta_i, alpha_i, mu_i: JumpMeasureSpec, u) -> complex:
    """``<beta_i,u> + 1/2 <u, alpha_i u> + int (e^<x,u> - 1 - <h(x),u>) mu_i(dx)``."""
    u = np.asarray(u, dtype=complex)
    val = np.dot(beta_i, u) + 0.5 * (u @ np.asarray(alpha_i) @ u)
    return complex(val + mu_i.lk_integral(u))


def _lk_all(beta, alpha, mu, u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    lin = beta @ u
    quad = 0.5 * np.einsum("j,ijk,k->i", u, alpha, u)
    jumps = np.array([m.lk_integral(u) for m in mu])
    return lin + quad + jumps


# ---------------------------------------------------------------------------
# time dependence


@dataclass(frozen=True)
class Const:
    """Time-constant array-valued parameter."""

    value: object

    def __call__(self, t):
        return self.value


@dataclass(frozen=True)
class PiecewisePoly:
    """Scalar piecewise polynomial: ``coeffs[k]`` (ascending powers of t) on ``[breaks[k], breaks[k+1])``."""

    breaks: tuple
    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "coeffs", tuple(tuple(float(c) for c in cs) for cs in self.coeffs))
        if len(self.coeffs) != len(self.breaks) - 1 or len(self.breaks) < 2:
            raise ConfigError("piecewise polynomial needs len(coeffs) == len(breaks) - 1 >= 1")

    def __call__(self, t):
        k = int(np.searchsorted(self.breaks, t, side="right")) - 1
        k = min(max(k, 0), len(self.coeffs) - 1)
        return float(np.polynomial.polynomial.polyval(t, self.coeffs[k]))


def _scalar_fn(spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict) and "breaks" in spec:
        return PiecewisePoly(spec["breaks"], spec["coeffs"])
    raise ConfigError(f"cannot read scalar parameter {spec!r}")


@dataclass(frozen=True)
class ArrayOfScalars:
    """Array whose entries are floats or scalar functions of time."""

    entries: np.ndarray  # object array

    def __call__(self, t):
        f = np.vectorize(lambda e: e(t) if callable(e) else e, otypes=[float])
        return f(self.entries)


def _time_fn(spec, shape):
    if spec is None:
        return Const(np.zeros(shape))
    if callable(spec):
        return spec
    return Const(np.asarray(spec, dtype=float).reshape(shape))


@dataclass(frozen=True)
class _ConstMu:
    value: tuple

    def __call__(self, t):
        return self.value


# ---------------------------------------------------------------------------
# jump transforms at atoms


@dataclass(frozen=True)
class EnhancedJump:
    """Jump transform given by Levy-Khintchine triplets (infinitely divisible case).

    ``gamma_i(u) = <beta_i,u> + 1/2 <u,alpha_i u> + int (...) mu_i``, with
    ``beta`` of shape ``(d+1, d)`` and ``alpha`` of shape ``(d+1, d, d)``.
    These are the raw jump triplets; the enhanced parameters of the
    unified equations are these divided by ``Delta A``.
    """

    beta: np.ndarray
    alpha: np.ndarray
    mu: tuple

    def __call__(self, u):
        vals = _lk_all(self.beta, self.alpha, self.mu, u)
        return complex(vals[0]), vals[1:]


@dataclass(frozen=True)
class BlackBoxJump:
    """Jump transform given only as callables ``gamma0(u)`` and ``gammabar(u)``."""

    gamma0: Callable
    gammabar: Callable | None = None
    name: str = "black-box"
    spec: dict | None = None

    def __call__(self, u):
        u = np.asarray(u, dtype=complex)
        g0 = complex(self.gamma0(u))
        gb = np.zeros(u.shape, dtype=complex) if self.gammabar is None else np.asarray(self.gammabar(u), dtype=complex)
        return g0, gb


def _principal_log(z):
    return np.log(np.asarray(z, dtype=complex))


def _table_bernoulli(p, axis=0, d=1):
    """Jump of size 1 with probability ``p`` on ``axis``."""
    if not 0.0 <= p <= 1.0:
        from .errors import InvalidProbability
        raise InvalidProbability(f"p={p} not in [0, 1]")
    return BlackBoxJump(lambda u: _principal_log(1.0 - p + p * np.exp(u[axis])), None,
                        "bernoulli", {"name": "bernoulli", "p": p, "axis": axis})


def _table_sign_gaussian(axis=0, d=1):
    """Jump ``alpha + beta sqrt(x)`` with ``alpha`` = +-1 fair and ``beta`` standard normal."""
    def g0(u):
        return np.log(np.cosh(u[axis]))

    def gbar(u):
        out = np.zeros(d, dtype=complex)
        out[axis] = 0.5 * u[axis] ** 2
        return out

    return BlackBoxJump(g0, gbar, "sign_gaussian", {"name": "sign_gaussian", "axis": axis})


def _table_ar1(a, sigma, axis=0, d=1):
    """``x -> a x + sigma N(0,1)`` on ``axis``."""
    def g0(u):
        return 0.5 * sigma ** 2 * u[axis] ** 2

    def gbar(u):
        out = np.zeros(d, dtype=complex)
        out[axis] = (a - 1.0) * u[axis]
        return out

    return BlackBoxJump(g0, gbar, "ar1_gaussian", {"name": "ar1_gaussian", "a": a, "sigma": sigma, "axis": axis})


JUMP_TABLE = {
    "bernoulli": _table_bernoulli,
    "sign_gaussian": _table_sign_gaussian,
    "ar1_gaussian": _table_ar1,
}


# ---------------------------------------------------------------------------
# parameter set


@dataclass(frozen=True)
class AffineParameterSet:
    """``(A, gamma, alpha, beta, mu)`` on a state space of shape ``(m, n)``.

    ``beta(t)`` has shape ``(d+1, d)`` with row ``i`` the vector ``beta_i``;
    ``alpha(t)`` has shape ``(d+1, d, d)``; ``mu(t)`` is a tuple of ``d+1``
    :class:`JumpMeasureSpec`.  ``gamma`` maps atom times to jump transforms;
    atoms without an entry carry the zero transform.
    """

    shape: StateSpaceShape
    driver: DriverMeasure
    beta: Callable
    alpha: Callable
    mu: Callable
    gamma: Mapping = field(default_factory=dict)

    @classmethod
    def build(cls, shape, driver, beta=None, alpha=None, mu=None, gamma=None):
        """Assemble from arrays or callables; missing pieces default to zero."""
        d = shape.d
        beta_fn = _time_fn(beta, (d + 1, d))
        alpha_fn = _time_fn(alpha, (d + 1, d, d))
        if mu is None:
            mu_fn = _ConstMu(tuple(JumpMeasureSpec() for _ in range(d + 1)))
        elif callable(mu):
            mu_fn = mu
        else:
            mu = tuple(m if isinstance(m, JumpMeasureSpec) else JumpMeasureSpec(tuple(m)) for m in mu)
            if len(mu) != d + 1:
                raise ConfigError(f"need {d + 1} jump measures, got {len(mu)}")
            mu_fn = _ConstMu(mu)
        gamma = dict(gamma or {})
        for t in gamma:
            if not driver.is_atom(t):
                raise NotAnAtom(f"jump transform given at t={t}, which is not an atom of A")
        return cls(shape, driver, beta_fn, alpha_fn, mu_fn, gamma)

    @property
    def d(self) -> int:
        return self.shape.d

    def transform_at(self, t: float):
        if not self.driver.is_atom(t):
            raise NotAnAtom(f"t={t} is not an atom of A")
        return self.gamma.get(float(t))

    # evaluation -----------------------------------------------------------
    def lk_all(self, t: float, u) -> np.ndarray:
        """All ``d+1`` exponents ``(F, R_1..R_d)`` at ``(t, u)`` without a domain check."""
        return _lk_all(np.asarray(self.beta(t)), np.asarray(self.alpha(t)), self.mu(t), u)

    def to_dict(self) -> dict:
        return params_to_dict(self)


def _check_u(p: AffineParameterSet, u):
    u = np.asarray(u, dtype=complex)
    if not p.shape.in_U(u):
        raise OutOfDomain(f"u={u} not in C_<=0^{p.shape.m} x iR^{p.shape.n}")
    return u


def F_eval(p: AffineParameterSet, t: float, u) -> complex:
    """``F(t, u)``, the index-0 exponent of the continuous part."""
    u = _check_u(p, u)
    return levy_khintchine_exponent(p.beta(t)[0], p.alpha(t)[0], p.mu(t)[0], u)


def R_eval(p: AffineParameterSet, t: float, u) -> np.ndarray:
    """``(R_1, ..., R_d)(t, u)``."""
    u = _check_u(p, u)
    return p.lk_all(t, u)[1:]


def gamma_eval(p: AffineParameterSet, t: float, u):
    """``(gamma_0(t,u), gammabar(t,u))`` at an atom ``t``."""
    u = _check_u(p, u)
    tr = p.transform_at(t)
    if tr is None:
        return 0j, np.zeros(p.d, dtype=complex)
    return tr(u)


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class Condition:
    name: str
    passed: bool
    status: str = "verified"  # or "unverified"
    detail: str = ""


@dataclass
class AdmissibilityReport:
    conditions: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failed(self) -> list:
        return [c.name for c in self.conditions if not c.passed]

    def unverified(self) -> list:
        return [c.name for c in self.conditions if c.status == "unverified"]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "failed": self.failed(),
            "unverified": self.unverified(),
            "conditions": [c.__dict__ for c in self.conditions],
        }


class _Collector:
    def __init__(self):
        self.found = {}

    def add(self, name, ok, where="", status="verified"):
        prev = self.found.get(name)
        if prev is None:
            self.found[name] = Condition(name, bool(ok), status, "" if ok else where)
        elif prev.passed and not ok:
            self.found[name] = Condition(name, False, status, where)

    def conditions(self):
        return list(self.found.values())


def _psd(a, tol):
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, a.T, atol=tol):
        return False
    return bool(np.min(np.linalg.eigvalsh(a)) >= -tol * max(1.0, np.max(np.abs(a))))


def _zero(a, tol):
    return bool(np.all(np.abs(np.asarray(a)) <= tol))


def _H(mu, d):
    """``H[k, i] = int h_k dmu_i``."""
    return np.column_stack([m.h_moment(d) for m in mu])


def _M(mu, shape, i):
    """Finiteness integrand of the jump measure ``mu_i``; ``i = 0`` means the constant part."""
    d = shape.d
    h1 = mu.h_moment(d)
    h2 = mu.h_sq_moment(d)
    lin_axes = [k for k in shape.I if k != i - 1]
    sq_axes = list(shape.J) + ([i - 1] if i >= 1 and i - 1 in shape.I else [])
    return float(np.sum(h1[lin_axes]) + np.sum(h2[sq_axes]))


def _sample_times(driver: DriverMeasure, n: int):
    out = []
    for seg in driver.segments:
        if seg.is_zero:
            continue
        out.extend(seg.t0 + (k + 0.5) / n * (seg.t1 - seg.t0) for k in range(n))
    return out


def _check_triplets(col, shape, beta, alpha, mu, where, tol, at_atom):
    I, J, d = list(shape.I), list(shape.J), shape.d
    pre = "jump_" if at_atom else ""
    try:
        H = _H(mu, d)
    except (DivergentIntegral, QuadratureFailure):
        H = None
    col.add(pre + "alpha_psd", all(_psd(alpha[i], tol) for i in range(d + 1)), where)
    col.add(pre + "alpha0_II_zero", _zero(alpha[0][np.ix_(I, I)], tol), where)
    if at_atom:
        col.add(pre + "alpha_i_II_zero", all(_zero(alpha[1 + i][np.ix_(I, I)], tol) for i in I), where)
    else:
        col.add(pre + "alpha_i_offdiag_zero", all(
            _zero(alpha[1 + i][np.ix_([k for k in I if k != i], [k for k in I if k != i])], tol) for i in I), where)
    col.add(pre + "alpha_J_zero", all(_zero(alpha[1 + j], tol) for j in J), where)
    # component k of beta_j for k in I, j in J
    col.add(pre + "beta_IJ_zero", all(_zero(beta[1 + j][I], tol) for j in J), where)
    col.add(pre + "mu_support", all(m.supported_in(shape) for m in mu), where)
    col.add(pre + "mu_J_zero", all(mu[1 + j].is_zero for j in J), where)
    if H is None:
        # the drift clauses need the truncated first moments
        col.add(pre + "mu_integrable", False, where)
        return
    # compensated constant drift on the nonnegative axes
    col.add(pre + "beta0_in_D", bool(np.all(beta[0][I] - H[I, 0] >= -tol)), where)
    if at_atom:
        ok = True
        for i in I:
            for k in I:
                val = beta[1 + k][i] - H[i, 1 + k] + (1.0 if i == k else 0.0)
                ok &= val >= -tol
        col.add(pre + "beta_II", ok, where)
    else:
        ok = all(beta[1 + k][i] - H[i, 1 + k] >= -tol for i in I for k in I if k != i)
        col.add(pre + "beta_cross_I", ok, where)
    try:
        finite = all(np.isfinite(_M(mu[i], shape, i)) for i in [0] + [1 + k for k in I])
    except (DivergentIntegral, QuadratureFailure):
        finite = False
    col.add(pre + "mu_integrable", finite, where)


def check_admissible(p: AffineParameterSet, n_samples: int = 7, tol: float = 1e-12) -> AdmissibilityReport:
    """Check the admissibility conditions and the integrability assumption.

    Continuous-part conditions are checked at ``n_samples`` points inside
    each segment where ``A`` has positive density.  Atoms with
    Levy-Khintchine triplets are checked clause by clause; atoms with a
    black-box transform only get ``gamma(t, 0) = 0`` checked and are
    reported as unverified for Fourier positivity.
    """
    col = _Collector()
    shape, d = p.shape, p.d
    for t in _sample_times(p.driver, n_samples):
        _check_triplets(col, shape, np.asarray(p.beta(t)), np.asarray(p.alpha(t)), p.mu(t),
                        f"t={t}", tol, at_atom=False)
    for t in p.gamma:
        if not p.driver.is_atom(t):
            col.add("gamma_at_atoms", False, f"t={t}")
    for t, _m in p.driver.atoms:
        tr = p.gamma.get(t)
        if tr is None:
            continue
        g0, gb = tr(np.zeros(d, dtype=complex))
        col.add("gamma_zero_at_zero", abs(g0) <= tol and _zero(gb, tol), f"t={t}")
        if isinstance(tr, EnhancedJump):
            _check_triplets(col, shape, np.asarray(tr.beta), np.asarray(tr.alpha), tr.mu,
                            f"atom t={t}", tol, at_atom=True)
        else:
            col.add("jump_fourier_positivity", True, status="unverified")
    col.add("integrability", _integrability(p), "")
    return AdmissibilityReport(col.conditions())


def _param_size(beta, alpha, mu, shape):
    total = np.linalg.norm(beta) + np.linalg.norm(alpha)
    total += sum(_M(mu[i], shape, i) for i in [0] + [1 + k for k in shape.I])
    return total


def _integrability(p: AffineParameterSet) -> bool:
    try:
        cont = 0.0
        for seg in p.driver.segments:
            if seg.is_zero:
                continue
            val, _err = sint.quad(
                lambda t: seg.density(t) * _param_size(np.asarray(p.beta(t)), np.asarray(p.alpha(t)), p.mu(t), p.shape),
                seg.t0, seg.t1, limit=200)
            cont += val
        for t, _m in p.driver.atoms:
            tr = p.gamma.get(t)
            if isinstance(tr, EnhancedJump):
                cont += _param_size(tr.beta, tr.alpha, tr.mu, p.shape)
        return bool(np.isfinite(cont))
    except (DivergentIntegral, QuadratureFailure):
        return False


def riccati_bound_constant(p: AffineParameterSet, t: float) -> np.ndarray:
    """Constants ``C_i(t)``, ``i`` in I, with ``Re R_i(t,u) <= C_i ((Re u_i)^2 - Re u_i)`` on U.

    Valid for admissible parameters at points where ``A`` has density.
    """
    beta, alpha, mu = np.asarray(p.beta(t)), np.asarray(p.alpha(t)), p.mu(t)
    out = np.empty(p.shape.m)
    for i in p.shape.I:
        curv = 0.5 * alpha[1 + i][i, i] + 0.5 * mu[1 + i].h_sq_moment(p.d)[i]
        out[i] = max(abs(beta[1 + i][i]), curv)
    return out


# ---------------------------------------------------------------------------
# JSON model description


def _component_from_dict(c: dict, d: int, m: int):
    kind = c.get("kind")
    w = float(c.get("weight", 1.0))
    if kind == "point":
        return PointMass(tuple(c["x"]), w)
    if kind == "gaussian":
        return GaussianDensity(tuple(c["mean"]), tuple(c["var"]), w, bool(c.get("restricted", False)), m)
    if kind == "exponential":
        return ExponentialDensity(float(c["rate"]), int(c["axis"]), d, w)
    raise ConfigError(f"unknown jump component kind {kind!r}")


def _component_to_dict(c) -> dict:
    if isinstance(c, PointMass):
        return {"kind": "point", "x": list(c.location), "weight": c.weight}
    if isinstance(c, GaussianDensity):
        return {"kind": "gaussian", "mean": list(c.mean), "var": list(c.var),
                "weight": c.weight, "restricted": c.restricted}
    if isinstance(c, ExponentialDensity):
        return {"kind": "exponential", "rate": c.rate, "axis": c.axis, "weight": c.weight}
    raise ConfigError(f"component {type(c).__name__} cannot be serialised")


def _mu_from_list(data, d, m):
    if data is None:
        return tuple(JumpMeasureSpec() for _ in range(d + 1))
    if len(data) != d + 1:
        raise ConfigError(f"mu needs {d + 1} entries")
    return tuple(JumpMeasureSpec(tuple(_component_from_dict(c, d, m) for c in comps)) for comps in data)


def _array_param(data, shape):
    if data is None:
        return Const(np.zeros(shape))
    arr = np.empty(shape, dtype=object)
    try:
        flat = np.array(data, dtype=object).reshape(shape)
    except ValueError as exc:
        raise ConfigError(f"parameter array has wrong shape, expected {shape}") from exc
    for idx in np.ndindex(shape):
        arr[idx] = _scalar_fn(flat[idx])
    if all(isinstance(e, float) for e in arr.flat):
        return Const(arr.astype(float))
    return ArrayOfScalars(arr)


def params_from_dict(data: dict) -> AffineParameterSet:
    """Read a parameter set from its JSON form (see the README for the schema)."""
    try:
        shape = StateSpaceShape(int(data["shape"]["m"]), int(data["shape"]["n"]))
        driver = DriverMeasure.from_dict(data["driver"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model description needs 'shape' and 'driver': {exc}") from exc
    d = shape.d
    beta = _array_param(data.get("beta"), (d + 1, d))
    alpha = _array_param(data.get("alpha"), (d + 1, d, d))
    mu = _mu_from_list(data.get("mu"), d, shape.m)
    gamma = {}
    for g in data.get("gamma", []):
        t = float(g["t"])
        kind, body = g.get("kind"), g.get("data", {})
        if kind == "enhanced":
            gamma[t] = EnhancedJump(
                np.asarray(body.get("beta", np.zeros((d + 1, d))), dtype=float).reshape(d + 1, d),
                np.asarray(body.get("alpha", np.zeros((d + 1, d, d))), dtype=float).reshape(d + 1, d, d),
                _mu_from_list(body.get("mu"), d, shape.m),
            )
        elif kind == "table":
            name = body.get("name")
            if name not in JUMP_TABLE:
                raise ConfigError(f"unknown tabulated jump transform {name!r}")
            kwargs = {k: v for k, v in body.items() if k != "name"}
            gamma[t] = JUMP_TABLE[name](**kwargs, d=d)
        else:
            raise ConfigError(f"unknown gamma kind {kind!r}")
    return AffineParameterSet.build(shape, driver, beta, alpha, mu, gamma)


def params_to_dict(p: AffineParameterSet) -> dict:
    """JSON form of a parameter set with constant continuous parameters."""
    if not (isinstance(p.beta, Const) and isinstance(p.alpha, Const) and isinstance(p.mu, _ConstMu)):
        raise ConfigError("only time-constant parameter sets can be serialised")
    gamma = []
    for t in sorted(p.gamma):
        tr = p.gamma[t]
        if isinstance(tr, EnhancedJump):
            gamma.append({"t": t, "kind": "enhanced", "data": {
                "beta": np.asarray(tr.beta).tolist(), "alpha": np.asarray(tr.alpha).tolist(),
                "mu": [[_component_to_dict(c) for c in m.components] for m in tr.mu]}})
        elif isinstance(tr, BlackBoxJump) and tr.spec is not None:
            body = {k: v for k, v in tr.spec.items()}
            gamma.append({"t": t, "kind": "table", "data": body})
        else:
            raise ConfigError(f"jump transform at t={t} cannot be serialised")
    return {
        "shape": {"m": p.shape.m, "n": p.shape.n},
        "driver": p.driver.to_dict(),
        "beta": np.asarray(p.beta.value).tolist(),
        "alpha": np.asarray(p.alpha.value).tolist(),
        "mu": [[_component_to_dict(c) for c in m.components] for m in p.mu.value],
        "gamma": gamma,
    }


def load_params(path) -> AffineParameterSet:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return params_from_dict(data)
