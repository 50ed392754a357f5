"""Contact Hamiltonians on the circle, their Lagrangians, and grid functions.

The explicit family used throughout is

    H(x, p, u) = lam * u + p**2 / 2 + p * V(x),

whose Lagrangian is L(x, v, u) = (v - V(x))**2 / 2 - lam * u.  Custom
Hamiltonians are supported through vectorized callables; their Lagrangian
is obtained by a numerical Legendre transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import LegendreBracketFailure

TOL_LEGENDRE = 1e-9
H_FD = 1e-5
TWO_PI = 2.0 * np.pi

ArrayLike = float | np.ndarray


@dataclass(frozen=True)
class CircleDomain:
    """Uniform periodic grid on a circle of the given circumference."""

    n_points: int = 512
    circumference: float = TWO_PI

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ValueError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not self.circumference > 0:
            raise ValueError(f"circumference must be positive, got {self.circumference}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "circumference", float(self.circumference))

    @property
    def dx(self) -> float:
        return self.circumference / self.n_points

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dx

    def reduce(self, x: ArrayLike) -> ArrayLike:
        return np.mod(x, self.circumference)

    def signed_arc(self, a: ArrayLike, b: ArrayLike) -> ArrayLike:
        """Shortest signed displacement from a to b, in [-C/2, C/2)."""
        return signed_arc(a, b, self.circumference)

    def distance(self, a: ArrayLike, b: ArrayLike) -> ArrayLike:
        return np.abs(self.signed_arc(a, b))

    def nearest_index(self, x: ArrayLike) -> ArrayLike:
        return np.mod(np.rint(np.asarray(x) / self.dx).astype(np.int64), self.n_points)


def signed_arc(a: ArrayLike, b: ArrayLike, circumference: float) -> ArrayLike:
    half = 0.5 * circumference
    return np.mod(np.asarray(b) - np.asarray(a) + half, circumference) - half


@dataclass(frozen=True)
class Drift:
    """A periodic drift V with its derivative, both vectorized."""

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return self.value(x)

    @classmethod
    def sine(cls) -> "Drift":
        return cls(np.sin, np.cos, "sin")

    @classmethod
    def constant(cls, c: float) -> "Drift":
        c = float(c)
        return cls(lambda x: np.full_like(np.asarray(x, dtype=float), c),
                   lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   f"const:{c!r}")

    @classmethod
    def from_samples(cls, values: np.ndarray, circumference: float = TWO_PI,
                     name: str = "table") -> "Drift":
        """Periodic cubic spline through equally spaced samples on [0, C)."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size < 4:
            raise ValueError("a drift table needs at least 4 samples")
        knots = np.linspace(0.0, circumference, values.size + 1)
        spline = CubicSpline(knots, np.append(values, values[0]), bc_type="periodic")
        slope = spline.derivative()
        return cls(lambda x: spline(np.mod(x, circumference)),
                   lambda x: slope(np.mod(x, circumference)), name)

    @classmethod
    def from_table(cls, path: str | Path, circumference: float = TWO_PI) -> "Drift":
        """Read one sample per line (or a final column of a CSV) and spline it."""
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls.from_samples(data[:, -1], circumference, name=f"table:{path}")


@dataclass(frozen=True)
class HamiltonianModel:
    """A contact Hamiltonian H(x, p, u) on a circle.

    ``kind`` is ``"example-E"`` (closed forms from ``lam`` and ``drift``) or
    ``"custom"`` (user callables).  ``linear_in_u`` declares H affine in u,
    which lets the dynamic-programming step solve its implicit equation in
    closed form.
    """

    kind: str
    lam: float
    drift: Drift | None = None
    H: Callable | None = None
    grad: Callable | None = None
    lagrangian_fn: Callable | None = None
    linear_in_u: bool = False
    circumference: float = TWO_PI
    tol_legendre: float = TOL_LEGENDRE
    h_fd: float = H_FD
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in ("example-E", "custom"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.kind == "example-E" and self.drift is None:
            raise ValueError("example-E needs a drift")
        if self.kind == "custom" and self.H is None:
            raise ValueError("custom models need an H callable")
        if self.kind == "example-E":
            object.__setattr__(self, "linear_in_u", True)

    @property
    def is_affine(self) -> bool:
        return self.linear_in_u

    @property
    def u_rate(self) -> float:
        """dH/du for models affine in u."""
        if self.kind == "example-E":
            return float(self.lam)
        if not self.linear_in_u:
            raise ValueError("u_rate is only defined for models affine in u")
        h = self.h_fd
        return float((self.H(0.0, 0.0, h) - self.H(0.0, 0.0, -h)) / (2 * h))


def example_e(lam: float, drift: Drift | None = None,
              circumference: float = TWO_PI) -> HamiltonianModel:
    """H = lam*u + p^2/2 + p*V(x), with V = sin unless given."""
    drift = Drift.sine() if drift is None else drift
    return HamiltonianModel("example-E", float(lam), drift=drift,
                            circumference=circumference, name=f"E(lam={lam}, V={drift.name})")


def custom_model(H: Callable, lam: float, *, grad: Callable | None = None,
                 lagrangian: Callable | None = None, linear_in_u: bool = False,
                 circumference: float = TWO_PI, name: str = "custom") -> HamiltonianModel:
    return HamiltonianModel("custom", float(lam), H=H, grad=grad, lagrangian_fn=lagrangian,
                            linear_in_u=linear_in_u, circumference=circumference, name=name)


def hamiltonian(model: HamiltonianModel, x: ArrayLike, p: ArrayLike, u: ArrayLike) -> ArrayLike:
    if model.kind == "example-E":
        return model.lam * u + 0.5 * p * p + p * model.drift(x)
    return model.H(x, p, u)


def legendre_sup(H: Callable, x: ArrayLike, v: ArrayLike, u: ArrayLike,
                 tol: float = TOL_LEGENDRE, max_expand: int = 60):
    """Vectorized sup_p (v p - H(x, p, u)); returns (value, argmax).

    The bracket doubles outward until the concave objective drops at both
    ends, then ternary search shrinks it below ``tol``.
    """
    x, v, u = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, v, u)))

    def g(p):
        return v * p - H(x, p, u)

    lo = -np.ones_like(v)
    hi = np.ones_like(v)
    for _ in range(max_expand):
        grow = g(hi) >= g(0.5 * hi)
        if not grow.any():
            break
        hi = np.where(grow, 2.0 * hi, hi)
    else:
        raise LegendreBracketFailure("objective never decreased for large p; H is not superlinear")
    for _ in range(max_expand):
        grow = g(lo) >= g(0.5 * lo)
        if not grow.any():
            break
        lo = np.where(grow, 2.0 * lo, lo)
    else:
        raise LegendreBracketFailure("objective never decreased for small p; H is not superlinear")

    for _ in range(400):
        if np.max(hi - lo) <= tol:
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        left = g(m1) < g(m2)
        lo = np.where(left, m1, lo)
        hi = np.where(left, hi, m2)
    p = 0.5 * (lo + hi)
    return g(p), p


def lagrangian(model: HamiltonianModel, x: ArrayLike, v: ArrayLike, u: ArrayLike) -> ArrayLike:
    if model.kind == "example-E":
        d = v - model.drift(x)
        return 0.5 * d * d - model.lam * u
    if model.lagrangian_fn is not None:
        return model.lagrangian_fn(x, v, u)
    value, _ = legendre_sup(model.H, x, v, u, model.tol_legendre)
    return value


def lagrangian_momentum(model: HamiltonianModel, x: ArrayLike, v: ArrayLike,
                        u: ArrayLike) -> ArrayLike:
    """p = dL/dv, the momentum attached to a velocity."""
    if model.kind == "example-E":
        return v - model.drift(x)
    _, p = legendre_sup(model.H, x, v, u, model.tol_legendre)
    return p


def model_gradients(model: HamiltonianModel, x: ArrayLike, p: ArrayLike, u: ArrayLike):
    """(dH/dp, dH/dx, dH/du), closed form for example-E, central differences otherwise."""
    if model.kind == "example-E":
        V = model.drift(x)
        dV = model.drift.derivative(x)
        return p + V, p * dV, model.lam * np.ones_like(np.asarray(p + V, dtype=float))
    if model.grad is not None:
        return model.grad(x, p, u)
    h = model.h_fd
    H = model.H
    return ((H(x, p + h, u) - H(x, p - h, u)) / (2 * h),
            (H(x + h, p, u) - H(x - h, p, u)) / (2 * h),
            (H(x, p, u + h) - H(x, p, u - h)) / (2 * h))


def drift_velocity(model: HamiltonianModel, x: ArrayLike) -> ArrayLike:
    """Velocity of the zero-momentum motion, dH/dp(x, 0, 0)."""
    if model.kind == "example-E":
        return model.drift(x)
    return model_gradients(model, x, np.zeros_like(np.asarray(x, dtype=float)), 0.0)[0]


@dataclass(frozen=True)
class GridFunction:
    """Finite real values on the points of a :class:`CircleDomain`."""

    domain: CircleDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).ravel()
        if vals.size != self.domain.n_points:
            raise ValueError(f"expected {self.domain.n_points} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid functions hold finite values only")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, domain: CircleDomain, f: Callable[[np.ndarray], np.ndarray]):
        return cls(domain, np.broadcast_to(f(domain.x), (domain.n_points,)))

    @classmethod
    def constant(cls, domain: CircleDomain, c: float = 0.0):
        return cls(domain, np.full(domain.n_points, float(c)))

    @property
    def x(self) -> np.ndarray:
        return self.domain.x

    def __call__(self, x: ArrayLike) -> ArrayLike:
        """Periodic linear interpolation."""
        d = self.domain
        s = np.mod(np.asarray(x, dtype=float), d.circumference) / d.dx
        i = np.floor(s).astype(np.int64) % d.n_points
        th = s - np.floor(s)
        return (1 - th) * self.values[i] + th * self.values[(i + 1) % d.n_points]

    def sup_distance(self, other: "GridFunction") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def one_sided_slopes(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.values
        dx = self.domain.dx
        return (v - np.roll(v, 1)) / dx, (np.roll(v, -1) - v) / dx

    def centered_slope(self) -> np.ndarray:
        left, right = self.one_sided_slopes()
        return 0.5 * (left + right)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.domain, values)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the sample-based checks of the standing assumptions."""

    convex: bool
    superlinear: bool
    monotone_in_u: bool
    strictly_increasing_in_u: bool
    certificate_ok: bool | None
    details: dict

    @property
    def ok(self) -> bool:
        return (self.convex and self.superlinear and self.monotone_in_u
                and self.certificate_ok is not False)

    def as_dict(self) -> dict:
        return {"convex": self.convex, "superlinear": self.superlinear,
                "monotone_in_u": self.monotone_in_u,
                "strictly_increasing_in_u": self.strictly_increasing_in_u,
                "certificate": self.certificate_ok, "ok": self.ok, "details": self.details}


def validate_model(model: HamiltonianModel, certificate: Callable | None = None, *,
                   n_x: int = 64, p_max: float = 5.0, u_max: float = 2.0,
                   tol: float = 1e-9, cert_points: int = 512) -> ValidationReport:
    """Check convexity, superlinearity, u-monotonicity and an optional subsolution.

    ``certificate`` maps x to (phi(x), phi'(x)); it certifies admissibility
    when sup_x H(x, phi'(x), phi(x)) <= tol.
    """
    C = model.circumference
    xs = np.linspace(0.0, C, n_x, endpoint=False)
    ps = np.linspace(-p_max, p_max, 21)
    us = np.linspace(-u_max, u_max, 9)
    X, P, U = np.meshgrid(xs, ps, us, indexing="ij")
    h = model.h_fd

    hpp = (hamiltonian(model, X, P + h, U) - 2 * hamiltonian(model, X, P, U)
           + hamiltonian(model, X, P - h, U)) / h**2
    convex = bool(np.min(hpp) > 1e-6)

    Xs, Us = np.meshgrid(xs, us, indexing="ij")
    ratios = []
    for R in (10.0, 100.0, 1000.0):
        r = np.minimum(hamiltonian(model, Xs, R, Us), hamiltonian(model, Xs, -R, Us)) / R
        ratios.append(float(np.min(r)))
    superlinear = bool(ratios[0] < ratios[1] < ratios[2] and ratios[2] > 0)

    hu = model_gradients(model, X, P, U)[2]
    hu = np.broadcast_to(hu, X.shape)
    slack = max(tol, 10 * h)
    monotone = bool(np.min(hu) >= -slack and np.max(hu) <= model.lam + slack)
    strict = bool(monotone and np.min(hu) > slack)

    cert_ok = None
    cert_sup = None
    if certificate is not None:
        xc = np.linspace(0.0, C, cert_points, endpoint=False)
        phi, dphi = certificate(xc)
        cert_sup = float(np.max(hamiltonian(model, xc, dphi, phi)))
        cert_ok = bool(cert_sup <= tol)

    details = {"min_Hpp": float(np.min(hpp)), "growth_ratios": ratios,
               "Hu_range": [float(np.min(hu)), float(np.max(hu))],
               "certificate_sup": cert_sup}
    return ValidationReport(convex, superlinear, monotone, strict, cert_ok, details)
