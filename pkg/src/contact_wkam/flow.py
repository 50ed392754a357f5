"""The characteristic system of a contact Hamiltonian and its orbits.

    x' = H_p,   p' = -H_x - p * H_u,   u' = p * H_p - H.

Integration is fixed-step RK4, vectorized over batches of initial states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BlowUp, DegenerateEquilibrium
from .model import HamiltonianModel, hamiltonian, model_gradients, signed_arc

GUARD = 1e6


@dataclass(frozen=True)
class PhaseState:
    x: float
    p: float
    u: float

    def __post_init__(self):
        if not all(np.isfinite((self.x, self.p, self.u))):
            raise ValueError("phase states are finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.p, self.u], dtype=float)

    def distance(self, other: "PhaseState", circumference: float) -> float:
        """Product metric: arc(x, x') + |p - p'| + |u - u'|."""
        return float(abs(signed_arc(self.x, other.x, circumference))
                     + abs(self.p - other.p) + abs(self.u - other.u))


@dataclass(frozen=True)
class Trajectory:
    """States sampled at t0 + k*dt; ``dt`` is negative for reversed time.

    ``x`` is stored lifted (continuous across the period); use
    :meth:`state` for reduced positions.
    """

    t0: float
    dt: float
    states: np.ndarray
    circumference: float

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def p(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def u(self) -> np.ndarray:
        return self.states[:, 2]

    def state(self, k: int) -> PhaseState:
        x, p, u = self.states[k]
        return PhaseState(float(np.mod(x, self.circumference)), float(p), float(u))

    @property
    def final(self) -> PhaseState:
        return self.state(-1)


def vector_field(model: HamiltonianModel, x, p, u):
    """Right-hand side of the characteristic system (vectorized)."""
    Hp, Hx, Hu = model_gradients(model, x, p, u)
    return Hp, -Hx - p * Hu, p * Hp - hamiltonian(model, x, p, u)


def _rk4_step(model, y, h):
    def f(z):
        return np.stack(vector_field(model, z[0], z[1], z[2]))
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _check_guard(y, guard):
    bad = ~np.all(np.isfinite(y), axis=0) | (np.abs(y[1]) > guard) | (np.abs(y[2]) > guard)
    return bad


def integrate(model: HamiltonianModel, start: PhaseState, duration: float, dt: float,
              guard: float = GUARD) -> Trajectory:
    """RK4 orbit over ``duration`` (negative runs time backwards).

    The step is adjusted to dt' <= dt so that the final time equals
    ``duration`` exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if duration == 0 or abs(duration) < dt:
        raise ValueError("need |duration| >= dt > 0")
    n = int(np.ceil(abs(duration) / dt - 1e-9))
    h = duration / n
    y = np.array([start.x, start.p, start.u], dtype=float)
    out = np.empty((n + 1, 3))
    out[0] = y
    for k in range(n):
        y = _rk4_step(model, y, h)
        if _check_guard(y[:, None], guard)[0]:
            raise BlowUp(f"|p| or |u| exceeded {guard:g} at t={(k + 1) * h:.6g}")
        out[k + 1] = y
    return Trajectory(0.0, h, out, model.circumference)


def integrate_batch(model: HamiltonianModel, starts: np.ndarray, duration: float, dt: float,
                    guard: float = GUARD, record: bool = False):
    """Integrate many (x, p, u) rows at once; blown-up rows become NaN.

    Returns the final states (and the whole history when ``record``).
    """
    n = int(np.ceil(abs(duration) / dt - 1e-9))
    h = duration / n
    y = np.array(starts, dtype=float).T.copy()
    hist = [y.copy()] if record else None
    alive = np.ones(y.shape[1], dtype=bool)
    for _ in range(n):
        y = _rk4_step(model, y, h)
        bad = _check_guard(y, guard)
        alive &= ~bad
        y[:, ~alive] = np.nan
        if record:
            hist.append(y.copy())
    if record:
        return np.stack(hist, axis=0).transpose(0, 2, 1)
    return y.T


def write_trajectory_csv(path: str | Path, model: HamiltonianModel, traj: Trajectory,
                         header: str | None = None) -> None:
    """CSV with columns t,x,p,u,H; x reduced modulo the circumference."""
    H = hamiltonian(model, traj.x, traj.p, traj.u)
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "p", "u", "H"])
        xs = np.mod(traj.x, traj.circumference)
        for row in zip(traj.times, xs, traj.p, traj.u, H):
            w.writerow([f"{v:.12g}" for v in row])


def find_equilibria(model: HamiltonianModel, u_level: float = 0.0, n_scan: int = 256,
                    tol: float = 1e-10) -> list[PhaseState]:
    """Zeros of the vector field at u = u_level, from Newton runs seeded on a scan.

    Seeds sit at cell centres on the p = 0 line; distinct results closer than
    1e-8 are merged, so a continuum of equilibria yields one per cell.
    """
    C = model.circumference
    x = (np.arange(n_scan) + 0.5) * C / n_scan
    p = np.zeros(n_scan)
    u = float(u_level)
    h = 1e-7

    def F(x, p):
        fx, fp, _ = vector_field(model, x, p, u)
        return np.asarray(fx, dtype=float), np.asarray(fp, dtype=float)

    for _ in range(50):
        f1, f2 = F(x, p)
        a11 = (F(x + h, p)[0] - F(x - h, p)[0]) / (2 * h)
        a21 = (F(x + h, p)[1] - F(x - h, p)[1]) / (2 * h)
        a12 = (F(x, p + h)[0] - F(x, p - h)[0]) / (2 * h)
        a22 = (F(x, p + h)[1] - F(x, p - h)[1]) / (2 * h)
        det = a11 * a22 - a12 * a21
        ok = np.abs(det) > 1e-14
        sdet = np.where(ok, det, 1.0)
        dx = np.where(ok, (a22 * f1 - a12 * f2) / sdet, 0.0)
        dp = np.where(ok, (a11 * f2 - a21 * f1) / sdet, 0.0)
        step = np.maximum(1.0, np.abs(dx) / (0.25 * C))
        x = x - dx / step
        p = p - dp / step
        if np.all(np.abs(dx) + np.abs(dp) < 1e-15):
            break

    found: list[PhaseState] = []
    for xi, pi in zip(np.mod(x, C), p):
        fx, fp, fu = vector_field(model, xi, pi, u)
        if not np.isfinite(xi) or np.sqrt(fx * fx + fp * fp + fu * fu) >= tol:
            continue
        if any(abs(signed_arc(q.x, xi, C)) + abs(q.p - pi) < 1e-8 for q in found):
            continue
        found.append(PhaseState(float(xi) if abs(signed_arc(0.0, xi, C)) > 1e-13 else 0.0,
                                float(pi) + 0.0, u))
    found.sort(key=lambda s: (s.x, s.p))
    return found


@dataclass(frozen=True)
class EquilibriumReport:
    location: PhaseState
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    classification: str


def _classify(eigs: np.ndarray, tol: float = 1e-12) -> str:
    re = eigs.real
    if np.all(re < -tol):
        return "sink"
    if np.all(re > tol):
        return "source"
    if np.any(re < -tol) and np.any(re > tol):
        return "saddle"
    if np.all(np.abs(re) <= tol) and np.any(np.abs(eigs.imag) > tol):
        return "center"
    return "degenerate"


def classify_equilibrium(model: HamiltonianModel, eq: PhaseState,
                         strict: bool = True) -> EquilibriumReport:
    """Linearization on the (x, p) slice and its eigenvalue signature."""
    x, p, u = eq.x, eq.p, eq.u
    if model.kind == "example-E":
        dV = float(model.drift.derivative(x))
        h = 1e-5
        d2V = float((model.drift.derivative(x + h) - model.drift.derivative(x - h)) / (2 * h)) \
            if p != 0 else 0.0
        J = np.array([[dV, 1.0], [-p * d2V, -(dV + model.lam)]])
    else:
        h = 1e-6
        J = np.empty((2, 2))
        for col, (ex, ep) in enumerate(((h, 0.0), (0.0, h))):
            fplus = vector_field(model, x + ex, p + ep, u)
            fminus = vector_field(model, x - ex, p - ep, u)
            J[0, col] = (fplus[0] - fminus[0]) / (2 * h)
            J[1, col] = (fplus[1] - fminus[1]) / (2 * h)
    eigs = np.linalg.eigvals(J)
    eigs = eigs[np.lexsort((eigs.imag, eigs.real))]
    if np.min(np.abs(eigs)) < 1e-8:
        if strict:
            raise DegenerateEquilibrium(f"eigenvalue of modulus < 1e-8 at x={x:.6g}")
        return EquilibriumReport(eq, J, eigs, "degenerate")
    return EquilibriumReport(eq, J, eigs, _classify(eigs))


@dataclass(frozen=True)
class RecurrenceVerdict:
    verdict: str
    time: float | None
    min_distance: float

    @property
    def recurrent(self) -> bool:
        return self.verdict == "recurrent"


def is_recurrent(model: HamiltonianModel, start: PhaseState, horizon: float, eps: float,
                 t_min: float = 0.0, dt: float = 0.01, guard: float = GUARD) -> RecurrenceVerdict:
    """'recurrent' when the orbit is back within eps for some t in [t_min, horizon]."""
    verdicts = recurrence_batch(model, np.array([start.as_array()]), horizon, eps, t_min, dt, guard)
    return verdicts[0]


def recurrence_batch(model: HamiltonianModel, starts: np.ndarray, horizon: float, eps: float,
                     t_min: float = 0.0, dt: float = 0.01,
                     guard: float = GUARD) -> list[RecurrenceVerdict]:
    """Vectorized :func:`is_recurrent`; a blow-up counts as not observed."""
    if not t_min < horizon:
        raise ValueError("need t_min < horizon")
    C = model.circumference
    y0 = np.array(starts, dtype=float).T
    y = y0.copy()
    n = int(np.ceil(horizon / dt - 1e-9))
    h = horizon / n
    m = y.shape[1]
    hit_time = np.full(m, np.nan)
    best = np.full(m, np.inf)

    def dist(z):
        return np.abs(signed_arc(y0[0], z[0], C)) + np.abs(z[1] - y0[1]) + np.abs(z[2] - y0[2])

    if t_min <= 0:
        d = dist(y)
        best = np.minimum(best, d)
        hit_time[d < eps] = 0.0
    alive = np.ones(m, dtype=bool)
    for k in range(1, n + 1):
        todo = alive & np.isnan(hit_time)
        if not todo.any():
            break
        y[:, todo] = _rk4_step(model, y[:, todo], h)
        bad = _check_guard(y, guard) & todo
        alive &= ~bad
        t = k * h
        if t >= t_min - 1e-12:
            d = np.where(alive, dist(y), np.inf)
            best = np.where(todo, np.minimum(best, d), best)
            newly = todo & alive & (d < eps)
            hit_time[newly] = t
    return [RecurrenceVerdict("recurrent" if np.isfinite(t) else "not-observed",
                              float(t) if np.isfinite(t) else None, float(b))
            for t, b in zip(hit_time, best)]


@dataclass(frozen=True)
class TransitVerdict:
    found: bool
    sample: int | None
    time: float | None
    start: PhaseState | None
    min_distance: float

    @property
    def verdict(self) -> str:
        return "transit" if self.found else "not-observed"


def sample_ball(center: PhaseState, radius: float, n: int, rng: np.random.Generator,
                circumference: float) -> np.ndarray:
    """Uniform samples from the product-metric (l1) ball; row 0 is the center."""
    e = rng.exponential(size=(n, 4))
    r = e[:, :3] / e.sum(axis=1, keepdims=True)
    signs = rng.choice([-1.0, 1.0], size=(n, 3))
    pts = center.as_array() + radius * signs * r
    pts[0] = center.as_array()
    pts[:, 0] = np.mod(pts[:, 0], circumference)
    return pts


def passes_through(model: HamiltonianModel, start: tuple[PhaseState, float],
                   target: tuple[PhaseState, float], horizon: float, dt: float = 0.01,
                   n_samples: int = 100, seed: int = 0, guard: float = GUARD) -> TransitVerdict:
    """First sample (lowest index) from the start ball whose orbit enters the target ball."""
    (c0, r0), (c1, r1) = start, target
    if r0 <= 0 or r1 <= 0:
        raise ValueError("radii must be positive")
    C = model.circumference
    rng = np.random.default_rng(seed)
    pts = sample_ball(c0, r0, n_samples, rng, C)
    tgt = c1.as_array()
    y = pts.T.copy()
    n = int(np.ceil(horizon / dt - 1e-9))
    h = horizon / n

    def dist(z):
        return np.abs(signed_arc(tgt[0], z[0], C)) + np.abs(z[1] - tgt[1]) + np.abs(z[2] - tgt[2])

    best = dist(y)
    hit = np.where(best < r1, 0.0, np.nan)
    alive = np.ones(n_samples, dtype=bool)
    order = np.arange(n_samples)
    for k in range(1, n + 1):
        hits = np.flatnonzero(np.isfinite(hit))
        limit = hits[0] if hits.size else n_samples
        todo = alive & np.isnan(hit) & (order < limit)
        if not todo.any():
            break
        y[:, todo] = _rk4_step(model, y[:, todo], h)
        alive &= ~(_check_guard(y, guard) & todo)
        d = np.where(alive, dist(y), np.inf)
        best = np.where(todo, np.minimum(best, d), best)
        hit[todo & alive & (d < r1)] = k * h
    idx = np.flatnonzero(np.isfinite(hit))
    if idx.size == 0:
        return TransitVerdict(False, None, None, None, float(np.min(best)))
    i = int(idx[0])
    s = PhaseState(float(pts[i, 0]), float(pts[i, 1]), float(pts[i, 2]))
    return TransitVerdict(True, i, float(hit[i]), s, float(np.min(best)))
