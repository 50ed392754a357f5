"""Mather / strongly static / Aubry / Mane detection and transitive orbits.

Every membership test works on the graph of the backward solution: a grid
point x is examined through the orbit of (x, Du(x), u(x)).  Static points
have forward limits that reproduce u along the orbit; strongly static
points additionally have backward limsups that do.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .action import (DEFAULT_V_MAX, TOL_LIMIT, backward_action, extract_minimizer,
                     limit_forward, limsup_backward)
from .errors import InclusionViolation, NotFound
from .flow import (PhaseState, Trajectory, integrate, integrate_batch, passes_through,
                   recurrence_batch)
from .model import CircleDomain, GridFunction, HamiltonianModel, drift_velocity, signed_arc

TOL_DIAMOND = 5 * TOL_LIMIT


@dataclass(frozen=True)
class OrbitSampling:
    """Numerics shared by the along-orbit membership checks."""

    dt: float = 0.1
    t_forward: float = 20.0
    t_backward: float = 30.0
    window: float = 5.0
    n_samples: int = 4
    ode_dt: float = 0.01
    v_max: float | None = 4.0
    rule: str | None = None


def mane_membership(u_minus: GridFunction, u_plus_max: GridFunction, tol: float) -> np.ndarray:
    """Points where the backward solution meets the limit of T+ from it."""
    diff = np.abs(u_minus.values - u_plus_max.values)
    return (diff < tol) | (diff == 0)


def _graph_state(u_ref: GridFunction, x, slope_tol: float | None = None) -> PhaseState:
    """(x, Du(x), u(x)) on the graph of u_ref; x is a grid index or a position."""
    d = u_ref.domain
    left, right = u_ref.one_sided_slopes()
    tol = 10 * d.dx if slope_tol is None else slope_tol
    if isinstance(x, (int, np.integer)):
        k = int(x) % d.n_points
        pos, u, dl, dr = float(d.x[k]), float(u_ref.values[k]), left[k], right[k]
    else:
        pos = float(np.mod(x, d.circumference))
        k = int(np.floor(pos / d.dx)) % d.n_points
        u = float(u_ref(pos))
        dl = dr = right[k]
    if abs(dl - dr) > tol:
        raise ValueError(f"u_ref is not differentiable at x={pos:.6g} (one-sided slopes differ)")
    return PhaseState(pos, float(0.5 * (dl + dr)), u)


def _sample_span(model: HamiltonianModel, domain: CircleDomain) -> float:
    """One drift period or 10/lambda, whichever is smaller."""
    bmax = float(np.max(np.abs(drift_velocity(model, domain.x))))
    period = domain.circumference / bmax if bmax > 0 else np.inf
    decay = 10.0 / model.lam if model.lam > 0 else np.inf
    span = min(period, decay)
    return 10.0 if not np.isfinite(span) else span


def orbit_samples(model: HamiltonianModel, start: PhaseState, span: float, n_samples: int,
                  ode_dt: float) -> list[PhaseState]:
    """States at n_samples equally spaced times in [0, span] along the orbit."""
    return orbit_sample_table(model, start.as_array()[None, :], span, n_samples, ode_dt)[0]


def orbit_sample_table(model: HamiltonianModel, starts: np.ndarray, span: float, n_samples: int,
                       ode_dt: float) -> list[list[PhaseState]]:
    """:func:`orbit_samples` for many starts, integrated as one batch."""
    hist = integrate_batch(model, starts, span, ode_dt, record=True)
    idx = np.linspace(0, hist.shape[0] - 1, n_samples).round().astype(int)
    return [[PhaseState(*map(float, hist[k, j])) for k in idx] for j in range(hist.shape[1])]


def static_membership(model: HamiltonianModel, domain: CircleDomain, x, u_ref: GridFunction,
                      tol: float, sampling: OrbitSampling = OrbitSampling(), *, states=None):
    """(flag, diagonal a_gap, worst along-orbit gap).

    Forward limits are started at each sampled orbit state and compared
    with u at every sampled state, the diagonal included.  ``states`` may
    carry precomputed orbit samples (first entry = the graph state of x).
    """
    s = sampling
    start = _graph_state(u_ref, x)
    if _is_rest(model, start):
        states = [start]
    elif states is None:
        states = orbit_samples(model, start, _sample_span(model, domain), s.n_samples, s.ode_dt)
    pts = np.array([q.x for q in states])
    worst = 0.0
    diag = None
    for i, q in enumerate(states):
        res = limit_forward(model, domain, q.x, q.u, s.t_forward, s.dt, s.window, v_max=s.v_max,
                            rule=s.rule, extra_nodes=pts)
        for j, r in enumerate(states):
            gap = abs(res.at(r.x) - r.u)
            if i == j and diag is None:
                diag = gap
            worst = max(worst, gap)
    return bool(worst < tol), float(diag), float(worst)


def strongly_static_membership(model: HamiltonianModel, domain: CircleDomain, x,
                               u_ref: GridFunction, tol: float,
                               sampling: OrbitSampling = OrbitSampling(), *, states=None):
    """(flag, diagonal b_gap, worst along-orbit gap).

    The diagonal limsup is checked first; the along-orbit pairs only when
    it passes.
    """
    s = sampling
    start = _graph_state(u_ref, x)
    diag_res = limsup_backward(model, domain, start.x, start.u, s.t_backward, s.dt, s.window,
                               v_max=s.v_max, rule=s.rule)
    diag = abs(diag_res.at(start.x) - start.u)
    if diag >= tol or _is_rest(model, start):
        return bool(diag < tol), float(diag), float(diag)
    if states is None:
        states = orbit_samples(model, start, _sample_span(model, domain), s.n_samples, s.ode_dt)
    pts = np.array([q.x for q in states])
    worst = diag
    for i, q in enumerate(states):
        res = diag_res if i == 0 else limsup_backward(
            model, domain, q.x, q.u, s.t_backward, s.dt, s.window, v_max=s.v_max, rule=s.rule,
            extra_nodes=pts)
        for r in states:
            worst = max(worst, abs(res.at(r.x) - r.u))
        if worst >= tol:
            break
    return bool(worst < tol), float(diag), float(worst)


def _is_rest(model: HamiltonianModel, state: PhaseState, tol: float = 1e-12) -> bool:
    from .flow import vector_field
    f = vector_field(model, state.x, state.p, state.u)
    return bool(np.sqrt(sum(float(c) ** 2 for c in f)) < tol)


@dataclass
class SetReport:
    """Grid classification with the diagnostics behind each flag."""

    u_ref: GridFunction
    mane: np.ndarray
    aubry: np.ndarray
    strongly_static: np.ndarray
    mather: np.ndarray
    a_gap: np.ndarray
    b_gap: np.ndarray
    recurrence: list
    tolerances: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.u_ref.x

    def counts(self) -> dict:
        return {"mather": int(self.mather.sum()), "strongly_static": int(self.strongly_static.sum()),
                "aubry": int(self.aubry.sum()), "mane": int(self.mane.sum()),
                "n_points": int(self.mane.size)}

    def write_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                for line in header.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "mane", "aubry", "strongly_static", "mather", "a_gap", "b_gap"])
            for row in zip(self.x, self.mane, self.aubry, self.strongly_static, self.mather,
                           self.a_gap, self.b_gap):
                x, *flags, a, b = row
                w.writerow([f"{x:.12g}", *(int(f) for f in flags),
                            "" if np.isnan(a) else f"{a:.6e}", "" if np.isnan(b) else f"{b:.6e}"])


def mather_candidates(model: HamiltonianModel, report: SetReport, horizon: float = 50.0,
                      eps: float | None = None, t_min: float = 1.0,
                      ode_dt: float = 0.01) -> np.ndarray:
    """Mane points whose graph orbit returns within eps after t_min.

    The default eps is a quarter grid cell, small enough that orbits
    drifting away from rest points are not counted as returning.
    """
    u = report.u_ref
    eps = 0.25 * u.domain.dx if eps is None else eps
    idx = np.flatnonzero(report.mane)
    flags = np.zeros(report.mane.size, dtype=bool)
    verdicts = ["" for _ in range(report.mane.size)]
    if idx.size:
        starts = np.array([_graph_state(u, int(i)).as_array() for i in idx])
        for i, v in zip(idx, recurrence_batch(model, starts, horizon, eps, t_min, ode_dt)):
            flags[i] = v.recurrent
            verdicts[i] = v.verdict
    report.recurrence = verdicts
    return flags


def build_set_report(model: HamiltonianModel, u_minus: GridFunction, u_plus_max: GridFunction, *,
                     tol_mane: float = 5e-3, tol_static: float = 5e-3, tol_strong: float = 5e-3,
                     sampling: OrbitSampling = OrbitSampling(), recurrence_horizon: float = 50.0,
                     recurrence_eps: float | None = None, recurrence_t_min: float = 1.0) -> SetReport:
    """Classify every grid point; each test runs only on its parent set."""
    d = u_minus.domain
    n = d.n_points
    mane = mane_membership(u_minus, u_plus_max, tol_mane)
    aubry = np.zeros(n, dtype=bool)
    strong = np.zeros(n, dtype=bool)
    a_gap = np.full(n, np.nan)
    b_gap = np.full(n, np.nan)
    graph = {}
    for i in np.flatnonzero(mane):
        try:
            graph[int(i)] = _graph_state(u_minus, int(i))
        except ValueError:
            pass
    keys = sorted(graph)
    samples = {}
    if keys:
        table = orbit_sample_table(model, np.array([graph[k].as_array() for k in keys]),
                                   _sample_span(model, d), sampling.n_samples, sampling.ode_dt)
        samples = dict(zip(keys, table))
    for i in keys:
        ok, diag, _ = static_membership(model, d, i, u_minus, tol_static, sampling,
                                        states=samples[i])
        aubry[i], a_gap[i] = ok, diag
    for i in np.flatnonzero(aubry):
        ok, diag, _ = strongly_static_membership(model, d, int(i), u_minus, tol_strong, sampling,
                                                 states=samples[int(i)])
        strong[i], b_gap[i] = ok, diag
    report = SetReport(u_minus, mane, aubry, strong, np.zeros(n, dtype=bool), a_gap, b_gap, [],
                       {"mane": tol_mane, "static": tol_static, "strongly_static": tol_strong,
                        "dt": sampling.dt, "t_forward": sampling.t_forward,
                        "t_backward": sampling.t_backward, "window": sampling.window})
    report.mather = mather_candidates(model, report, recurrence_horizon, recurrence_eps,
                                      recurrence_t_min)
    return report


@dataclass(frozen=True)
class DiamondVerdict:
    X1: PhaseState
    X2: PhaseState
    lim_forward_at_x2: float
    limsup_backward_at_x1: float
    holds: bool
    gaps: tuple
    conclusive: bool
    tol: float

    def as_dict(self) -> dict:
        return {"X1": [self.X1.x, self.X1.p, self.X1.u], "X2": [self.X2.x, self.X2.p, self.X2.u],
                "lim_forward_at_x2": self.lim_forward_at_x2,
                "limsup_backward_at_x1": self.limsup_backward_at_x1, "holds": self.holds,
                "gaps": list(self.gaps), "conclusive": self.conclusive, "tol": self.tol}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def check_diamond(model: HamiltonianModel, domain: CircleDomain, X1: PhaseState, X2: PhaseState, *,
                  t_max: float = 60.0, dt: float = 0.1, window: float = 10.0,
                  tol: float = TOL_DIAMOND, v_max: float | None = DEFAULT_V_MAX,
                  rule: str | None = None) -> DiamondVerdict:
    """Both barrier identities between X1 and X2, each to ``tol``."""
    fwd = limit_forward(model, domain, X1.x, X1.u, t_max, dt, window, v_max=v_max, rule=rule,
                        extra_nodes=[X2.x])
    bwd = limsup_backward(model, domain, X2.x, X2.u, t_max, dt, window, v_max=v_max, rule=rule,
                          extra_nodes=[X1.x])
    a, b = fwd.at(X2.x), bwd.at(X1.x)
    gaps = (abs(a - X2.u), abs(b - X1.u))
    holds = gaps[0] < tol and gaps[1] < tol
    return DiamondVerdict(X1, X2, float(a), float(b), bool(holds), (float(gaps[0]), float(gaps[1])),
                          bool(fwd.converged and bwd.converged), float(tol))


def _shoot_momentum(model, x1, p0, u0, duration, target_lifted, ode_dt, width=0.5, iters=80):
    """Refine the initial momentum so the orbit sits at target_lifted after duration."""
    def miss(p):
        try:
            tr = integrate(model, PhaseState(x1, p, u0), duration, ode_dt)
        except Exception:
            return np.nan
        return tr.x[-1] - target_lifted

    lo, hi = p0 - width, p0 + width
    flo, fhi = miss(lo), miss(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        return p0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = miss(mid)
        if not np.isfinite(fm):
            return p0
        if fm * flo <= 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def build_transitive_orbit(model: HamiltonianModel, domain: CircleDomain, X1: PhaseState,
                           X2: PhaseState, t_list, *, dt: float = 0.1, eps: float = 0.05,
                           ode_dt: float = 0.005, horizon: float = 200.0,
                           v_max: float | None = DEFAULT_V_MAX, rule: str | None = None,
                           shoot: bool = True) -> Trajectory:
    """An orbit starting within eps of X1 that later passes within eps of X2.

    For each t in t_list the backward-field minimizer from x1 to x2 gives an
    initial momentum; the orbit of (x1, p, h^{x2,u2}(x1, t)) is then checked.
    ``shoot`` refines p by bisection so the orbit reaches x2 at time t,
    removing the momentum error of the grid minimizer.
    """
    C = domain.circumference
    for t in sorted(t_list):
        field_ = backward_action(model, domain, X2.x, X2.u, t, dt, v_max=v_max, rule=rule,
                                 extra_nodes=[X1.x])
        n = field_.n_steps
        curve = extract_minimizer(field_, X1.x, n)
        u0 = float(curve.u_along[0])
        p0 = float(curve.p_along[0])
        start = PhaseState(X1.x, p0, u0)
        if start.distance(X1, C) >= eps:
            continue
        if shoot and abs(signed_arc(X1.x, X2.x, C)) > 0:
            p0 = _shoot_momentum(model, X1.x, p0, u0, t, curve.positions[-1], ode_dt)
            start = PhaseState(X1.x, p0, u0)
            if start.distance(X1, C) >= eps:
                continue
        if start.distance(X2, C) < eps:
            return Trajectory(0.0, ode_dt, start.as_array()[None, :].copy(), C)
        try:
            traj = integrate(model, start, min(horizon, max(2 * t, t + 10.0)), ode_dt)
        except Exception:
            continue
        tgt = X2.as_array()
        d = (np.abs(signed_arc(tgt[0], traj.x, C)) + np.abs(traj.p - tgt[1])
             + np.abs(traj.u - tgt[2]))
        hit = np.flatnonzero(d < eps)
        if hit.size:
            k = int(hit[0])
            return Trajectory(0.0, traj.dt, traj.states[: k + 1].copy(), C)
    raise NotFound(f"no transitive orbit at eps={eps} for t in {list(t_list)}")


def minimal_forward_solution(model: HamiltonianModel, domain: CircleDomain, u_minus: GridFunction,
                             x0, *, t_max: float = 60.0, dt: float = 0.1, window: float = 10.0,
                             v_max: float | None = DEFAULT_V_MAX, rule: str | None = None):
    """limsup_t h^{x0, u_minus(x0)}(., t), the least forward solution through x0.

    Warns when x0 is not a rest point of the zero-momentum motion, where
    the barrier may jump as the base point moves.
    """
    pos = float(domain.x[int(x0) % domain.n_points]) if isinstance(x0, (int, np.integer)) \
        else float(x0)
    if abs(float(drift_velocity(model, pos))) > 1e-9:
        warnings.warn("base point is not a rest point; the barrier can be discontinuous in it",
                      stacklevel=2)
    u0 = float(u_minus(pos))
    return limsup_backward(model, domain, pos, u0, t_max, dt, window, v_max=v_max, rule=rule)


@dataclass
class InclusionReport:
    counts: dict
    violations: list
    self_transit: dict
    passed: bool

    def as_dict(self) -> dict:
        return {"counts": self.counts, "violations": self.violations,
                "self_transit": self.self_transit, "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def inclusion_report(model: HamiltonianModel, report: SetReport, *, dt: float = 0.1,
                     eps: float = 0.05, t_list=(1.0,), raise_on_violation: bool = True,
                     nonwandering_samples: int = 0) -> InclusionReport:
    """Re-check Mather <= strongly static <= Aubry <= Mane and non-emptiness,
    and attach self-transit evidence for every strongly static point."""
    d = report.u_ref.domain
    chain = [("mather", report.mather), ("strongly_static", report.strongly_static),
             ("aubry", report.aubry), ("mane", report.mane)]
    violations = []
    for (lo_name, lo), (hi_name, hi) in zip(chain, chain[1:]):
        for i in np.flatnonzero(lo & ~hi):
            violations.append({"index": int(i), "x": float(d.x[i]),
                               "reason": f"{lo_name} but not {hi_name}"})
    if not report.mather.any():
        violations.append({"index": None, "x": None, "reason": "no Mather candidate"})

    evidence = {}
    for i in np.flatnonzero(report.strongly_static):
        X = PhaseState(float(d.x[i]), float(report.u_ref.centered_slope()[i]),
                       float(report.u_ref.values[i]))
        try:
            build_transitive_orbit(model, d, X, X, t_list, dt=dt, eps=eps)
            found = True
        except NotFound:
            found = False
        entry = {"x": X.x, "self_transit": found}
        if nonwandering_samples:
            v = passes_through(model, (X, eps), (X, eps), horizon=10.0,
                               n_samples=nonwandering_samples)
            entry["nonwandering"] = v.verdict
        evidence[str(int(i))] = entry
        if not found:
            violations.append({"index": int(i), "x": X.x,
                               "reason": "strongly static point without self-transit"})

    out = InclusionReport(report.counts(), violations, evidence, not violations)
    if violations and raise_on_violation:
        first = violations[0]
        raise InclusionViolation(f"{first['reason']} (index {first['index']}, x={first['x']})",
                                 first["index"], first["x"])
    return out
