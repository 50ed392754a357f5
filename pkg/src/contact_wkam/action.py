"""Implicit action functions by monotone dynamic programming.

``forward_action`` tabulates h_{x0,u0}(x, t), the least terminal value of u
over curves from x0 to x in time t; ``backward_action`` tabulates the dual
h^{x0,u0}(x, t), the largest initial value of u over curves from x to x0.
Both run on a :class:`~contact_wkam._kernel.NodeSet` that contains the
uniform grid; extra nodes are added for off-grid origins and, for backward
barriers at non-stationary points, along the zero-momentum orbit that feeds
the base point.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from ._kernel import (NodeSet, Sweeper, build_stencil, default_rule, drift_flow,
                      uniform_stencil)
from .errors import BracketFailure, Diverged
from .model import (CircleDomain, GridFunction, HamiltonianModel, drift_velocity,
                    lagrangian_momentum, signed_arc)

DEFAULT_V_MAX = 6.0
TOL_MARKOV = TOL_DUAL = TOL_LIMIT = 1e-3
GUARD = 1e6


def _steps(t: float, dt: float) -> int:
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not a positive multiple of dt={dt}")
    return n


def _check_dt(model: HamiltonianModel, dt: float) -> None:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt * model.lam >= 0.5:
        raise ValueError(f"dt*lambda = {dt * model.lam:g} must stay below 0.5")


def _sweeper(model, nodes: NodeSet, dt, v_max, direction, rule) -> Sweeper:
    if nodes.is_uniform:
        st = uniform_stencil(model, nodes.domain, float(dt), v_max, direction, rule)
    else:
        st = build_stencil(model, nodes, dt, v_max, direction, rule)
    return Sweeper(model, nodes, st)


def _resolve_origin(domain: CircleDomain, x0) -> tuple[float, int | None]:
    """Position of an origin given as grid index (int) or position (float)."""
    if isinstance(x0, (int, np.integer)):
        k = int(x0) % domain.n_points
        return float(domain.x[k]), k
    pos = float(np.mod(x0, domain.circumference))
    k = int(domain.nearest_index(pos))
    if abs(signed_arc(domain.x[k], pos, domain.circumference)) < 1e-12:
        return float(domain.x[k]), k
    return pos, None


def transport_orbit(model: HamiltonianModel, y: float, dt: float, n_steps: int,
                    collapse: float = 1e-10) -> np.ndarray:
    """Backward orbit y, Phi_{-dt}(y), ... of the zero-momentum motion.

    Stops once consecutive points collapse (the orbit has reached a rest
    point to rounding); the rest point itself is appended when it can be
    refined by Newton's method.
    """
    times = -dt * np.arange(n_steps + 1)
    sol = solve_ivp(lambda t, z: drift_velocity(model, z), (0.0, times[-1]), [float(y)],
                    method="DOP853", t_eval=times, rtol=1e-13, atol=1e-14)
    orbit = sol.y[0]
    steps = np.abs(np.diff(orbit))
    stop = np.flatnonzero(steps < collapse)
    pts = list(orbit[: (stop[0] + 1) if stop.size else orbit.size])
    if len(pts) > 1 and abs(pts[-1] - pts[-2]) < 1e-6:
        r = pts[-1]
        for _ in range(50):
            h = 1e-7
            db = (drift_velocity(model, r + h) - drift_velocity(model, r - h)) / (2 * h)
            if abs(db) < 1e-12:
                break
            step = float(drift_velocity(model, r) / db)
            r -= step
            if abs(step) < 1e-15:
                break
        if abs(float(drift_velocity(model, r))) < 1e-12 and abs(r - pts[-1]) < 1e-3:
            pts.append(r)
    return np.mod(np.array(pts), model.circumference)


@dataclass(frozen=True)
class ActionField:
    """Values of an action function on nodes x time steps, with argmin pointers.

    Row 0 holds the origin value; other row-0 entries are unreached (see
    ``reached0``).  Pointer -1 marks a step that followed the zero-momentum
    motion exactly (its partner is off the node set in general).
    """

    model: HamiltonianModel
    nodes: NodeSet
    direction: str
    dt: float
    origin_position: float
    origin_node: int
    u0: float
    values: np.ndarray
    pointers: np.ndarray
    reached0: np.ndarray
    rule: str
    v_max: float | None
    sweeper: Sweeper = field(repr=False, compare=False)

    @property
    def domain(self) -> CircleDomain:
        return self.nodes.domain

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def origin_index(self) -> int | None:
        """Grid index of the origin, or None when it is off the grid."""
        hit = np.flatnonzero(self.nodes.grid_nodes == self.origin_node)
        return int(hit[0]) if hit.size else None

    def step_of(self, t: float) -> int:
        return _steps(t, self.dt)

    def slice(self, n: int) -> GridFunction:
        if n < 1:
            raise ValueError("slice 0 holds unreached sentinels; use n >= 1")
        return GridFunction(self.domain, self.values[n, self.nodes.grid_nodes])

    def value(self, n: int, x) -> float:
        """Value at time index n and grid index (int) or position (float)."""
        if isinstance(x, (int, np.integer)):
            node = int(self.nodes.grid_nodes[int(x) % self.domain.n_points])
            return float(self.values[n, node])
        return self.value_at(n, float(x))

    def value_at(self, n: int, position: float) -> float:
        node = self.nodes.node_of(position)
        if node is not None:
            if n == 0 and not self.reached0[node]:
                raise ValueError("unreached at time 0")
            return float(self.values[n, node])
        if n == 0:
            raise ValueError("unreached at time 0")
        value, _, _ = self.sweeper.best_from(position, self.values[n - 1],
                                             self.reached0 if n == 1 else None)
        return float(value)

    def write_slice_csv(self, path, n: int, header: str | None = None) -> None:
        from .io import write_grid_csv
        write_grid_csv(path, self.slice(n), header=header)

    def to_binary(self, path) -> None:
        """Header (origin position, u0, direction, dt, n_points, n_steps), then
        row-major float64 grid values; unreached row-0 entries are stored as
        +inf (forward) or -inf (backward)."""
        grid = self.values[:, self.nodes.grid_nodes].copy()
        fill = np.inf if self.direction == "forward" else -np.inf
        grid[0, ~self.reached0[self.nodes.grid_nodes]] = fill
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sddbdqq", b"CWAF", self.origin_position, self.u0,
                                 1 if self.direction == "forward" else -1, self.dt,
                                 self.domain.n_points, self.n_steps))
            fh.write(np.ascontiguousarray(grid, dtype="<f8").tobytes())


_BIN_HEADER = struct.Struct("<4sddbdqq")


def read_binary(path) -> dict:
    """Inverse of :meth:`ActionField.to_binary` (grid values only)."""
    raw = Path(path).read_bytes()
    magic, x0, u0, d, dt, n_points, n_steps = _BIN_HEADER.unpack_from(raw)
    if magic != b"CWAF":
        raise ValueError("not an action-field file")
    vals = np.frombuffer(raw, dtype="<f8", offset=_BIN_HEADER.size).reshape(n_steps + 1, n_points)
    return {"origin": x0, "u0": u0, "direction": "forward" if d == 1 else "backward",
            "dt": dt, "n_points": n_points, "n_steps": n_steps, "values": vals}


def _single_source(model, domain, x0, u0, n_steps, dt, direction, v_max, rule, extra=()):
    pos, _ = _resolve_origin(domain, x0)
    extras = np.concatenate([[pos], np.asarray(extra, dtype=float)])
    nodes = NodeSet.with_extras(domain, extras)
    src = nodes.node_of(pos)
    sw = _sweeper(model, nodes, dt, v_max, direction, rule)
    reached = np.zeros(nodes.n, dtype=bool)
    reached[src] = True
    init = np.zeros(nodes.n)
    init[src] = float(u0)
    return nodes, src, sw, init, reached


def _field(model, domain, x0, u0, t_max, dt, direction, v_max, rule, extra=()) -> ActionField:
    _check_dt(model, dt)
    rule = default_rule(model) if rule is None else rule
    n_steps = _steps(t_max, dt)
    nodes, src, sw, init, reached = _single_source(model, domain, x0, u0, n_steps, dt,
                                                   direction, v_max, rule, extra)
    values = np.empty((n_steps + 1, nodes.n))
    pointers = np.full((n_steps + 1, nodes.n), -2, dtype=np.int64)
    values[0] = init
    values[1], pointers[1] = sw.masked_step(init, reached)
    for k in range(2, n_steps + 1):
        values[k], pointers[k] = sw.step(values[k - 1])
    values.setflags(write=False)
    pointers.setflags(write=False)
    return ActionField(model, nodes, direction, float(dt), float(nodes.positions[src]), src,
                       float(u0), values, pointers, reached, rule, v_max, sw)


def forward_action(model: HamiltonianModel, domain: CircleDomain, x0, u0: float, t_max: float,
                   dt: float, *, v_max: float | None = DEFAULT_V_MAX, rule: str | None = None,
                   extra_nodes=()) -> ActionField:
    """Tabulate h_{x0,u0}(x, k*dt) for k <= t_max/dt.

    ``x0`` is a grid index (int) or a position (float, added as a node when
    it is off the grid).  ``v_max=None`` searches every node at each step.
    """
    return _field(model, domain, x0, u0, t_max, dt, "forward", v_max, rule, extra_nodes)


def backward_action(model: HamiltonianModel, domain: CircleDomain, x0, u0: float, t_max: float,
                    dt: float, *, v_max: float | None = DEFAULT_V_MAX, rule: str | None = None,
                    extra_nodes=()) -> ActionField:
    """Tabulate h^{x0,u0}(x, k*dt): the largest u(0) over curves from x reaching
    (x0, u0) after time k*dt."""
    return _field(model, domain, x0, u0, t_max, dt, "backward", v_max, rule, extra_nodes)


def dual_backward(model: HamiltonianModel, domain: CircleDomain, x0, u0: float, x, t: float,
                  dt: float, *, bracket: float = 1.0, max_expand: int = 40, tol: float = 1e-10,
                  v_max: float | None = DEFAULT_V_MAX, rule: str | None = None) -> float:
    """The u with h_{x,u}(x0, t) = u0, found by bisection on forward fields."""
    if t < 2 * dt - 1e-12:
        raise ValueError("need t >= 2*dt")
    n = _steps(t, dt)
    x0_pos, _ = _resolve_origin(domain, x0)

    def F(u):
        f = forward_action(model, domain, x, u, t, dt, v_max=v_max, rule=rule,
                           extra_nodes=[x0_pos])
        return f.value_at(n, x0_pos)

    lo, hi = u0 - bracket, u0 + bracket
    flo, fhi = F(lo), F(hi)
    width = bracket
    for _ in range(max_expand):
        if flo <= u0 <= fhi:
            break
        width *= 2.0
        if flo > u0:
            hi, fhi = lo, flo
            lo = u0 - width - abs(u0 - lo)
            flo = F(lo)
        else:
            lo, flo = hi, fhi
            hi = u0 + width + abs(hi - u0)
            fhi = F(hi)
    else:
        raise BracketFailure(f"could not straddle u0={u0} within {max_expand} expansions")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if F(mid) < u0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class MinimizerCurve:
    """A discrete optimal curve in time order, with u and p along it."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    u_along: np.ndarray
    p_along: np.ndarray
    circumference: float

    def state(self, k: int):
        from .flow import PhaseState
        return PhaseState(float(np.mod(self.positions[k], self.circumference)),
                          float(self.p_along[k]), float(self.u_along[k]))


def extract_minimizer(field: ActionField, x, n: int) -> MinimizerCurve:
    """Follow the optimal exchanges from (x, n) back to the origin.

    Forward fields yield a curve from the origin (time 0) to x (time n*dt);
    backward fields a curve from x (time 0) to the origin (time n*dt).
    """
    if isinstance(x, (int, np.integer)):
        node = int(field.nodes.grid_nodes[int(x) % field.domain.n_points])
        pos = float(field.nodes.positions[node])
    else:
        pos = float(np.mod(x, field.domain.circumference))
        node = field.nodes.node_of(pos)
    sw = field.sweeper
    nodes = field.nodes
    path_pos = [pos]
    path_val = [field.values[n, node] if node is not None else field.value_at(n, pos)]
    for k in range(n, 0, -1):
        prev = field.values[k - 1]
        reached = field.reached0 if k == 1 else None
        ptr = field.pointers[k, node] if node is not None else -3
        if ptr >= 0:
            node = int(ptr)
            pos = float(nodes.positions[node])
        elif ptr == -1:
            t_sign = -1.0 if field.direction == "forward" else 1.0
            pos = float(np.mod(drift_flow(field.model, np.array([pos]), t_sign * field.dt)[0],
                               nodes.circumference))
            node = nodes.node_of(pos)
        else:
            _, pos, node = sw.best_from(pos, prev, reached)
        if node is not None:
            val = prev[node]
        elif k == 1:
            raise RuntimeError("backtracking did not return to the origin")
        else:
            val, _, _ = sw.best_from(pos, field.values[k - 2], field.reached0 if k == 2 else None)
        path_pos.append(pos)
        path_val.append(float(val))

    C = nodes.circumference
    pos_arr = np.array(path_pos)
    val_arr = np.array(path_val)
    if field.direction == "forward":
        pos_arr, val_arr = pos_arr[::-1], val_arr[::-1]
    steps = signed_arc(pos_arr[:-1], pos_arr[1:], C)
    lifted = pos_arr[0] + np.concatenate([[0.0], np.cumsum(steps)])
    times = field.dt * np.arange(lifted.size)
    vel = np.gradient(lifted, field.dt) if lifted.size > 1 else np.zeros(1)
    p = lagrangian_momentum(field.model, lifted, vel, val_arr)
    return MinimizerCurve(times, lifted, vel, val_arr, np.asarray(p, dtype=float), C)


class LimitResult(NamedTuple):
    """Outcome of a long-time limit: the grid function plus diagnostics.

    ``converged`` is the convergence flag of a forward limit or the
    stabilization flag of a backward limsup.  ``node_values`` covers every
    node used, so off-grid base points can be read exactly with :meth:`at`.
    """

    function: GridFunction
    converged: bool
    residual: float
    nodes: NodeSet
    node_values: np.ndarray

    def at(self, position: float) -> float:
        node = self.nodes.node_of(position)
        if node is not None:
            return float(self.node_values[node])
        return float(self.nodes.interpolate(self.node_values, np.array([position]))[0])

    @property
    def stabilized(self) -> bool:
        return self.converged


def _window_steps(window: float, dt: float) -> int:
    return max(1, int(np.floor(window / dt + 1e-9)) + 1)


def limit_forward(model: HamiltonianModel, domain: CircleDomain, x0, u0: float, t_max: float,
                  dt: float, window: float, *, tol: float = TOL_LIMIT,
                  v_max: float | None = DEFAULT_V_MAX, rule: str | None = None,
                  extra_nodes=()) -> LimitResult:
    """Final slice of h_{x0,u0}(., t) at t_max; converged when its oscillation
    over the trailing window [t_max - window, t_max] is below ``tol``."""
    _check_dt(model, dt)
    rule = default_rule(model) if rule is None else rule
    n_steps = _steps(t_max, dt)
    w = _window_steps(window, dt)
    if w > n_steps:
        raise ValueError("t_max must contain the window")
    nodes, src, sw, v, reached = _single_source(model, domain, x0, u0, n_steps, dt,
                                                "forward", v_max, rule, extra_nodes)
    lo = np.full(nodes.n, np.inf)
    hi = np.full(nodes.n, -np.inf)
    v, _ = sw.masked_step(v, reached)
    for k in range(1, n_steps + 1):
        if k > 1:
            v, _ = sw.step(v)
        if k > n_steps - w:
            np.minimum(lo, v, out=lo)
            np.maximum(hi, v, out=hi)
    osc = float(np.max((hi - lo)[nodes.grid_nodes]))
    return LimitResult(GridFunction(domain, v[nodes.grid_nodes]), osc < tol, osc, nodes, v)


def limsup_backward(model: HamiltonianModel, domain: CircleDomain, y, u_y: float, t_max: float,
                    dt: float, window: float, *, tol: float = TOL_LIMIT, guard: float = GUARD,
                    v_max: float | None = DEFAULT_V_MAX, rule: str | None = None,
                    transport: bool | None = None, extra_nodes=()) -> LimitResult:
    """Pointwise max of h^{y,u_y}(., t) over t in [t_max - window, t_max].

    Stabilized when the preceding window gives the same maximum within
    ``tol``.  With the drift rule, a base point that moves under the
    zero-momentum motion gets its backward orbit added as nodes
    (``transport=None`` decides automatically); without them the discrete
    barrier at such points is not bounded below as t grows.
    """
    _check_dt(model, dt)
    rule = default_rule(model) if rule is None else rule
    n_steps = _steps(t_max, dt)
    w = _window_steps(window, dt)
    if w > n_steps:
        raise ValueError("t_max must contain the window")
    pos, _ = _resolve_origin(domain, y)
    extra = list(np.asarray(extra_nodes, dtype=float).ravel())
    if transport is None:
        transport = rule == "drift" and abs(float(drift_velocity(model, pos))) > 1e-12
    if transport:
        extra.extend(transport_orbit(model, pos, dt, n_steps))
    nodes, src, sw, v, reached = _single_source(model, domain, pos, u_y, n_steps, dt,
                                                "backward", v_max, rule, extra)
    cur = np.full(nodes.n, -np.inf)
    prev_win = np.full(nodes.n, -np.inf)
    v, _ = sw.masked_step(v, reached)
    for k in range(1, n_steps + 1):
        if k > 1:
            v, _ = sw.step(v)
        if not np.all(np.abs(v) <= guard):
            raise Diverged(f"backward field left |h| <= {guard:g} at t={k * dt:.6g}")
        if k > n_steps - w:
            np.maximum(cur, v, out=cur)
        elif k > n_steps - 2 * w:
            np.maximum(prev_win, v, out=prev_win)
    g = nodes.grid_nodes
    if np.all(np.isfinite(prev_win[g])):
        residual = float(np.max(np.abs(cur - prev_win)[g]))
    else:
        residual = float("inf")
    return LimitResult(GridFunction(domain, cur[g]), residual < tol, residual, nodes, cur)
