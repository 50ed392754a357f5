"""Node sets, one-step candidate tables and the dynamic-programming sweeps.

A step of length dt moves a value from a start node to an end node.  Two
quadrature rules are available:

* ``"midpoint"``: straight chord, cost dt * L(midpoint, chord/dt, .).
* ``"drift"``: the chord is measured against the exact zero-momentum motion
  Phi (the flow of dH/dp(x, 0, 0)).  A step from y to x costs
  dt * L(z, b(z) + delta/dt, .) with delta = x - Phi_dt(y), and one extra
  candidate follows Phi exactly, reading the previous slice by linear
  interpolation.  Constants are then exact fixed points and transport
  along Phi is free, which the expansive backward semigroup needs.

Forward steps solve w = a + dt*L(., ., w) (implicit in u); backward steps
use the exact inverse a = w - dt*L(., ., w).  For models affine in u both
are closed form and run in compiled sweeps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, prange

from .errors import WindowExhausted
from .model import CircleDomain, HamiltonianModel, drift_velocity, lagrangian, signed_arc

# an old system TBB only makes numba fall back to another threading layer
warnings.filterwarnings("ignore", message="The TBB threading layer")

FLOW_SUBSTEPS = 16
RULES = ("midpoint", "drift")


def default_rule(model: HamiltonianModel) -> str:
    return "drift" if model.is_affine else "midpoint"


def drift_flow(model: HamiltonianModel, x: np.ndarray, t: float,
               substeps: int = FLOW_SUBSTEPS) -> np.ndarray:
    """Lifted positions after time t of the zero-momentum motion (RK4)."""
    y = np.array(x, dtype=float, copy=True)
    if t == 0.0:
        return y
    h = t / substeps
    for _ in range(substeps):
        k1 = drift_velocity(model, y)
        k2 = drift_velocity(model, y + 0.5 * h * k1)
        k3 = drift_velocity(model, y + 0.5 * h * k2)
        k4 = drift_velocity(model, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


@dataclass(frozen=True)
class NodeSet:
    """Sorted positions on the circle; contains the uniform grid of ``domain``."""

    domain: CircleDomain
    positions: np.ndarray
    grid_nodes: np.ndarray

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def circumference(self) -> float:
        return self.domain.circumference

    @property
    def is_uniform(self) -> bool:
        return self.n == self.domain.n_points

    @classmethod
    def uniform(cls, domain: CircleDomain) -> "NodeSet":
        return _uniform_nodes(domain)

    @classmethod
    def with_extras(cls, domain: CircleDomain, extras) -> "NodeSet":
        extras = np.mod(np.atleast_1d(np.asarray(extras, dtype=float)), domain.circumference)
        if extras.size == 0:
            return cls.uniform(domain)
        grid = domain.x
        near = np.abs(signed_arc(grid[domain.nearest_index(extras)], extras,
                                 domain.circumference)) < 1e-12
        extras = np.unique(extras[~near])
        pos = np.concatenate([grid, extras])
        order = np.argsort(pos, kind="stable")
        pos = pos[order]
        keep = np.ones(pos.size, dtype=bool)
        keep[1:] = np.diff(pos) > 0
        order, pos = order[keep], pos[keep]
        rank = np.empty(order.max() + 1, dtype=np.int64)
        rank[order] = np.arange(order.size)
        grid_nodes = rank[: domain.n_points]
        return cls(domain, pos, grid_nodes)

    def node_of(self, position: float) -> int | None:
        """Index of the node at ``position`` (to 1e-12), or None."""
        p = float(np.mod(position, self.circumference))
        k = int(np.searchsorted(self.positions, p))
        for j in (k - 1, k, k + 1):
            j %= self.n
            if abs(signed_arc(self.positions[j], p, self.circumference)) < 1e-12:
                return j
        return None

    def bracket(self, points: np.ndarray):
        """(lo, hi, theta) for periodic linear interpolation at ``points``."""
        C = self.circumference
        p = np.mod(np.asarray(points, dtype=float), C)
        lo = (np.searchsorted(self.positions, p, side="right") - 1) % self.n
        hi = (lo + 1) % self.n
        gap = np.mod(self.positions[hi] - self.positions[lo], C)
        gap = np.where(gap == 0, C, gap)
        off = np.mod(p - self.positions[lo], C)
        theta = np.clip(off / gap, 0.0, 1.0)
        theta = np.where(off == 0, 0.0, theta)
        return lo.astype(np.int64), hi.astype(np.int64), theta

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        lo, hi, th = self.bracket(points)
        return (1 - th) * values[lo] + th * values[hi]


@lru_cache(maxsize=32)
def _uniform_nodes(domain: CircleDomain) -> NodeSet:
    pos = domain.x
    pos.setflags(write=False)
    idx = np.arange(domain.n_points)
    idx.setflags(write=False)
    return NodeSet(domain, pos, idx)


@dataclass(frozen=True)
class Stencil:
    """Candidate table for one step direction on one node set.

    Row i lists the nodes that may exchange value with node i: predecessors
    for forward steps, successors for backward steps.  ``cost`` is dt times
    the kinetic part L(., ., 0) when the model is affine in u; otherwise the
    chord data ``mid``/``vel`` feed a generic implicit solve.
    """

    direction: str
    rule: str
    dt: float
    rate: float | None
    indptr: np.ndarray
    idx: np.ndarray
    cost: np.ndarray | None
    mid: np.ndarray | None
    vel: np.ndarray | None
    interp_lo: np.ndarray | None
    interp_hi: np.ndarray | None
    interp_theta: np.ndarray | None
    interp_cost: np.ndarray | None
    edge_offset: np.ndarray
    radius: float

    @property
    def affine(self) -> bool:
        return self.rate is not None

    @property
    def has_drift_candidate(self) -> bool:
        return self.interp_lo is not None


class Geometry:
    """Per (model, nodes, dt, rule) positions of the zero-momentum motion."""

    def __init__(self, model: HamiltonianModel, nodes: NodeSet, dt: float, rule: str):
        if rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if rule == "drift" and not model.is_affine:
            raise ValueError("the drift rule needs a model affine in u")
        self.model, self.nodes, self.dt, self.rule = model, nodes, float(dt), rule
        x = nodes.positions
        if rule == "drift":
            self.image = drift_flow(model, x, self.dt)
            self.half = drift_flow(model, x, 0.5 * self.dt)
        else:
            self.image = x
            self.half = x

    def edge_terms(self, start: np.ndarray, end: np.ndarray):
        """Displacement, midpoint and velocity of steps start -> end (node indices)."""
        C = self.nodes.circumference
        x = self.nodes.positions
        if self.rule == "drift":
            delta = signed_arc(self.image[start], x[end], C)
            mid = self.half[start] + 0.5 * delta
            vel = drift_velocity(self.model, mid) + delta / self.dt
        else:
            delta = signed_arc(x[start], x[end], C)
            mid = x[start] + 0.5 * delta
            vel = delta / self.dt
        return delta, mid, vel

    def kinetic(self, mid: np.ndarray, vel: np.ndarray) -> np.ndarray:
        return self.dt * lagrangian(self.model, mid, vel, 0.0)


def build_stencil(model: HamiltonianModel, nodes: NodeSet, dt: float, v_max: float | None,
                  direction: str, rule: str | None = None) -> Stencil:
    """Candidate table with window radius v_max*dt (None: every node)."""
    rule = default_rule(model) if rule is None else rule
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    geo = Geometry(model, nodes, dt, rule)
    C = nodes.circumference
    n = nodes.n
    radius = np.inf if v_max is None else float(v_max) * dt
    x = nodes.positions

    rows, cols, deltas = [], [], []
    chunk = max(1, 2_000_000 // n)
    for r0 in range(0, n, chunk):
        r = np.arange(r0, min(n, r0 + chunk))
        if direction == "forward":
            D = signed_arc(geo.image[None, :], x[r, None], C)
        else:
            D = signed_arc(geo.image[r, None], x[None, :], C)
        ri, ci = np.nonzero(np.abs(D) <= radius + 1e-12)
        rows.append(r[ri])
        cols.append(ci)
        deltas.append(D[ri, ci])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols).astype(np.int64)
    deltas = np.concatenate(deltas)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])

    start, end = (cols, rows) if direction == "forward" else (rows, cols)
    _, mid, vel = geo.edge_terms(start, end)
    edge = np.abs(deltas) >= radius - 0.5 * nodes.domain.dx if np.isfinite(radius) \
        else np.zeros(deltas.size, dtype=bool)

    rate = model.u_rate if model.is_affine else None
    cost = geo.kinetic(mid, vel) if rate is not None else None

    lo = hi = th = icost = None
    if rule == "drift":
        if direction == "forward":
            source = drift_flow(model, x, -dt)
            zmid = drift_flow(model, x, -0.5 * dt)
        else:
            source = geo.image
            zmid = geo.half
        lo, hi, th = nodes.bracket(source)
        icost = geo.kinetic(zmid, drift_velocity(model, zmid))

    return Stencil(direction, rule, float(dt), rate, indptr, cols,
                   None if cost is None else np.ascontiguousarray(cost),
                   None if rate is not None else mid, None if rate is not None else vel,
                   lo, hi, th, icost, edge, radius)


@lru_cache(maxsize=16)
def uniform_stencil(model: HamiltonianModel, domain: CircleDomain, dt: float,
                    v_max: float | None, direction: str, rule: str) -> Stencil:
    return build_stencil(model, NodeSet.uniform(domain), dt, v_max, direction, rule)


@njit(cache=True, parallel=True)
def _sweep_min(prev, indptr, idx, cost, gain, use_interp, lo, hi, th, icost, out, ptr):
    n = out.size
    for i in prange(n):
        best = np.inf
        arg = -2
        for k in range(indptr[i], indptr[i + 1]):
            val = prev[idx[k]] + cost[k]
            if val < best:
                best = val
                arg = idx[k]
        if use_interp:
            t = th[i]
            val = (1.0 - t) * prev[lo[i]] + t * prev[hi[i]] + icost[i]
            if val < best:
                best = val
                arg = -1
        out[i] = best * gain
        ptr[i] = arg


@njit(cache=True, parallel=True)
def _sweep_max(prev, indptr, idx, cost, gain, use_interp, lo, hi, th, icost, out, ptr):
    n = out.size
    for i in prange(n):
        best = -np.inf
        arg = -2
        for k in range(indptr[i], indptr[i + 1]):
            val = gain * prev[idx[k]] - cost[k]
            if val > best:
                best = val
                arg = idx[k]
        if use_interp:
            t = th[i]
            val = gain * ((1.0 - t) * prev[lo[i]] + t * prev[hi[i]]) - icost[i]
            if val > best:
                best = val
                arg = -1
        out[i] = best
        ptr[i] = arg


def _implicit_forward(model, a, mid, vel, dt, tol=1e-13, max_iter=200):
    """Solve w = a + dt*L(mid, vel, w) by fixed-point iteration (dt*lam < 1/2)."""
    w = a + dt * lagrangian(model, mid, vel, a)
    for _ in range(max_iter):
        w_new = a + dt * lagrangian(model, mid, vel, w)
        if np.max(np.abs(w_new - w), initial=0.0) <= tol * (1 + np.max(np.abs(w_new), initial=0.0)):
            return w_new
        w = w_new
    return w


def _candidate_values(model, stencil, prev_vals, k_idx, mid=None, vel=None, cost=None):
    """Values a node receives from the given candidates (no reduction)."""
    dt = stencil.dt
    if stencil.affine:
        rate = stencil.rate
        if stencil.direction == "forward":
            return (prev_vals + cost) / (1.0 + rate * dt)
        return (1.0 + rate * dt) * prev_vals - cost
    if stencil.direction == "forward":
        return _implicit_forward(model, prev_vals, mid, vel, dt)
    return prev_vals - dt * lagrangian(model, mid, vel, prev_vals)


def _reduce_rows(values, indptr, idx, better):
    """Row-wise best value and argmin/argmax node (ties: smallest node index)."""
    n = indptr.size - 1
    out = np.empty(n)
    ptr = np.full(n, -2, dtype=np.int64)
    for i in range(n):
        a, b = indptr[i], indptr[i + 1]
        if a == b:
            continue
        seg = values[a:b]
        k = int(np.argmin(seg)) if better == "min" else int(np.argmax(seg))
        out[i] = seg[k]
        ptr[i] = idx[a + k]
    return out, ptr


class Sweeper:
    """Applies one direction's step repeatedly on a fixed node set."""

    def __init__(self, model: HamiltonianModel, nodes: NodeSet, stencil: Stencil,
                 geometry: Geometry | None = None):
        self.model = model
        self.nodes = nodes
        self.stencil = stencil
        self._geo = geometry

    @property
    def geometry(self) -> Geometry:
        if self._geo is None:
            self._geo = Geometry(self.model, self.nodes, self.stencil.dt, self.stencil.rule)
        return self._geo

    @property
    def better(self) -> str:
        return "min" if self.stencil.direction == "forward" else "max"

    def step(self, prev: np.ndarray):
        """Full step from a slice reached everywhere; returns (values, pointers)."""
        s = self.stencil
        n = self.nodes.n
        out = np.empty(n)
        ptr = np.empty(n, dtype=np.int64)
        if s.affine:
            use_interp = s.has_drift_candidate
            dummy_i = np.zeros(1, dtype=np.int64)
            dummy_f = np.zeros(1)
            args = (s.interp_lo, s.interp_hi, s.interp_theta, s.interp_cost) if use_interp \
                else (dummy_i, dummy_i, dummy_f, dummy_f)
            if s.direction == "forward":
                gain = 1.0 / (1.0 + s.rate * s.dt)
                _sweep_min(prev, s.indptr, s.idx, s.cost, gain, use_interp, *args, out, ptr)
            else:
                gain = 1.0 + s.rate * s.dt
                _sweep_max(prev, s.indptr, s.idx, s.cost, gain, use_interp, *args, out, ptr)
            return out, ptr
        vals = _candidate_values(self.model, s, prev[s.idx], s.idx, mid=s.mid, vel=s.vel)
        return _reduce_rows(vals, s.indptr, s.idx, self.better)

    def masked_step(self, prev: np.ndarray, reached: np.ndarray):
        """Step from a slice reached only on ``reached``; unreached rows fall back
        to a search over every reached node."""
        s = self.stencil
        n = self.nodes.n
        if not reached.any():
            raise WindowExhausted("no reached node to step from")
        keep = reached[s.idx]
        rows = np.repeat(np.arange(n), np.diff(s.indptr))[keep]
        idx = s.idx[keep]
        if s.affine:
            vals = _candidate_values(self.model, s, prev[idx], idx, cost=s.cost[keep])
        else:
            vals = _candidate_values(self.model, s, prev[idx], idx, mid=s.mid[keep], vel=s.vel[keep])

        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        out, ptr = _reduce_rows(vals, indptr, idx, self.better)
        has = np.diff(indptr) > 0

        if s.has_drift_candidate:
            lo, hi, th = s.interp_lo, s.interp_hi, s.interp_theta
            ok = reached[lo] & ((th == 0) | reached[hi])
            pv = np.where(ok, (1 - th) * np.where(reached[lo], prev[lo], 0.0)
                          + th * np.where(reached[hi], prev[hi], 0.0), 0.0)
            if s.direction == "forward":
                cand = (pv + s.interp_cost) / (1.0 + s.rate * s.dt)
                take = ok & (~has | (cand < out))
            else:
                cand = (1.0 + s.rate * s.dt) * pv - s.interp_cost
                take = ok & (~has | (cand > out))
            out = np.where(take, cand, out)
            ptr = np.where(take, -1, ptr)
            has = has | ok

        missing = np.flatnonzero(~has)
        if missing.size:
            src = np.flatnonzero(reached)
            geo = self.geometry
            chunk = max(1, 1_000_000 // src.size)
            for c0 in range(0, missing.size, chunk):
                rows_m = missing[c0:c0 + chunk]
                tgt = np.repeat(rows_m, src.size)
                srcs = np.tile(src, rows_m.size)
                start, end = (srcs, tgt) if s.direction == "forward" else (tgt, srcs)
                _, mid, vel = geo.edge_terms(start, end)
                if s.affine:
                    v = _candidate_values(self.model, s, prev[srcs], srcs,
                                          cost=geo.kinetic(mid, vel))
                else:
                    v = _candidate_values(self.model, s, prev[srcs], srcs, mid=mid, vel=vel)
                v = v.reshape(rows_m.size, src.size)
                k = np.argmin(v, axis=1) if self.better == "min" else np.argmax(v, axis=1)
                out[rows_m] = v[np.arange(rows_m.size), k]
                ptr[rows_m] = src[k]
        return out, ptr

    def best_from(self, position: float, prev: np.ndarray, reached: np.ndarray | None = None):
        """Optimal one-step exchange for an arbitrary position.

        Returns (value, partner position, partner node or None).  For forward
        steps the partner is the predecessor; for backward steps the successor.
        """
        s = self.stencil
        geo = self.geometry
        model = self.model
        nodes = self.nodes
        C = nodes.circumference
        x = nodes.positions
        pos = np.array([float(position)])
        reached = np.ones(nodes.n, dtype=bool) if reached is None else reached
        src = np.flatnonzero(reached)
        dt = s.dt

        if s.rule == "drift":
            if s.direction == "forward":
                delta = signed_arc(geo.image[src], pos[0], C)
                mid = geo.half[src] + 0.5 * delta
            else:
                img = drift_flow(model, pos, dt)[0]
                delta = signed_arc(img, x[src], C)
                mid = drift_flow(model, pos, 0.5 * dt)[0] + 0.5 * delta
            vel = drift_velocity(model, mid) + delta / dt
        else:
            if s.direction == "forward":
                delta = signed_arc(x[src], pos[0], C)
                mid = x[src] + 0.5 * delta
            else:
                delta = signed_arc(pos[0], x[src], C)
                mid = pos[0] + 0.5 * delta
            vel = delta / dt
        inside = np.abs(delta) <= s.radius + 1e-12
        if inside.any():
            src, mid, vel = src[inside], mid[inside], vel[inside]
        if s.affine:
            vals = _candidate_values(model, s, prev[src], src, cost=geo.kinetic(mid, vel))
        else:
            vals = _candidate_values(model, s, prev[src], src, mid=mid, vel=vel)
        k = int(np.argmin(vals)) if self.better == "min" else int(np.argmax(vals))
        best, partner, node = float(vals[k]), float(x[src[k]]), int(src[k])

        if s.rule == "drift":
            if s.direction == "forward":
                partner_pos = drift_flow(model, pos, -dt)[0]
                zmid = drift_flow(model, pos, -0.5 * dt)
            else:
                partner_pos = drift_flow(model, pos, dt)[0]
                zmid = drift_flow(model, pos, 0.5 * dt)
            lo, hi, th = nodes.bracket(np.array([partner_pos]))
            lo, hi, th = int(lo[0]), int(hi[0]), float(th[0])
            if reached[lo] and (th == 0 or reached[hi]):
                pv = (1 - th) * prev[lo] + (th * prev[hi] if th > 0 else 0.0)
                icost = float(geo.kinetic(zmid, drift_velocity(model, zmid))[0])
                if s.direction == "forward":
                    cand = (pv + icost) / (1.0 + s.rate * dt)
                    if cand < best:
                        best, partner, node = cand, partner_pos, (lo if th == 0 else None)
                else:
                    cand = (1.0 + s.rate * dt) * pv - icost
                    if cand > best:
                        best, partner, node = cand, partner_pos, (lo if th == 0 else None)
        return best, partner, node
