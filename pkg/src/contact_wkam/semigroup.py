"""Lax-Oleinik semigroups on grid functions and their fixed points.

T- propagates a function forward in time by inf over forward actions and
is non-expansive; T+ uses sup over backward actions and may expand sup
distances by e^{lam t}.  One step of either is one sweep of the same kernel
that builds action fields, started from a slice that is finite everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._kernel import NodeSet, Sweeper, default_rule, uniform_stencil
from .action import DEFAULT_V_MAX, _check_dt
from .model import CircleDomain, GridFunction, HamiltonianModel, hamiltonian

TOL_FIX = 1e-4


def _sweeper(model: HamiltonianModel, domain: CircleDomain, dt: float, v_max, operator: str,
             rule: str | None) -> Sweeper:
    rule = default_rule(model) if rule is None else rule
    direction = {"minus": "forward", "plus": "backward"}[operator]
    st = uniform_stencil(model, domain, float(dt), v_max, direction, rule)
    return Sweeper(model, NodeSet.uniform(domain), st)


def _apply(model, phi: GridFunction, dt, operator, n=1, v_max=DEFAULT_V_MAX, rule=None):
    _check_dt(model, dt)
    sw = _sweeper(model, phi.domain, dt, v_max, operator, rule)
    v = np.array(phi.values)
    for _ in range(n):
        v, _ = sw.step(v)
    return GridFunction(phi.domain, v)


def step_minus(model: HamiltonianModel, phi: GridFunction, dt: float, *, n: int = 1,
               v_max: float | None = DEFAULT_V_MAX, rule: str | None = None) -> GridFunction:
    """T-_{n dt} phi."""
    return _apply(model, phi, dt, "minus", n, v_max, rule)


def step_plus(model: HamiltonianModel, phi: GridFunction, dt: float, *, n: int = 1,
              v_max: float | None = DEFAULT_V_MAX, rule: str | None = None) -> GridFunction:
    """T+_{n dt} phi."""
    return _apply(model, phi, dt, "plus", n, v_max, rule)


@dataclass(frozen=True)
class SemigroupRun:
    """Record of iterating T- or T+ to a fixed point."""

    operator: str
    initial: GridFunction
    dt: float
    result: GridFunction
    iterations: int
    converged: bool
    residual: float
    verify_residual: float
    monotone: bool
    history: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {"operator": self.operator, "iterations": int(self.iterations),
                "residual": float(self.residual), "converged": bool(self.converged)}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def _solve(model, phi0: GridFunction, dt, t_max, operator, tol_fix, verify_stride, history_every,
           v_max, rule) -> SemigroupRun:
    _check_dt(model, dt)
    sw = _sweeper(model, phi0.domain, dt, v_max, operator, rule)
    n_max = int(round(t_max / dt))
    v = np.array(phi0.values)
    history = []
    iterations = 0
    residual = np.inf
    monotone = True
    converged = False
    for k in range(n_max):
        new, _ = sw.step(v)
        residual = float(np.max(np.abs(new - v))) / dt
        if operator == "plus":
            monotone &= bool(np.all(new <= v + 1e-12))
        else:
            monotone &= bool(np.all(new >= v - 1e-12))
        if residual < tol_fix:
            converged = True
            break
        v = new
        iterations += 1
        if history_every and iterations % history_every == 0:
            history.append(GridFunction(phi0.domain, v))
    stride = max(1, int(round(1.0 / dt))) if verify_stride is None else int(verify_stride)
    w = v
    for _ in range(stride):
        w, _ = sw.step(w)
    verify = float(np.max(np.abs(w - v))) / (stride * dt)
    return SemigroupRun(operator, phi0, float(dt), GridFunction(phi0.domain, v), iterations,
                        converged, float(residual), verify, monotone, history)


def solve_backward(model: HamiltonianModel, phi0: GridFunction, dt: float, t_max: float, *,
                   tol_fix: float = TOL_FIX, verify_stride: int | None = None,
                   history_every: int = 0, v_max: float | None = DEFAULT_V_MAX,
                   rule: str | None = None) -> SemigroupRun:
    """Iterate T- from phi0 until the update per unit time is below ``tol_fix``.

    ``iterations`` counts the updates that were still above tolerance, so a
    fixed point as input reports 0.  ``verify_residual`` is the change per
    unit time over ``verify_stride`` further steps (default: one time unit).
    """
    return _solve(model, phi0, dt, t_max, "minus", tol_fix, verify_stride, history_every,
                  v_max, rule)


def solve_forward(model: HamiltonianModel, phi0: GridFunction, dt: float, t_max: float, *,
                  tol_fix: float = TOL_FIX, verify_stride: int | None = None,
                  history_every: int = 0, v_max: float | None = DEFAULT_V_MAX,
                  rule: str | None = None) -> SemigroupRun:
    """Iterate T+ from phi0; ``monotone`` reports whether iterates never rose."""
    return _solve(model, phi0, dt, t_max, "plus", tol_fix, verify_stride, history_every,
                  v_max, rule)


class FixedPointCheck(NamedTuple):
    is_fixed: bool
    residual: float


def is_fixed_point(model: HamiltonianModel, u: GridFunction, operator: str, dt: float,
                   stride: int = 1, tol: float = TOL_FIX, *, v_max: float | None = DEFAULT_V_MAX,
                   rule: str | None = None) -> FixedPointCheck:
    """Apply ``stride`` steps; the residual is the sup change per unit time."""
    if operator not in ("minus", "plus"):
        raise ValueError("operator must be 'minus' or 'plus'")
    out = _apply(model, u, dt, operator, stride, v_max, rule)
    r = out.sup_distance(u) / (stride * dt)
    return FixedPointCheck(bool(r < tol), float(r))


def hj_residual(model: HamiltonianModel, u: GridFunction, slope_tol: float | None = None):
    """max of H(x, Du, u) over points where both one-sided slopes agree.

    Returns (residual, mask of the points used).
    """
    left, right = u.one_sided_slopes()
    tol = 10 * u.domain.dx if slope_tol is None else slope_tol
    smooth = np.abs(left - right) <= tol
    H = hamiltonian(model, u.x, 0.5 * (left + right), u.values)
    res = float(np.max(H[smooth])) if smooth.any() else float("nan")
    return res, smooth
